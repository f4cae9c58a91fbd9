//! Deterministic synthetic images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geodesic::{ControlGrid, MomentumField};
use crate::grid_image::{GridIndices, RoiBox, ScalarImage};
use crate::objective::{deform, ModelConfig};

pub const DEFAULT_TOY_SIDE: usize = 50;
pub const MIN_TOY_SIDE: usize = 40;

/// Source and target of the two-squares experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyPair {
    pub source: ScalarImage,
    pub target: ScalarImage,
    /// The indentation plus a two-pixel margin.
    pub roi: RoiBox,
}

fn fill(img: &mut ScalarImage, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, v: f64) {
    for r in rows {
        for c in cols.clone() {
            img.set(&[r, c], v);
        }
    }
}

/// A 20x20 square that moves by (+8, +8) towards the top right and loses a
/// 4x2 notch from its top edge, next to a fixed 4x4 square.
///
/// Rows grow downwards, so "up" is decreasing row index.
pub fn make_toy_squares(side: usize) -> Result<ToyPair> {
    if side < MIN_TOY_SIDE {
        return Err(Error::InvalidArgument(format!(
            "toy images need a side of at least {MIN_TOY_SIDE}, got {side}"
        )));
    }
    let shape = vec![side, side];
    let mut source = ScalarImage::zeros(shape.clone())?;
    let mut target = ScalarImage::zeros(shape)?;
    fill(&mut source, side - 30..side - 10, 10..30, 1.0);
    fill(&mut target, side - 38..side - 18, 18..38, 1.0);
    fill(&mut target, side - 38..side - 36, 26..30, 0.0);
    for img in [&mut source, &mut target] {
        fill(img, side - 8..side - 4, side - 16..side - 12, 1.0);
    }
    let roi = RoiBox::new(vec![side - 40, 24], vec![side - 34, 32])?;
    Ok(ToyPair {
        source,
        target,
        roi,
    })
}

/// Smooth elliptical blob with a side lobe, centred in the domain.
pub fn base_blob(shape: &[usize]) -> Result<ScalarImage> {
    let centre: Vec<f64> = shape.iter().map(|&k| (k as f64 - 1.0) / 2.0).collect();
    let radius: Vec<f64> = shape
        .iter()
        .enumerate()
        .map(|(a, &k)| k as f64 * if a == 0 { 0.22 } else { 0.3 })
        .collect();
    let data = GridIndices::new(shape)
        .map(|idx| {
            let r2: f64 = idx
                .iter()
                .enumerate()
                .map(|(a, &i)| ((i as f64 - centre[a]) / radius[a]).powi(2))
                .sum();
            // lobe on the first axis' upper side
            let l2: f64 = idx
                .iter()
                .enumerate()
                .map(|(a, &i)| {
                    let off = if a == 0 { radius[0] * 0.9 } else { radius[a] * 0.4 };
                    ((i as f64 - centre[a] + off) / (radius[a] * 0.45)).powi(2)
                })
                .sum();
            let body = 1.0 / (1.0 + ((r2.sqrt() - 1.0) / 0.08).exp());
            let lobe = 1.0 / (1.0 + ((l2.sqrt() - 1.0) / 0.1).exp());
            body.max(lobe)
        })
        .collect();
    ScalarImage::new(shape.to_vec(), data)
}

/// Kernel width used to deform the population: a sixth of the shortest side.
pub fn population_kernel_width(shape: &[usize]) -> f64 {
    *shape.iter().min().unwrap_or(&6) as f64 / 6.0
}

/// Random momenta on the population control grid, uniform in
/// `[-deform_scale, deform_scale]` per component.
pub fn random_momenta(shape: &[usize], deform_scale: f64, rng: &mut ChaCha8Rng) -> Result<MomentumField> {
    let grid = ControlGrid::covering(shape, population_kernel_width(shape))?;
    let n = grid.len() * grid.ndim();
    let alphas = (0..n)
        .map(|_| deform_scale * rng.gen_range(-1.0..=1.0))
        .collect();
    MomentumField::new(grid, alphas)
}

/// `n` copies of [`base_blob`] under random geodesic deformations.
pub fn make_blob_population(
    n: usize,
    seed: u64,
    shape: &[usize],
    deform_scale: f64,
) -> Result<Vec<ScalarImage>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "a population needs at least 2 images, got {n}"
        )));
    }
    if !(deform_scale >= 0.0 && deform_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "deform_scale must be non-negative, got {deform_scale}"
        )));
    }
    let base = base_blob(shape)?;
    let cfg = ModelConfig::new(population_kernel_width(shape))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let m = random_momenta(shape, deform_scale, &mut rng)?;
            if deform_scale == 0.0 {
                return Ok(base.clone());
            }
            Ok(deform(&base, &m, &cfg)?.0)
        })
        .collect()
}

/// Intensity-weighted centroid.
pub fn centroid(img: &ScalarImage) -> Vec<f64> {
    let mut acc = vec![0.0; img.ndim()];
    let mut mass = 0.0;
    for (idx, v) in img.indices().zip(img.data()) {
        mass += v;
        for (a, i) in idx.iter().enumerate() {
            acc[a] += v * *i as f64;
        }
    }
    acc.iter().map(|s| s / mass).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::ControlGrid;
    use crate::grid_image::mean_image;

    fn count(img: &ScalarImage) -> usize {
        img.data().iter().filter(|&&v| v == 1.0).count()
    }

    #[test]
    fn toy_foreground_counts() {
        let pair = make_toy_squares(50).unwrap();
        assert_eq!(count(&pair.source), 416);
        assert_eq!(count(&pair.target), 408);
        assert!(pair
            .source
            .data()
            .iter()
            .chain(pair.target.data())
            .all(|&v| v == 0.0 || v == 1.0));
        assert_eq!(pair.roi.voxel_count(), 48);
    }

    #[test]
    fn small_square_unchanged_and_notch_in_roi() {
        let pair = make_toy_squares(50).unwrap();
        for r in 40..50 {
            for c in 32..40 {
                assert_eq!(pair.source.get(&[r, c]), pair.target.get(&[r, c]));
            }
        }
        // notch pixels are zero in the target and inside the roi
        for r in 12..14 {
            for c in 26..30 {
                assert_eq!(pair.target.get(&[r, c]), 0.0);
                assert!(pair.roi.contains(&[r, c]));
            }
        }
        assert_eq!(pair.target.get(&[14, 26]), 1.0);
        assert_eq!(pair.target.get(&[12, 25]), 1.0);
    }

    #[test]
    fn toy_grid_has_625_points() {
        let pair = make_toy_squares(DEFAULT_TOY_SIDE).unwrap();
        let grid = ControlGrid::covering(pair.source.shape(), 2.0).unwrap();
        assert_eq!(grid.len(), 625);
    }

    #[test]
    fn toy_side_limits() {
        assert!(make_toy_squares(39).is_err());
        let p = make_toy_squares(64).unwrap();
        assert_eq!(count(&p.source), 416);
        assert_eq!(count(&p.target), 408);
    }

    #[test]
    fn population_is_deterministic() {
        let a = make_blob_population(3, 7, &[24, 24], 1.0).unwrap();
        let b = make_blob_population(3, 7, &[24, 24], 1.0).unwrap();
        assert_eq!(a, b);
        let c = make_blob_population(3, 8, &[24, 24], 1.0).unwrap();
        assert_ne!(a, c);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn zero_scale_gives_copies() {
        let pop = make_blob_population(4, 1, &[20, 22], 0.0).unwrap();
        let base = base_blob(&[20, 22]).unwrap();
        assert!(pop.iter().all(|img| *img == base));
        assert!(make_blob_population(1, 1, &[20, 22], 0.0).is_err());
        assert!(make_blob_population(2, 1, &[20, 22], -1.0).is_err());
    }

    #[test]
    fn population_mean_keeps_the_centroid() {
        let shape = [32, 32];
        let pop = make_blob_population(10, 3, &shape, 1.0).unwrap();
        let mean = mean_image(&pop).unwrap();
        let base = centroid(&base_blob(&shape).unwrap());
        let got = centroid(&mean);
        for a in 0..2 {
            assert!((got[a] - base[a]).abs() < 0.5, "{got:?} vs {base:?}");
        }
        // the deformations are visible
        let b = base_blob(&shape).unwrap();
        assert!(pop.iter().all(|img| img.ssd(&b).unwrap() > 0.1));
    }

    #[test]
    fn blob_in_three_dimensions() {
        let b = base_blob(&[10, 12, 9]).unwrap();
        let (lo, hi) = b.min_max();
        assert!(lo < 0.01 && hi > 0.99);
    }
}
