use super::ScalarImage;
use crate::error::{Error, Result};

/// Multilinear sampler over a `D`-dimensional image.
///
/// Points outside the domain are clamped to the boundary before
/// interpolation. At points lying exactly on a grid plane the spatial
/// derivative is the mean of the two one-sided slopes (a clamped side
/// contributes a zero slope), which is what a central difference sees.
#[derive(Clone, Copy, Debug)]
pub struct Sampler<'a, const D: usize> {
    data: &'a [f64],
    shape: [usize; D],
    strides: [usize; D],
}

#[derive(Clone, Copy, Debug)]
struct Cell<const D: usize> {
    lo: [usize; D],
    hi: [usize; D],
    t: [f64; D],
    // coordinate lies in [0, K - 1] along the axis
    inside: [bool; D],
}

impl<'a, const D: usize> Sampler<'a, D> {
    pub fn new(img: &'a ScalarImage) -> Result<Self> {
        if img.ndim() != D {
            return Err(Error::ShapeMismatch(format!(
                "{}D image sampled as {D}D",
                img.ndim()
            )));
        }
        let st = img.strides();
        Ok(Self {
            data: img.data(),
            shape: std::array::from_fn(|a| img.shape()[a]),
            strides: std::array::from_fn(|a| st[a]),
        })
    }

    pub fn shape(&self) -> [usize; D] {
        self.shape
    }

    fn locate(&self, p: &[f64; D]) -> Cell<D> {
        let mut cell = Cell {
            lo: [0; D],
            hi: [0; D],
            t: [0.0; D],
            inside: [false; D],
        };
        for a in 0..D {
            let top = (self.shape[a] - 1) as f64;
            let x = p[a];
            cell.inside[a] = (0.0..=top).contains(&x);
            let x = x.clamp(0.0, top);
            let lo = (x.floor() as usize).min(self.shape[a] - 1);
            let hi = (lo + 1).min(self.shape[a] - 1);
            cell.lo[a] = lo;
            cell.hi[a] = hi;
            cell.t[a] = if hi > lo { x - lo as f64 } else { 0.0 };
        }
        cell
    }

    /// Calls `f(flat_index, weight)` for each of the `2^D` corners.
    fn for_corners(&self, cell: &Cell<D>, mut f: impl FnMut(usize, f64)) {
        for mask in 0..(1usize << D) {
            let mut idx = 0;
            let mut w = 1.0;
            for a in 0..D {
                if mask >> a & 1 == 1 {
                    idx += cell.hi[a] * self.strides[a];
                    w *= cell.t[a];
                } else {
                    idx += cell.lo[a] * self.strides[a];
                    w *= 1.0 - cell.t[a];
                }
            }
            f(idx, w);
        }
    }

    pub fn value(&self, p: &[f64; D]) -> f64 {
        let cell = self.locate(p);
        let mut v = 0.0;
        self.for_corners(&cell, |i, w| v += w * self.data[i]);
        v
    }

    /// Interpolation weights at `p`, reported as `(flat_index, weight)` pairs.
    pub fn scatter_weights(&self, p: &[f64; D], f: impl FnMut(usize, f64)) {
        let cell = self.locate(p);
        self.for_corners(&cell, f);
    }

    // Interpolated difference I[.., upper, ..] - I[.., lower, ..] along `axis`,
    // with the other axes interpolated at `cell`.
    fn axis_difference(&self, cell: &Cell<D>, axis: usize, lower: usize, upper: usize) -> f64 {
        let mut diff = 0.0;
        for mask in 0..(1usize << D) {
            if mask >> axis & 1 == 1 {
                continue;
            }
            let mut base = 0;
            let mut w = 1.0;
            for b in (0..D).filter(|&b| b != axis) {
                if mask >> b & 1 == 1 {
                    base += cell.hi[b] * self.strides[b];
                    w *= cell.t[b];
                } else {
                    base += cell.lo[b] * self.strides[b];
                    w *= 1.0 - cell.t[b];
                }
            }
            let s = self.strides[axis];
            diff += w * (self.data[base + upper * s] - self.data[base + lower * s]);
        }
        diff
    }

    pub fn value_and_gradient(&self, p: &[f64; D]) -> (f64, [f64; D]) {
        let cell = self.locate(p);
        let mut v = 0.0;
        self.for_corners(&cell, |i, w| v += w * self.data[i]);
        let mut grad = [0.0; D];
        for a in 0..D {
            if !cell.inside[a] || self.shape[a] == 1 {
                continue;
            }
            let lo = cell.lo[a];
            grad[a] = if cell.t[a] > 0.0 {
                self.axis_difference(&cell, a, lo, cell.hi[a])
            } else {
                let right = if lo + 1 < self.shape[a] {
                    self.axis_difference(&cell, a, lo, lo + 1)
                } else {
                    0.0
                };
                let left = if lo > 0 {
                    self.axis_difference(&cell, a, lo - 1, lo)
                } else {
                    0.0
                };
                0.5 * (left + right)
            };
        }
        (v, grad)
    }
}

/// Multilinear interpolation of `img` at `point` (one coordinate per axis).
pub fn interpolate(img: &ScalarImage, point: &[f64]) -> Result<f64> {
    if point.len() != img.ndim() {
        return Err(Error::ShapeMismatch(format!(
            "{}-coordinate point on a {}D image",
            point.len(),
            img.ndim()
        )));
    }
    if point.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("interpolation point"));
    }
    Ok(match img.ndim() {
        2 => Sampler::<2>::new(img)?.value(&[point[0], point[1]]),
        _ => Sampler::<3>::new(img)?.value(&[point[0], point[1], point[2]]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img2(rows: &[&[f64]]) -> ScalarImage {
        let shape = vec![rows.len(), rows[0].len()];
        ScalarImage::new(shape, rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn constant_image() {
        let img = ScalarImage::filled(vec![4, 5], 5.0).unwrap();
        assert_eq!(interpolate(&img, &[1.3, 2.7]).unwrap(), 5.0);
        assert_eq!(interpolate(&img, &[-10.0, 99.0]).unwrap(), 5.0);
    }

    #[test]
    fn linear_along_an_edge() {
        let img = img2(&[&[0.0, 1.0], &[0.0, 1.0]]);
        assert!((interpolate(&img, &[0.0, 0.5]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn clamps_outside_points() {
        let img = img2(&[&[3.0, 1.0, 2.0], &[7.0, 4.0, 0.5]]);
        assert_eq!(interpolate(&img, &[-3.2, 0.0]).unwrap(), 3.0);
        assert_eq!(interpolate(&img, &[5.0, 5.0]).unwrap(), 0.5);
    }

    #[test]
    fn three_d_trilinear_center() {
        let data: Vec<f64> = (0..8).map(|v| v as f64).collect();
        let img = ScalarImage::new(vec![2, 2, 2], data).unwrap();
        assert!((interpolate(&img, &[0.5, 0.5, 0.5]).unwrap() - 3.5).abs() < 1e-15);
    }

    #[test]
    fn gradient_inside_cell_and_on_nodes() {
        let img = img2(&[&[0.0, 1.0, 4.0], &[0.0, 2.0, 8.0]]);
        let s = Sampler::<2>::new(&img).unwrap();
        let (_, g) = s.value_and_gradient(&[0.5, 0.5]);
        assert!((g[1] - 1.5).abs() < 1e-15);
        assert!((g[0] - 0.5).abs() < 1e-15);
        // on a node: mean of left slope (1) and right slope (3) on row 0
        let (_, g) = s.value_and_gradient(&[0.0, 1.0]);
        assert!((g[1] - 2.0).abs() < 1e-15);
        // clamped side has zero slope
        let (_, g) = s.value_and_gradient(&[0.0, 0.0]);
        assert!((g[1] - 0.5).abs() < 1e-15);
        let (_, g) = s.value_and_gradient(&[-1.0, 0.5]);
        assert_eq!(g[0], 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let img = img2(&[&[0.3, 1.0, 4.0, 2.0], &[0.0, 2.5, 8.0, 1.0], &[1.0, 1.0, 0.0, 3.0]]);
        let s = Sampler::<2>::new(&img).unwrap();
        let h = 1e-6;
        for p in [[0.3, 1.7], [1.0, 2.0], [2.0, 0.0], [1.5, 3.0], [0.0, 0.25]] {
            let (_, g) = s.value_and_gradient(&p);
            for a in 0..2 {
                let mut up = p;
                let mut dn = p;
                up[a] += h;
                dn[a] -= h;
                let fd = (s.value(&up) - s.value(&dn)) / (2.0 * h);
                assert!((fd - g[a]).abs() < 1e-8, "{p:?} axis {a}: {fd} vs {}", g[a]);
            }
        }
    }

    proptest! {
        #[test]
        fn exact_at_nodes(data in proptest::collection::vec(-5.0f64..5.0, 12), i in 0usize..3, j in 0usize..4) {
            let img = ScalarImage::new(vec![3, 4], data).unwrap();
            let v = interpolate(&img, &[i as f64, j as f64]).unwrap();
            prop_assert!((v - img.get(&[i, j])).abs() < 1e-14);
        }

        #[test]
        fn affine_between_nodes(data in proptest::collection::vec(-5.0f64..5.0, 12), t in 0.0f64..1.0, i in 0usize..3, j in 0usize..3) {
            let img = ScalarImage::new(vec![3, 4], data).unwrap();
            let v = interpolate(&img, &[i as f64, j as f64 + t]).unwrap();
            let expect = (1.0 - t) * img.get(&[i, j]) + t * img.get(&[i, j + 1]);
            prop_assert!((v - expect).abs() < 1e-12);
        }
    }
}
