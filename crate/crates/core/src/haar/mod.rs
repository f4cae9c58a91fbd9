//! Orthonormal Haar-like wavelet transforms on grids of arbitrary (non-dyadic)
//! size.
//!
//! The forward transform repeatedly splits the current low-pass block into
//! pairwise averages and differences along every axis, storing the result in
//! place: after scale `s` the top-left block of extent `axis_scales[d][0]`
//! along each axis holds the approximation, everything else in the previous
//! block holds details of scale `s`. A trailing partial block is averaged
//! with a weight proportional to the number of original samples it covers,
//! so every coefficient is an exact mean (or a difference of means) of the
//! input. Rows of the resulting analysis matrix are mutually orthogonal; the
//! renormalization factors `R[i] = 1 / |row i|` turn it into an orthonormal
//! change of basis.

mod matrices;

pub use matrices::{TransformMatrices, MATRIX_SIZE_CAP};

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{ArrayViewMutD, Axis, IxDyn, Slice};

use crate::error::{Error, Result};
use crate::grid_image::io::{read_rawf, write_rawf, RawArray};

/// Renormalization exponent used throughout the optimizer.
pub const DEFAULT_RHO: f64 = 1.0;

/// `ceil(log2(max K_i))`, the number of forward steps.
pub fn max_scale(shape: &[usize]) -> usize {
    let k = shape.iter().copied().max().unwrap_or(1);
    if k <= 1 {
        0
    } else {
        (usize::BITS - (k - 1).leading_zeros()) as usize
    }
}

// Relative coverage of the trailing coefficient of a block of length `k`
// whose coefficients each summarize `2^(scale-1)` original samples.
fn border_weight(original_len: usize, k: usize, scale: usize) -> Option<f64> {
    let span = 1usize << (scale - 1);
    if original_len == k * span {
        None
    } else {
        Some(original_len as f64 / span as f64 - (k - 1) as f64)
    }
}

fn forward_lane(x: &[f64], out: &mut [f64], original_len: usize, scale: usize) {
    let k = x.len();
    let n_low = k.div_ceil(2);
    let pairs = k / 2;
    let (low, detail) = out.split_at_mut(n_low);
    for i in 0..pairs {
        low[i] = 0.5 * (x[2 * i] + x[2 * i + 1]);
    }
    if k % 2 == 0 {
        if let Some(delta) = border_weight(original_len, k, scale) {
            low[pairs - 1] = (x[k - 2] + delta * x[k - 1]) / (1.0 + delta);
        }
    } else {
        low[n_low - 1] = x[k - 1];
    }
    for i in 0..pairs {
        detail[i] = x[2 * i] - low[i];
    }
}

fn backward_lane(
    coeffs: &[f64],
    out: &mut [f64],
    n_low: usize,
    original_len: usize,
    scale: usize,
) -> Result<()> {
    let k = coeffs.len();
    let pairs = k / 2;
    let (low, detail) = coeffs.split_at(n_low);
    for i in 0..pairs {
        out[2 * i] = low[i] + detail[i];
        out[2 * i + 1] = 2.0 * low[i] - out[2 * i];
    }
    if k % 2 == 0 {
        if let Some(delta) = border_weight(original_len, k, scale) {
            if delta <= 0.0 {
                return Err(Error::InconsistentScales(format!(
                    "border weight {delta} for length {k} at scale {scale}"
                )));
            }
            out[k - 1] = ((1.0 + delta) * low[pairs - 1] - out[k - 2]) / delta;
        }
    } else {
        out[k - 1] = low[n_low - 1];
    }
    Ok(())
}

fn check_axis(arr: &ArrayViewMutD<f64>, axis: usize) -> Result<()> {
    if axis >= arr.ndim() {
        return Err(Error::InvalidArgument(format!(
            "axis {axis} out of range for a {}-axis array",
            arr.ndim()
        )));
    }
    Ok(())
}

/// One forward step along `axis` at scale `scale >= 1`, applied to every lane
/// of `arr` (the current low-pass block). Prepends the new low-band length to
/// `axis_scales[axis]`.
pub fn haar_forward_1d_step(
    arr: &mut ArrayViewMutD<f64>,
    axis: usize,
    original_len: usize,
    scale: usize,
    axis_scales: &mut [Vec<usize>],
) -> Result<()> {
    check_axis(arr, axis)?;
    if scale == 0 {
        return Err(Error::InvalidArgument("scales start at 1".into()));
    }
    let k = arr.len_of(Axis(axis));
    if k > 1 {
        let mut buf = vec![0.0; k];
        let mut out = vec![0.0; k];
        for mut lane in arr.lanes_mut(Axis(axis)) {
            buf.iter_mut().zip(lane.iter()).for_each(|(b, v)| *b = *v);
            forward_lane(&buf, &mut out, original_len, scale);
            lane.iter_mut().zip(&out).for_each(|(v, o)| *v = *o);
        }
    }
    axis_scales[axis].insert(0, k.div_ceil(2));
    Ok(())
}

/// Exact inverse of [`haar_forward_1d_step`]. `arr` is the block whose
/// extent along `axis` equals `axis_scales[axis][1]`; pops the leading entry.
pub fn haar_backward_1d_step(
    arr: &mut ArrayViewMutD<f64>,
    axis: usize,
    original_len: usize,
    scale: usize,
    axis_scales: &mut [Vec<usize>],
) -> Result<()> {
    check_axis(arr, axis)?;
    let w = &axis_scales[axis];
    if w.len() < 2 {
        return Err(Error::InconsistentScales(format!(
            "axis {axis} has no finer level to reconstruct"
        )));
    }
    let (n_low, k) = (w[0], w[1]);
    if arr.len_of(Axis(axis)) != k || n_low != k.div_ceil(2) {
        return Err(Error::InconsistentScales(format!(
            "axis {axis}: block length {} with scales {w:?}",
            arr.len_of(Axis(axis))
        )));
    }
    if k > 1 {
        let mut buf = vec![0.0; k];
        let mut out = vec![0.0; k];
        for mut lane in arr.lanes_mut(Axis(axis)) {
            buf.iter_mut().zip(lane.iter()).for_each(|(b, v)| *b = *v);
            backward_lane(&buf, &mut out, n_low, original_len, scale)?;
            lane.iter_mut().zip(&out).for_each(|(v, o)| *v = *o);
        }
    }
    axis_scales[axis].remove(0);
    Ok(())
}

/// In-place multiscale coefficient array.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPyramid {
    pub coeffs: Vec<f64>,
    /// Per axis, the low-band lengths from the coarsest scale to the
    /// original length.
    pub axis_scales: Vec<Vec<usize>>,
    pub rho: f64,
    pub source_shape: Vec<usize>,
}

/// Precomputed bookkeeping for one grid shape: scale lists, renormalization
/// factors and the scale of every coefficient.
#[derive(Clone, Debug)]
pub struct HaarPlan {
    shape: Vec<usize>,
    max_scale: usize,
    axis_scales: Vec<Vec<usize>>,
    renorm: Vec<f64>,
    // 0 marks an approximation coefficient, s >= 1 a detail of scale s
    band_scale: Vec<u32>,
}

impl HaarPlan {
    pub fn new(shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&k| k == 0) {
            return Err(Error::InvalidArgument(format!(
                "invalid wavelet shape {shape:?}"
            )));
        }
        let max_scale = max_scale(shape);
        let axis_scales = scale_lists(shape, max_scale);
        let (renorm, band_scale) = coefficient_tables(shape, max_scale, &axis_scales);
        Ok(Self {
            shape: shape.to_vec(),
            max_scale,
            axis_scales,
            renorm,
            band_scale,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.renorm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.renorm.is_empty()
    }

    pub fn max_scale(&self) -> usize {
        self.max_scale
    }

    pub fn axis_scales(&self) -> &[Vec<usize>] {
        &self.axis_scales
    }

    /// `R[i] = 1 / |row i of M_FWT|`.
    pub fn renormalization(&self) -> &[f64] {
        &self.renorm
    }

    /// Scale of each coefficient: `None` for approximations.
    pub fn band_scale(&self, index: usize) -> Option<usize> {
        match self.band_scale[index] {
            0 => None,
            s => Some(s as usize),
        }
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::SizeMismatch {
                expected: self.len(),
                found: n,
            });
        }
        Ok(())
    }

    /// Forward transform into a caller-provided buffer.
    pub fn forward_into(&self, x: &[f64], rho: f64, out: &mut [f64]) -> Result<()> {
        self.check_len(x.len())?;
        self.check_len(out.len())?;
        out.copy_from_slice(x);
        let mut arr = ArrayViewMutD::from_shape(IxDyn(&self.shape), out)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let mut w: Vec<Vec<usize>> = self.shape.iter().map(|&k| vec![k]).collect();
        for s in 1..=self.max_scale {
            let block: Vec<usize> = w.iter().map(|l| l[0]).collect();
            let mut view = arr.slice_each_axis_mut(|ax| Slice::from(0..block[ax.axis.index()]));
            for d in 0..self.shape.len() {
                haar_forward_1d_step(&mut view, d, self.shape[d], s, &mut w)?;
            }
        }
        debug_assert_eq!(w, self.axis_scales);
        if rho != 0.0 {
            for (c, r) in out.iter_mut().zip(&self.renorm) {
                *c *= r.powf(rho);
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64], rho: f64) -> Result<WaveletPyramid> {
        let mut coeffs = vec![0.0; x.len()];
        self.forward_into(x, rho, &mut coeffs)?;
        Ok(WaveletPyramid {
            coeffs,
            axis_scales: self.axis_scales.clone(),
            rho,
            source_shape: self.shape.clone(),
        })
    }

    /// Inverse transform of raw coefficients laid out by this plan.
    pub fn inverse_into(&self, coeffs: &[f64], rho: f64, out: &mut [f64]) -> Result<()> {
        self.check_len(coeffs.len())?;
        self.check_len(out.len())?;
        out.copy_from_slice(coeffs);
        if rho != 0.0 {
            for (c, r) in out.iter_mut().zip(&self.renorm) {
                *c /= r.powf(rho);
            }
        }
        let mut arr = ArrayViewMutD::from_shape(IxDyn(&self.shape), out)
            .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        let mut w = self.axis_scales.clone();
        for s in (1..=self.max_scale).rev() {
            let block: Vec<usize> = w.iter().map(|l| l[1]).collect();
            let mut view = arr.slice_each_axis_mut(|ax| Slice::from(0..block[ax.axis.index()]));
            for d in 0..self.shape.len() {
                haar_backward_1d_step(&mut view, d, self.shape[d], s, &mut w)?;
            }
        }
        Ok(())
    }

    pub fn inverse(&self, pyramid: &WaveletPyramid) -> Result<Vec<f64>> {
        self.check_pyramid(pyramid)?;
        let mut out = vec![0.0; pyramid.coeffs.len()];
        self.inverse_into(&pyramid.coeffs, pyramid.rho, &mut out)?;
        Ok(out)
    }

    fn check_pyramid(&self, p: &WaveletPyramid) -> Result<()> {
        if p.source_shape != self.shape {
            return Err(Error::ShapeMismatch(format!(
                "pyramid of shape {:?} given to a plan for {:?}",
                p.source_shape, self.shape
            )));
        }
        if p.axis_scales != self.axis_scales {
            return Err(Error::InconsistentScales(format!(
                "expected {:?}, found {:?}",
                self.axis_scales, p.axis_scales
            )));
        }
        self.check_len(p.coeffs.len())
    }

    /// Zeroes every detail coefficient whose scale is strictly below `scale`.
    pub fn zero_below_scale_in_place(&self, coeffs: &mut [f64], scale: usize) -> Result<()> {
        self.check_scale(scale)?;
        self.check_len(coeffs.len())?;
        for (c, &s) in coeffs.iter_mut().zip(&self.band_scale) {
            if s != 0 && (s as usize) < scale {
                *c = 0.0;
            }
        }
        Ok(())
    }

    pub fn check_scale(&self, scale: usize) -> Result<()> {
        let max = self.max_scale.max(1);
        if !(1..=max).contains(&scale) {
            return Err(Error::ScaleOutOfRange { scale, max });
        }
        Ok(())
    }
}

// Scale lists after a full forward pass, e.g. [[1, 2, 3], [1, 2, 4]] for (3, 4).
fn scale_lists(shape: &[usize], max_scale: usize) -> Vec<Vec<usize>> {
    shape
        .iter()
        .map(|&k| {
            let mut list = vec![k];
            for _ in 0..max_scale {
                let next = list[0].div_ceil(2);
                list.insert(0, next);
            }
            list
        })
        .collect()
}

// Low-band length of `axis` before step `s` (1-based); level 0 is the input.
fn level_len(axis_scales: &[Vec<usize>], axis: usize, level: usize, max_scale: usize) -> usize {
    axis_scales[axis][max_scale - level]
}

// Squared row norms of the 1D analysis operator after each number of steps,
// obtained by running the lane transform on the identity.
fn axis_row_norms(len: usize, max_scale: usize) -> Vec<Vec<f64>> {
    let mut columns: Vec<Vec<f64>> = (0..len)
        .map(|j| (0..len).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut norms = vec![vec![1.0; len]];
    let mut k = len;
    let mut out = vec![0.0; len];
    for s in 1..=max_scale {
        if k > 1 {
            for col in columns.iter_mut() {
                forward_lane(&col[..k], &mut out[..k], len, s);
                col[..k].copy_from_slice(&out[..k]);
            }
        }
        let mut next = norms[s - 1].clone();
        for (i, n) in next.iter_mut().enumerate().take(k) {
            *n = columns.iter().map(|c| c[i] * c[i]).sum();
        }
        norms.push(next);
        k = k.div_ceil(2);
    }
    norms
}

// Renormalization factors and band scales for every coefficient. The
// coefficient at multi-index i was last written by step s*, the largest s
// whose input block contains i; its analysis row is the tensor product of the
// per-axis rows after s* steps.
fn coefficient_tables(
    shape: &[usize],
    max_scale: usize,
    axis_scales: &[Vec<usize>],
) -> (Vec<f64>, Vec<u32>) {
    let per_axis: Vec<Vec<Vec<f64>>> = shape.iter().map(|&k| axis_row_norms(k, max_scale)).collect();
    let n: usize = shape.iter().product();
    let mut renorm = Vec::with_capacity(n);
    let mut band = Vec::with_capacity(n);
    for idx in crate::grid_image::GridIndices::new(shape) {
        let inside = |level: usize| {
            idx.iter()
                .enumerate()
                .all(|(d, &i)| i < level_len(axis_scales, d, level, max_scale))
        };
        let last = (1..=max_scale).rev().find(|&s| inside(s - 1)).unwrap_or(0);
        let norm_sq: f64 = idx
            .iter()
            .enumerate()
            .map(|(d, &i)| per_axis[d][last][i])
            .product();
        renorm.push(1.0 / norm_sq.sqrt());
        let label = if last == 0 || (last == max_scale && inside(max_scale)) {
            0
        } else {
            last as u32
        };
        band.push(label);
    }
    (renorm, band)
}

/// Forward transform of `x` (row-major over `shape`), renormalized by `R^rho`.
pub fn fwt(x: &[f64], shape: &[usize], rho: f64) -> Result<WaveletPyramid> {
    HaarPlan::new(shape)?.forward(x, rho)
}

/// Inverse of [`fwt`] at the pyramid's own `rho`.
pub fn iwt(pyramid: &WaveletPyramid) -> Result<Vec<f64>> {
    HaarPlan::new(&pyramid.source_shape)?.inverse(pyramid)
}

/// Copy of `pyramid` with all detail coefficients of scale `< scale` zeroed.
pub fn zero_below_scale(pyramid: &WaveletPyramid, scale: usize) -> Result<WaveletPyramid> {
    let plan = HaarPlan::new(&pyramid.source_shape)?;
    plan.check_pyramid(pyramid)?;
    let mut out = pyramid.clone();
    plan.zero_below_scale_in_place(&mut out.coeffs, scale)?;
    Ok(out)
}

/// Writes the coefficients as RAWF and the scale bookkeeping to `sidecar`:
/// a `rho <value>` line followed by one line of space-separated low-band
/// lengths per axis.
pub fn save_pyramid(pyramid: &WaveletPyramid, coeffs_path: &Path, sidecar: &Path) -> Result<()> {
    write_rawf(
        coeffs_path,
        &RawArray::new(pyramid.source_shape.clone(), pyramid.coeffs.clone())?,
    )?;
    let mut text = format!("rho {}\n", pyramid.rho);
    for axis in &pyramid.axis_scales {
        let line: Vec<String> = axis.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(text, "{}", line.join(" "));
    }
    std::fs::write(sidecar, text).map_err(|e| Error::io(sidecar, e))
}

pub fn load_pyramid(coeffs_path: &Path, sidecar: &Path) -> Result<WaveletPyramid> {
    let raw = read_rawf(coeffs_path)?;
    let text = std::fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let rho = lines
        .next()
        .and_then(|l| l.strip_prefix("rho "))
        .and_then(|v| v.trim().parse::<f64>().ok())
        .ok_or_else(|| Error::MalformedHeader("pyramid sidecar must start with `rho <value>`".into()))?;
    let axis_scales = lines
        .map(|l| {
            l.split_ascii_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| Error::MalformedHeader(format!("bad scale entry {t:?}")))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let pyramid = WaveletPyramid {
        coeffs: raw.data,
        axis_scales,
        rho,
        source_shape: raw.shape,
    };
    HaarPlan::new(&pyramid.source_shape)?.check_pyramid(&pyramid)?;
    Ok(pyramid)
}

#[cfg(test)]
mod tests;
