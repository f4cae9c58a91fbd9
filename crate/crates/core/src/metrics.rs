//! Evaluation metrics: residuals, windowed SSIM and Jacobian statistics.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_image::{GridIndices, RoiBox, ScalarImage, VectorField};

/// Side of the uniform SSIM window along every axis.
pub const SSIM_WINDOW: usize = 7;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// `delta_final / delta_initial`, or `None` when the images matched from
/// the start.
pub fn relative_residual(delta_final: f64, delta_initial: f64) -> Result<Option<f64>> {
    if !(delta_final >= 0.0 && delta_initial >= 0.0) || !delta_final.is_finite() || !delta_initial.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "residuals must be finite and non-negative, got {delta_final} and {delta_initial}"
        )));
    }
    if delta_initial == 0.0 {
        return Ok(None);
    }
    Ok(Some(delta_final / delta_initial))
}

/// Sum of squared differences over the voxels of `roi`.
pub fn roi_residual(a: &ScalarImage, b: &ScalarImage, roi: &RoiBox) -> Result<f64> {
    a.check_same_shape(b)?;
    roi.check_within(a.shape())?;
    Ok(a
        .indices()
        .zip(a.data().iter().zip(b.data()))
        .filter(|(idx, _)| roi.contains(idx))
        .map(|(_, (x, y))| (x - y).powi(2))
        .sum())
}

/// Sums over every full box of side `w` (clipped to the axis length).
/// Returns the reduced shape and the sums in row-major order.
fn box_sums(shape: &[usize], data: &[f64], w: &[usize]) -> (Vec<usize>, Vec<f64>) {
    let mut shape = shape.to_vec();
    let mut cur = data.to_vec();
    for axis in 0..shape.len() {
        let n = shape[axis];
        let out_n = n - w[axis] + 1;
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut next = vec![0.0; outer * out_n * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| cur[(o * n + k) * inner + i];
                let mut s: f64 = (0..w[axis]).map(at).sum();
                next[(o * out_n) * inner + i] = s;
                for k in 1..out_n {
                    s += at(k + w[axis] - 1) - at(k - 1);
                    next[(o * out_n + k) * inner + i] = s;
                }
            }
        }
        shape[axis] = out_n;
        cur = next;
    }
    (shape, cur)
}

/// Mean structural similarity over all uniform windows of side 7 that fit
/// inside the image. Window statistics use population (co)variances and the
/// dynamic range is taken over both images together.
pub fn ssim(a: &ScalarImage, b: &ScalarImage) -> Result<f64> {
    a.check_same_shape(b)?;
    let (lo_a, hi_a) = a.min_max();
    let (lo_b, hi_b) = b.min_max();
    let range = hi_a.max(hi_b) - lo_a.min(lo_b);
    // two identical constant images still need non-zero constants
    let l = if range > 0.0 { range } else { 1.0 };
    let c1 = (K1 * l).powi(2);
    let c2 = (K2 * l).powi(2);
    let c3 = c2 / 2.0;
    let w: Vec<usize> = a.shape().iter().map(|&k| k.min(SSIM_WINDOW)).collect();
    let np = w.iter().product::<usize>() as f64;
    let (x, y) = (a.data(), b.data());
    let sums = |f: &dyn Fn(usize) -> f64| {
        let v: Vec<f64> = (0..x.len()).map(f).collect();
        box_sums(a.shape(), &v, &w).1
    };
    let sx = sums(&|i| x[i]);
    let sy = sums(&|i| y[i]);
    let sxx = sums(&|i| x[i] * x[i]);
    let syy = sums(&|i| y[i] * y[i]);
    let sxy = sums(&|i| x[i] * y[i]);
    let mut total = 0.0;
    for k in 0..sx.len() {
        let (mx, my) = (sx[k] / np, sy[k] / np);
        let vx = (sxx[k] / np - mx * mx).max(0.0);
        let vy = (syy[k] / np - my * my).max(0.0);
        let cov = sxy[k] / np - mx * my;
        let (dx, dy) = (vx.sqrt(), vy.sqrt());
        let lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        let con = (2.0 * dx * dy + c2) / (vx + vy + c2);
        let st = (cov + c3) / (dx * dy + c3);
        total += lum * con * st;
    }
    Ok(total / sx.len() as f64)
}

/// Summary of the Jacobian determinants of a map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JacobianStats {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub nodes: usize,
}

impl JacobianStats {
    /// True when the map preserves orientation at every interior node.
    pub fn is_positive(&self) -> bool {
        self.min > 0.0
    }
}

/// Determinants of the central-difference Jacobian of a map given by its
/// values at every grid node, over interior nodes only.
pub fn jacobian_determinants(map: &VectorField) -> Result<Vec<f64>> {
    let shape = map.shape();
    let d = shape.len();
    if map.dim() != d {
        return Err(Error::ShapeMismatch(format!(
            "a map over a {d}-D grid needs {d}-vectors, got {}",
            map.dim()
        )));
    }
    if let Some(k) = shape.iter().find(|&&k| k < 3) {
        return Err(Error::InvalidArgument(format!(
            "Jacobian needs at least 3 nodes per axis, got {k} in {shape:?}"
        )));
    }
    let mut strides = vec![1; d];
    for a in (0..d.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * shape[a + 1];
    }
    let interior: Vec<usize> = shape.iter().map(|k| k - 2).collect();
    let mut out = Vec::with_capacity(interior.iter().product());
    let mut jac = DMatrix::<f64>::zeros(d, d);
    for idx in GridIndices::new(&interior) {
        let node: usize = idx.iter().zip(&strides).map(|(i, s)| (i + 1) * s).sum();
        for b in 0..d {
            let (plus, minus) = (map.node(node + strides[b]), map.node(node - strides[b]));
            for a in 0..d {
                jac[(a, b)] = (plus[a] - minus[a]) / 2.0;
            }
        }
        out.push(jac.determinant());
    }
    Ok(out)
}

pub fn jacobian_stats(map: &VectorField) -> Result<JacobianStats> {
    let dets = jacobian_determinants(map)?;
    let n = dets.len() as f64;
    let mean = dets.iter().sum::<f64>() / n;
    let var = dets.iter().map(|j| (j - mean).powi(2)).sum::<f64>() / n;
    let (min, max) = dets
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &j| (lo.min(j), hi.max(j)));
    Ok(JacobianStats {
        mean,
        sd: var.sqrt(),
        min,
        max,
        nodes: dets.len(),
    })
}

/// Standard deviation of the Jacobian determinant over interior nodes.
pub fn sd_jacobian(map: &VectorField) -> Result<f64> {
    Ok(jacobian_stats(map)?.sd)
}

/// Per-subject evaluation of a deformed template against its target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub total_residual: f64,
    /// `None` when the initial residual was zero.
    pub relative_residual: Option<f64>,
    pub roi_residual: Option<f64>,
    pub ssim: f64,
    pub sd_jacobian: Option<f64>,
    pub mean_jacobian: Option<f64>,
    pub min_jacobian: Option<f64>,
    pub runtime_ms: f64,
}

impl MetricReport {
    /// `map` is the sampling map used to produce `deformed`; maps on grids
    /// too small for central differences leave the Jacobian fields empty.
    pub fn evaluate(
        deformed: &ScalarImage,
        target: &ScalarImage,
        delta_initial: f64,
        roi: Option<&RoiBox>,
        map: Option<&VectorField>,
        runtime_ms: f64,
    ) -> Result<Self> {
        let total_residual = deformed.ssd(target)?;
        let jac = match map {
            Some(m) if m.shape().iter().all(|&k| k >= 3) => Some(jacobian_stats(m)?),
            _ => None,
        };
        Ok(Self {
            total_residual,
            relative_residual: relative_residual(total_residual, delta_initial)?,
            roi_residual: roi.map(|r| roi_residual(deformed, target, r)).transpose()?,
            ssim: ssim(deformed, target)?,
            sd_jacobian: jac.map(|j| j.sd),
            mean_jacobian: jac.map(|j| j.mean),
            min_jacobian: jac.map(|j| j.min),
            runtime_ms,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// One row of a registration sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma_g: f64,
    pub k_g: usize,
    pub s0: usize,
    pub delta_j: f64,
    pub delta_j_roi: f64,
    pub sd_j: f64,
    pub iterations: usize,
    pub runtime_ms: f64,
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
