//! Registration sweeps on the two-squares pair.

use std::time::Instant;

use crate::datasets::ToyPair;
use crate::error::Result;
use crate::geodesic::ControlGrid;
use crate::metrics::{roi_residual, sd_jacobian, SweepRow};
use crate::objective::deform;
use crate::optimizer::{register, OptimizerConfig, RunResult};

/// Kernel widths of the kernel sweep.
pub const TOY_KERNEL_WIDTHS: [f64; 3] = [1.7, 2.0, 3.0];

/// Registers the toy source onto its target and measures the result.
pub fn toy_run(pair: &ToyPair, config: &OptimizerConfig) -> Result<(SweepRow, RunResult)> {
    let started = Instant::now();
    let run = register(&pair.source, &pair.target, config)?;
    let runtime_ms = started.elapsed().as_secs_f64() * 1e3;
    let (warped, map) = deform(&pair.source, &run.momenta[0], &config.model()?)?;
    let grid = ControlGrid::covering(pair.source.shape(), config.sigma_g)?;
    let row = SweepRow {
        sigma_g: config.sigma_g,
        k_g: grid.len(),
        s0: run.initial_scale,
        delta_j: warped.ssd(&pair.target)?,
        delta_j_roi: roi_residual(&warped, &pair.target, &pair.roi)?,
        sd_j: sd_jacobian(&map)?,
        iterations: run.trace.len(),
        runtime_ms,
    };
    Ok((row, run))
}

/// Every starting scale from 1 to the coarsest at one kernel width.
pub fn toy_s0_sweep(pair: &ToyPair, base: &OptimizerConfig) -> Result<Vec<SweepRow>> {
    let grid = ControlGrid::covering(pair.source.shape(), base.sigma_g)?;
    let top = crate::haar::max_scale(grid.shape()).max(1);
    (1..=top)
        .map(|s0| {
            let cfg = OptimizerConfig {
                s0: Some(s0),
                ..base.clone()
            };
            Ok(toy_run(pair, &cfg)?.0)
        })
        .collect()
}

/// Single-scale and default multiscale runs for each kernel width.
pub fn toy_kernel_sweep(pair: &ToyPair, base: &OptimizerConfig, widths: &[f64]) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &sigma_g in widths {
        for s0 in [Some(1), None] {
            let cfg = OptimizerConfig {
                sigma_g,
                s0,
                ..base.clone()
            };
            rows.push(toy_run(pair, &cfg)?.0);
        }
    }
    Ok(rows)
}
