//! Gradient descent on wavelet coefficients of the momenta with a
//! coarse-to-fine schedule that silences fine-scale details.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesic::{ControlGrid, KernelConfig, MomentumField, DEFAULT_STEPS};
use crate::grid_image::{mean_image, ScalarImage};
use crate::haar::{HaarPlan, DEFAULT_RHO};
use crate::objective::{cost, gradient, CostBreakdown, CostConfig, ModelConfig, DEFAULT_SIGMA_EPS};

/// Gradient norms below this fraction of the energy count as zero.
const STATIONARY_GRADIENT: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub sigma_g: f64,
    pub h0: f64,
    pub sigma_eps: f64,
    pub conv_threshold: f64,
    pub min_iters_per_scale: usize,
    /// Starting scale; `None` means one below the coarsest.
    pub s0: Option<usize>,
    pub max_iters: usize,
    pub steps: usize,
    pub freeze_template: bool,
    /// Relative residual decrease below which the scale is refined.
    pub refine_threshold: f64,
    pub max_halvings: usize,
    pub step_growth: f64,
    /// Optimize the momenta directly instead of their wavelet coefficients.
    pub bypass_wavelets: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            sigma_g: 2.0,
            h0: 0.01,
            sigma_eps: DEFAULT_SIGMA_EPS,
            conv_threshold: 1e-4,
            min_iters_per_scale: 5,
            s0: None,
            max_iters: 200,
            steps: DEFAULT_STEPS,
            freeze_template: false,
            refine_threshold: 0.01,
            max_halvings: 20,
            step_growth: 1.5,
            bypass_wavelets: false,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        positive("sigma_g", self.sigma_g)?;
        positive("h0", self.h0)?;
        positive("sigma_eps", self.sigma_eps)?;
        if !(self.conv_threshold >= 0.0 && self.refine_threshold >= 0.0) {
            return Err(Error::InvalidArgument("thresholds must be non-negative".into()));
        }
        if self.min_iters_per_scale == 0 {
            return Err(Error::InvalidArgument("min_iters_per_scale must be at least 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        if !(self.step_growth >= 1.0) {
            return Err(Error::InvalidArgument("step_growth must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            cost: CostConfig::new(self.sigma_eps)?,
            kernel: KernelConfig::new(self.sigma_g)?,
            steps: self.steps,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Register,
    Atlas,
}

/// One line of the optimization trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    #[serde(rename = "E")]
    pub energy: f64,
    pub data_term: f64,
    pub reg_term: f64,
    pub delta: f64,
    pub scale: usize,
    pub step: f64,
    pub step_template: f64,
    pub accepted: bool,
    pub ms: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    ExactMatch,
    Converged,
    Stalled,
    MaxIters,
}

/// `S - 1` once the residual stops dropping by `threshold` (relative) and
/// at least `min_iters` iterations were spent at `S`; otherwise `S`.
pub fn refine_scale(
    delta_prev: f64,
    delta_curr: f64,
    scale: usize,
    iters_at_scale: usize,
    min_iters: usize,
    threshold: f64,
) -> usize {
    if scale <= 1 || iters_at_scale < min_iters {
        return scale.max(1);
    }
    let decrease = if delta_prev > 0.0 {
        (delta_prev - delta_curr) / delta_prev
    } else {
        0.0
    };
    if decrease < threshold {
        scale - 1
    } else {
        scale
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchOutcome {
    /// Accepted multiple of the trial step, if any.
    pub factor: Option<f64>,
    pub energy: f64,
    pub halvings: usize,
}

/// Halves a trial step until `eval(factor)` drops strictly below `e0`.
pub fn backtrack(
    e0: f64,
    max_halvings: usize,
    mut eval: impl FnMut(f64) -> Result<f64>,
) -> Result<LineSearchOutcome> {
    let mut factor = 1.0;
    for halvings in 0..=max_halvings {
        // a step that blows up the geodesic is treated as too long
        let e = match eval(factor) {
            Ok(e) => e,
            Err(Error::NonFinite(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if e < e0 {
            return Ok(LineSearchOutcome {
                factor: Some(factor),
                energy: e,
                halvings,
            });
        }
        factor *= 0.5;
    }
    Ok(LineSearchOutcome {
        factor: None,
        energy: e0,
        halvings: max_halvings,
    })
}

struct Subject {
    /// Per momentum component: wavelet coefficients, or the component itself
    /// when wavelets are bypassed.
    beta: Vec<Vec<f64>>,
    momenta: MomentumField,
}

/// Optimizer state; drive it with [`Optimizer::step`] or [`Optimizer::run`].
pub struct Optimizer {
    config: OptimizerConfig,
    model: ModelConfig,
    mode: Mode,
    targets: Vec<ScalarImage>,
    template: ScalarImage,
    plan: HaarPlan,
    subjects: Vec<Subject>,
    scale: usize,
    iters_at_scale: usize,
    iter: usize,
    current: CostBreakdown,
    delta0: f64,
    deltas: Vec<f64>,
    step_momenta: Option<f64>,
    step_template: Option<f64>,
    trace: Vec<TraceRecord>,
    started: Instant,
    stop: Option<StopReason>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub template: ScalarImage,
    pub momenta: Vec<MomentumField>,
    pub trace: Vec<TraceRecord>,
    pub delta0: f64,
    pub delta_final: f64,
    pub stop: StopReason,
    pub max_scale: usize,
    pub initial_scale: usize,
}

impl Optimizer {
    /// Registration: deform `source` onto `target` with the template frozen.
    pub fn register(source: &ScalarImage, target: &ScalarImage, config: &OptimizerConfig) -> Result<Self> {
        let mut config = config.clone();
        config.freeze_template = true;
        Self::new(source.clone(), vec![target.clone()], config, Mode::Register)
    }

    /// Atlas estimation starting from the mean of `images`.
    pub fn atlas(images: &[ScalarImage], config: &OptimizerConfig) -> Result<Self> {
        Self::atlas_from(mean_image(images)?, images, config)
    }

    /// Atlas estimation from a given initial template.
    pub fn atlas_from(template: ScalarImage, images: &[ScalarImage], config: &OptimizerConfig) -> Result<Self> {
        if images.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "atlas estimation needs at least 2 images, got {}",
                images.len()
            )));
        }
        Self::new(template, images.to_vec(), config.clone(), Mode::Atlas)
    }

    fn new(template: ScalarImage, targets: Vec<ScalarImage>, config: OptimizerConfig, mode: Mode) -> Result<Self> {
        config.validate()?;
        let model = config.model()?;
        for t in &targets {
            template.check_same_shape(t)?;
        }
        let grid = ControlGrid::covering(template.shape(), config.sigma_g)?;
        let plan = HaarPlan::new(grid.shape())?;
        let top = plan.max_scale().max(1);
        let scale = match config.s0 {
            None => top.saturating_sub(1).max(1),
            Some(s) => {
                plan.check_scale(s)?;
                s
            }
        };
        let d = template.ndim();
        let subjects = targets
            .iter()
            .map(|_| Subject {
                beta: vec![vec![0.0; grid.len()]; d],
                momenta: MomentumField::zeros(grid.clone()),
            })
            .collect::<Vec<_>>();
        let momenta: Vec<MomentumField> = subjects.iter().map(|s| s.momenta.clone()).collect();
        let current = cost(&template, &momenta, &targets, &model)?;
        let delta0 = current.mean_residual();
        let stop = (delta0 == 0.0).then_some(StopReason::ExactMatch);
        Ok(Self {
            config,
            model,
            mode,
            targets,
            template,
            plan,
            subjects,
            scale,
            iters_at_scale: 0,
            iter: 0,
            current,
            delta0,
            deltas: vec![delta0],
            step_momenta: None,
            step_template: None,
            trace: Vec::new(),
            started: Instant::now(),
            stop,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn max_scale(&self) -> usize {
        self.plan.max_scale()
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn template(&self) -> &ScalarImage {
        &self.template
    }

    pub fn momenta(&self) -> Vec<MomentumField> {
        self.subjects.iter().map(|s| s.momenta.clone()).collect()
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn current(&self) -> &CostBreakdown {
        &self.current
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stop
    }

    /// Wavelet coefficients of every subject's momentum components.
    pub fn coefficients(&self) -> Vec<Vec<Vec<f64>>> {
        self.subjects.iter().map(|s| s.beta.clone()).collect()
    }

    /// Largest magnitude among detail coefficients finer than the current
    /// scale (always 0 when wavelets are bypassed).
    pub fn masked_detail_max(&self) -> f64 {
        if self.config.bypass_wavelets {
            return 0.0;
        }
        let mut m: f64 = 0.0;
        for s in &self.subjects {
            for comp in &s.beta {
                for (i, v) in comp.iter().enumerate() {
                    if matches!(self.plan.band_scale(i), Some(b) if b < self.scale) {
                        m = m.max(v.abs());
                    }
                }
            }
        }
        m
    }

    fn to_coefficients(&self, values: &[f64]) -> Result<Vec<f64>> {
        if self.config.bypass_wavelets {
            return Ok(values.to_vec());
        }
        let mut out = vec![0.0; values.len()];
        self.plan.forward_into(values, DEFAULT_RHO, &mut out)?;
        self.plan.zero_below_scale_in_place(&mut out, self.scale)?;
        Ok(out)
    }

    fn to_momenta(&self, grid: &ControlGrid, beta: &[Vec<f64>]) -> Result<MomentumField> {
        let mut m = MomentumField::zeros(grid.clone());
        let mut buf = vec![0.0; grid.len()];
        for (axis, comp) in beta.iter().enumerate() {
            if self.config.bypass_wavelets {
                m.set_component(axis, comp)?;
            } else {
                self.plan.inverse_into(comp, DEFAULT_RHO, &mut buf)?;
                m.set_component(axis, &buf)?;
            }
        }
        Ok(m)
    }

    /// One iteration: gradient, transform and silencing of the momentum
    /// gradient, backtracked update, residual bookkeeping and scale decision.
    pub fn step(&mut self) -> Result<&TraceRecord> {
        if self.stop.is_some() {
            return Err(Error::InvalidArgument("optimization already finished".into()));
        }
        let momenta = self.momenta();
        let g = gradient(&self.template, &momenta, &self.targets, &self.model)?;
        let e0 = g.cost.energy;
        let d = self.template.ndim();
        let mut dir_beta = Vec::with_capacity(self.subjects.len());
        let mut norm2_m = 0.0;
        for ga in &g.grad_alpha {
            let comps = (0..d)
                .map(|axis| self.to_coefficients(&ga.component(axis)))
                .collect::<Result<Vec<_>>>()?;
            norm2_m += comps.iter().flatten().map(|v| v * v).sum::<f64>();
            dir_beta.push(comps);
        }
        let update_template = !self.config.freeze_template;
        let norm2_t: f64 = if update_template {
            g.grad_template.data().iter().map(|v| v * v).sum()
        } else {
            0.0
        };
        // a block whose gradient is negligible next to the energy is skipped
        let trial = |carried: Option<f64>, norm2: f64| -> f64 {
            if norm2.sqrt() <= STATIONARY_GRADIENT * e0 {
                0.0
            } else {
                carried.unwrap_or(self.config.h0 * e0 / norm2)
            }
        };
        let h_m = trial(self.step_momenta, norm2_m);
        let h_t = trial(self.step_template, norm2_t);
        let grid = self.subjects[0].momenta.grid().clone();
        let mut energy = e0;
        self.current = g.cost.clone();

        let mut step_m = 0.0;
        if h_m > 0.0 {
            let mut best = None;
            let outcome = backtrack(energy, self.config.max_halvings, |factor| {
                let mut betas = Vec::with_capacity(self.subjects.len());
                let mut trial_momenta = Vec::with_capacity(self.subjects.len());
                for (s, dir) in self.subjects.iter().zip(&dir_beta) {
                    let beta: Vec<Vec<f64>> = s
                        .beta
                        .iter()
                        .zip(dir)
                        .map(|(b, gb)| b.iter().zip(gb).map(|(x, y)| x - factor * h_m * y).collect())
                        .collect();
                    trial_momenta.push(self.to_momenta(&grid, &beta)?);
                    betas.push(beta);
                }
                let c = cost(&self.template, &trial_momenta, &self.targets, &self.model)?;
                let e = c.energy;
                best = Some((betas, trial_momenta, c));
                Ok(e)
            })?;
            match outcome.factor {
                Some(f) => {
                    let (betas, momenta, c) = best.take().expect("accepted trial was evaluated");
                    for ((s, b), m) in self.subjects.iter_mut().zip(betas).zip(momenta) {
                        s.beta = b;
                        s.momenta = m;
                    }
                    energy = c.energy;
                    self.current = c;
                    step_m = f * h_m;
                    self.step_momenta = Some(step_m * self.config.step_growth);
                }
                None => self.step_momenta = None,
            }
        }

        let mut step_t = 0.0;
        if h_t > 0.0 {
            let momenta = self.momenta();
            let mut best = None;
            let outcome = backtrack(energy, self.config.max_halvings, |factor| {
                let mut tpl = self.template.clone();
                for (v, gv) in tpl.data_mut().iter_mut().zip(g.grad_template.data()) {
                    *v -= factor * h_t * gv;
                }
                let c = cost(&tpl, &momenta, &self.targets, &self.model)?;
                let e = c.energy;
                best = Some((tpl, c));
                Ok(e)
            })?;
            match outcome.factor {
                Some(f) => {
                    let (tpl, c) = best.take().expect("accepted trial was evaluated");
                    self.template = tpl;
                    self.current = c;
                    step_t = f * h_t;
                    self.step_template = Some(step_t * self.config.step_growth);
                }
                None => self.step_template = None,
            }
        }
        let accepted = step_m > 0.0 || step_t > 0.0;

        self.iter += 1;
        self.iters_at_scale += 1;
        let delta = self.current.mean_residual();
        let delta_prev = *self.deltas.last().unwrap_or(&self.delta0);
        self.deltas.push(delta);
        let scale_used = self.scale;
        let e_new = self.current.energy;

        let rel_change = if e0 > 0.0 { (e0 - e_new).abs() / e0 } else { 0.0 };
        if scale_used == 1 && (!accepted || rel_change < self.config.conv_threshold) {
            self.stop = Some(if accepted {
                StopReason::Converged
            } else {
                StopReason::Stalled
            });
        } else {
            let next = refine_scale(
                delta_prev,
                delta,
                self.scale,
                self.iters_at_scale,
                self.config.min_iters_per_scale,
                self.config.refine_threshold,
            );
            if next != self.scale {
                self.scale = next;
                self.iters_at_scale = 0;
            }
            if self.iter >= self.config.max_iters {
                self.stop = Some(StopReason::MaxIters);
            }
        }
        if self.stop.is_none() && self.iter >= self.config.max_iters {
            self.stop = Some(StopReason::MaxIters);
        }

        self.trace.push(TraceRecord {
            iter: self.iter,
            energy: e_new,
            data_term: self.current.data_term,
            reg_term: self.current.reg_term,
            delta,
            scale: scale_used,
            step: step_m,
            step_template: step_t,
            accepted,
            ms: self.started.elapsed().as_secs_f64() * 1e3,
        });
        Ok(self.trace.last().expect("just pushed"))
    }

    pub fn is_done(&self) -> bool {
        self.stop.is_some()
    }

    pub fn run(mut self) -> Result<RunResult> {
        let initial_scale = self.scale;
        while !self.is_done() {
            self.step()?;
        }
        Ok(RunResult {
            momenta: self.momenta(),
            delta_final: self.current.mean_residual(),
            stop: self.stop.unwrap_or(StopReason::MaxIters),
            max_scale: self.plan.max_scale(),
            initial_scale,
            delta0: self.delta0,
            template: self.template,
            trace: self.trace,
        })
    }
}

/// Registers `source` onto `target`.
pub fn register(source: &ScalarImage, target: &ScalarImage, config: &OptimizerConfig) -> Result<RunResult> {
    Optimizer::register(source, target, config)?.run()
}

/// Estimates a template and per-image momenta.
pub fn atlas(images: &[ScalarImage], config: &OptimizerConfig) -> Result<RunResult> {
    Optimizer::atlas(images, config)?.run()
}

/// Trace as line-delimited JSON.
pub fn trace_to_jsonl(trace: &[TraceRecord]) -> String {
    trace
        .iter()
        .map(|r| serde_json::to_string(r).expect("trace records serialize") + "\n")
        .collect()
}
