//! Registration / atlas cost and its exact gradients.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesic::adjoint::{inverse_flow_vjp, shoot_vjp};
use crate::geodesic::{
    grid_points, inverse_path, shoot, KernelConfig, KernelField, MomentumField, State,
    DEFAULT_STEPS,
};
use crate::grid_image::{Sampler, ScalarImage, VectorField};

pub const DEFAULT_SIGMA_EPS: f64 = 0.1;

/// Data-term noise scale; the data term is `SSD / sigma_eps^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostConfig {
    pub sigma_eps: f64,
}

impl CostConfig {
    pub fn new(sigma_eps: f64) -> Result<Self> {
        if !(sigma_eps > 0.0 && sigma_eps.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma_eps must be positive, got {sigma_eps}"
            )));
        }
        Ok(Self { sigma_eps })
    }

    pub fn data_weight(&self) -> f64 {
        1.0 / (self.sigma_eps * self.sigma_eps)
    }
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            sigma_eps: DEFAULT_SIGMA_EPS,
        }
    }
}

/// Everything the forward model needs besides the parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cost: CostConfig,
    pub kernel: KernelConfig,
    pub steps: usize,
}

impl ModelConfig {
    pub fn new(sigma_g: f64) -> Result<Self> {
        Ok(Self {
            cost: CostConfig::default(),
            kernel: KernelConfig::new(sigma_g)?,
            steps: DEFAULT_STEPS,
        })
    }
}

/// Cost split into its parts, with the raw per-subject SSDs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub energy: f64,
    pub data_term: f64,
    pub reg_term: f64,
    pub ssd: Vec<f64>,
}

impl CostBreakdown {
    /// Mean SSD over subjects.
    pub fn mean_residual(&self) -> f64 {
        self.ssd.iter().sum::<f64>() / self.ssd.len().max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct GradientBundle {
    pub cost: CostBreakdown,
    pub grad_alpha: Vec<MomentumField>,
    pub grad_template: ScalarImage,
}

struct SubjectEval {
    ssd: f64,
    kinetic: f64,
    grad_alpha: Option<Vec<f64>>,
    // `(flat index, weight)` scatter of dE/dJ onto the template
    grad_template: Option<Vec<f64>>,
}

fn check_inputs(
    template: &ScalarImage,
    momenta: &[MomentumField],
    targets: &[ScalarImage],
    cfg: &ModelConfig,
) -> Result<()> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("at least one target is required".into()));
    }
    if momenta.len() != targets.len() {
        return Err(Error::SizeMismatch {
            expected: targets.len(),
            found: momenta.len(),
        });
    }
    if cfg.steps == 0 {
        return Err(Error::InvalidArgument("at least one time step is required".into()));
    }
    for (m, t) in momenta.iter().zip(targets) {
        template.check_same_shape(t)?;
        if m.dim() != template.ndim() {
            return Err(Error::ShapeMismatch(format!(
                "{}D momenta for a {}D image",
                m.dim(),
                template.ndim()
            )));
        }
    }
    Ok(())
}

fn evaluate_subject<const D: usize>(
    template: &ScalarImage,
    momenta: &MomentumField,
    target: &ScalarImage,
    cfg: &ModelConfig,
    with_gradient: bool,
) -> Result<SubjectEval> {
    let c0 = momenta.grid().points::<D>()?;
    let a0 = momenta.to_points::<D>()?;
    let traj = shoot(&c0, &a0, &cfg.kernel, cfg.steps)?;
    let kinetic = traj.initial().kinetic_energy(&cfg.kernel);
    let nodes = grid_points::<D>(template.shape());
    let path = inverse_path(&traj, &nodes)?;
    let sampler = Sampler::<D>::new(template)?;
    let x0 = &path.x[0];
    let tdata = target.data();
    let mut ssd = 0.0;
    if !with_gradient {
        for (p, t) in x0.iter().zip(tdata) {
            let r = sampler.value(p) - t;
            ssd += r * r;
        }
        return Ok(SubjectEval {
            ssd,
            kinetic,
            grad_alpha: None,
            grad_template: None,
        });
    }
    let w = 2.0 * cfg.cost.data_weight();
    let mut xhat = Vec::with_capacity(x0.len());
    let mut gt = vec![0.0; template.len()];
    for (p, t) in x0.iter().zip(tdata) {
        let (v, g) = sampler.value_and_gradient(p);
        let r = v - t;
        ssd += r * r;
        let dj = w * r;
        xhat.push(std::array::from_fn::<f64, D, _>(|a| dj * g[a]));
        sampler.scatter_weights(p, |i, wt| gt[i] += dj * wt);
    }
    let (ey, eh) = inverse_flow_vjp(&traj, &path, xhat);
    let mut grad: State<D> = shoot_vjp(&traj, ey, eh);
    // regularity term: gradient 2 K alpha
    let field = KernelField::new(traj.initial(), &cfg.kernel);
    for (g, c) in grad.a.iter_mut().zip(&c0) {
        let v = field.velocity(c);
        for a in 0..D {
            g[a] += 2.0 * v[a];
        }
    }
    if grad.a.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("momentum gradient"));
    }
    Ok(SubjectEval {
        ssd,
        kinetic,
        grad_alpha: Some(grad.a.into_iter().flatten().collect()),
        grad_template: Some(gt),
    })
}

fn evaluate_all(
    template: &ScalarImage,
    momenta: &[MomentumField],
    targets: &[ScalarImage],
    cfg: &ModelConfig,
    with_gradient: bool,
) -> Result<Vec<SubjectEval>> {
    check_inputs(template, momenta, targets, cfg)?;
    momenta
        .par_iter()
        .zip(targets.par_iter())
        .map(|(m, t)| match template.ndim() {
            2 => evaluate_subject::<2>(template, m, t, cfg, with_gradient),
            _ => evaluate_subject::<3>(template, m, t, cfg, with_gradient),
        })
        .collect()
}

fn breakdown(evals: &[SubjectEval], cfg: &ModelConfig) -> CostBreakdown {
    let ssd: Vec<f64> = evals.iter().map(|e| e.ssd).collect();
    let data_term = cfg.cost.data_weight() * ssd.iter().sum::<f64>();
    let reg_term = evals.iter().map(|e| e.kinetic).sum::<f64>();
    CostBreakdown {
        energy: data_term + reg_term,
        data_term,
        reg_term,
        ssd,
    }
}

/// `sum_i SSD(target_i, template o Phi_i^{-1}) / sigma_eps^2 + |v_0,i|_V^2`.
pub fn cost(
    template: &ScalarImage,
    momenta: &[MomentumField],
    targets: &[ScalarImage],
    cfg: &ModelConfig,
) -> Result<CostBreakdown> {
    let evals = evaluate_all(template, momenta, targets, cfg, false)?;
    Ok(breakdown(&evals, cfg))
}

/// Cost together with its exact gradients with respect to every subject's
/// momenta and to the template.
pub fn gradient(
    template: &ScalarImage,
    momenta: &[MomentumField],
    targets: &[ScalarImage],
    cfg: &ModelConfig,
) -> Result<GradientBundle> {
    let evals = evaluate_all(template, momenta, targets, cfg, true)?;
    let cost = breakdown(&evals, cfg);
    let mut gt = vec![0.0; template.len()];
    let mut grad_alpha = Vec::with_capacity(evals.len());
    for (e, m) in evals.into_iter().zip(momenta) {
        for (acc, v) in gt.iter_mut().zip(e.grad_template.unwrap_or_default()) {
            *acc += v;
        }
        grad_alpha.push(MomentumField::new(
            m.grid().clone(),
            e.grad_alpha.unwrap_or_default(),
        )?);
    }
    Ok(GradientBundle {
        cost,
        grad_alpha,
        grad_template: ScalarImage::new(template.shape().to_vec(), gt)?,
    })
}

/// `template o Phi^{-1}` for one set of momenta, with the map itself.
pub fn deform(
    template: &ScalarImage,
    momenta: &MomentumField,
    cfg: &ModelConfig,
) -> Result<(ScalarImage, VectorField)> {
    fn run<const D: usize>(
        template: &ScalarImage,
        momenta: &MomentumField,
        cfg: &ModelConfig,
    ) -> Result<(ScalarImage, VectorField)> {
        let traj = shoot(
            &momenta.grid().points::<D>()?,
            &momenta.to_points::<D>()?,
            &cfg.kernel,
            cfg.steps,
        )?;
        let map = crate::geodesic::integrate_flow(
            &traj,
            template.shape(),
            crate::geodesic::Direction::Inverse,
        )?;
        Ok((crate::geodesic::warp_image(template, &map)?, map))
    }
    if momenta.dim() != template.ndim() {
        return Err(Error::ShapeMismatch(format!(
            "{}D momenta for a {}D image",
            momenta.dim(),
            template.ndim()
        )));
    }
    match template.ndim() {
        2 => run::<2>(template, momenta, cfg),
        _ => run::<3>(template, momenta, cfg),
    }
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` with
/// `h = 1e-5 max(1, |x_i|)` at each listed coordinate.
pub fn fd_gradient_oracle(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    coords: &[usize],
) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let h = 1e-5 * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let dn = f(&probe);
            probe[i] = x[i];
            (up - dn) / (2.0 * h)
        })
        .collect()
}
