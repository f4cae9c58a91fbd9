//! Kernel velocity fields, Hamiltonian shooting of control points and
//! momenta, flow integration and image warping.

pub(crate) mod adjoint;
mod cells;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_image::io::{read_rawf, write_rawf, RawArray};
use crate::grid_image::{GridIndices, Sampler, ScalarImage, VectorField};
pub(crate) use cells::CellList;

/// Default number of time steps over `[0, 1]`.
pub const DEFAULT_STEPS: usize = 20;

/// Kernel support radius in widths; the Gaussian is `exp(-16)` there.
pub const CUTOFF_WIDTHS: f64 = 4.0;

/// Gaussian value at the cutoff radius.
fn cutoff_floor() -> f64 {
    (-CUTOFF_WIDTHS * CUTOFF_WIDTHS).exp()
}

/// Gaussian kernel `exp(-|x - y|^2 / sigma^2)`, shifted down by its value at
/// the cutoff and rescaled so that it is 1 at 0 and falls continuously to 0
/// at the cutoff. Differs from the plain Gaussian by less than `exp(-16)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub sigma: f64,
}

impl KernelConfig {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "kernel width must be positive, got {sigma}"
            )));
        }
        Ok(Self { sigma })
    }

    #[inline]
    pub fn eval(&self, dist2: f64) -> f64 {
        let c = self.cutoff();
        if dist2 >= c * c {
            return 0.0;
        }
        let floor = cutoff_floor();
        ((-dist2 / (self.sigma * self.sigma)).exp() - floor) / (1.0 - floor)
    }

    /// `2 / sigma^2`, the factor in the kernel's spatial derivative.
    #[inline]
    pub fn gamma(&self) -> f64 {
        2.0 / (self.sigma * self.sigma)
    }

    pub fn cutoff(&self) -> f64 {
        CUTOFF_WIDTHS * self.sigma
    }
}

#[inline]
pub(crate) fn dot<const D: usize>(x: &[f64; D], y: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for a in 0..D {
        s += x[a] * y[a];
    }
    s
}

#[inline]
pub(crate) fn diff<const D: usize>(x: &[f64; D], y: &[f64; D]) -> [f64; D] {
    std::array::from_fn(|a| x[a] - y[a])
}

/// Regular lattice of control points with step `spacing`, centred on the
/// image domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlGrid {
    shape: Vec<usize>,
    spacing: f64,
    origin: Vec<f64>,
}

impl ControlGrid {
    /// Per axis `floor((K - 1) / spacing) + 1` points, centred in `[0, K - 1]`.
    pub fn covering(image_shape: &[usize], spacing: f64) -> Result<Self> {
        KernelConfig::new(spacing)?;
        if image_shape.is_empty() || image_shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "cannot cover image shape {image_shape:?}"
            )));
        }
        let mut shape = Vec::with_capacity(image_shape.len());
        let mut origin = Vec::with_capacity(image_shape.len());
        for &k in image_shape {
            let extent = (k - 1) as f64;
            // tolerate spacings that divide the extent up to round-off
            let n = ((extent / spacing) + 1e-9).floor() as usize + 1;
            shape.push(n);
            origin.push((extent - (n - 1) as f64 * spacing) / 2.0);
        }
        Ok(Self {
            shape,
            spacing,
            origin,
        })
    }

    pub fn from_parts(shape: Vec<usize>, spacing: f64, origin: Vec<f64>) -> Result<Self> {
        KernelConfig::new(spacing)?;
        if shape.is_empty() || shape.contains(&0) || origin.len() != shape.len() {
            return Err(Error::InvalidArgument(format!(
                "control grid shape {shape:?} with origin {origin:?}"
            )));
        }
        Ok(Self {
            shape,
            spacing,
            origin,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points<const D: usize>(&self) -> Result<Vec<[f64; D]>> {
        if self.ndim() != D {
            return Err(Error::ShapeMismatch(format!(
                "{}D control grid used as {D}D",
                self.ndim()
            )));
        }
        Ok(GridIndices::new(&self.shape)
            .map(|idx| std::array::from_fn(|a| self.origin[a] + idx[a] as f64 * self.spacing))
            .collect())
    }
}

/// Momentum vectors attached to the points of a control grid, stored
/// point-major (`alphas[k * d + axis]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentumField {
    grid: ControlGrid,
    alphas: Vec<f64>,
}

impl MomentumField {
    pub fn zeros(grid: ControlGrid) -> Self {
        let n = grid.len() * grid.ndim();
        Self {
            grid,
            alphas: vec![0.0; n],
        }
    }

    pub fn new(grid: ControlGrid, alphas: Vec<f64>) -> Result<Self> {
        let expected = grid.len() * grid.ndim();
        if alphas.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: alphas.len(),
            });
        }
        if alphas.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("momenta"));
        }
        Ok(Self { grid, alphas })
    }

    pub fn from_points<const D: usize>(grid: ControlGrid, alphas: &[[f64; D]]) -> Result<Self> {
        Self::new(grid, alphas.iter().flatten().copied().collect())
    }

    pub fn grid(&self) -> &ControlGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.ndim()
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alphas_mut(&mut self) -> &mut [f64] {
        &mut self.alphas
    }

    pub fn to_points<const D: usize>(&self) -> Result<Vec<[f64; D]>> {
        if self.dim() != D {
            return Err(Error::ShapeMismatch(format!(
                "{}D momenta used as {D}D",
                self.dim()
            )));
        }
        Ok(self
            .alphas
            .chunks_exact(D)
            .map(|c| std::array::from_fn(|a| c[a]))
            .collect())
    }

    /// One vector component over the control grid, row-major.
    pub fn component(&self, axis: usize) -> Vec<f64> {
        let d = self.dim();
        self.alphas.iter().skip(axis).step_by(d).copied().collect()
    }

    pub fn set_component(&mut self, axis: usize, values: &[f64]) -> Result<()> {
        let d = self.dim();
        if axis >= d {
            return Err(Error::InvalidArgument(format!("axis {axis} of {d}D momenta")));
        }
        if values.len() != self.grid.len() {
            return Err(Error::SizeMismatch {
                expected: self.grid.len(),
                found: values.len(),
            });
        }
        for (k, v) in values.iter().enumerate() {
            self.alphas[k * d + axis] = *v;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.alphas.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes the momenta as RAWF with shape `grid shape x d`, plus a text
    /// sidecar holding the grid spacing and origin.
    pub fn save(&self, path: &Path, sidecar: &Path) -> Result<()> {
        let mut shape = self.grid.shape.clone();
        shape.push(self.dim());
        write_rawf(path, &RawArray::new(shape, self.alphas.clone())?)?;
        let origin: Vec<String> = self.grid.origin.iter().map(|v| v.to_string()).collect();
        let text = format!("sigma_g {}\norigin {}\n", self.grid.spacing, origin.join(" "));
        std::fs::write(sidecar, text).map_err(|e| Error::io(sidecar, e))
    }

    pub fn load(path: &Path, sidecar: &Path) -> Result<Self> {
        let raw = read_rawf(path)?;
        let text = std::fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
        let mut spacing = None;
        let mut origin = None;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let values: Vec<f64> = parts
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::MalformedHeader(format!("bad sidecar line {line:?}")))?;
            match key {
                "sigma_g" if values.len() == 1 => spacing = Some(values[0]),
                "origin" => origin = Some(values),
                _ => return Err(Error::MalformedHeader(format!("bad sidecar line {line:?}"))),
            }
        }
        let (Some(spacing), Some(origin)) = (spacing, origin) else {
            return Err(Error::MalformedHeader("sidecar lacks sigma_g or origin".into()));
        };
        let mut shape = raw.shape.clone();
        let d = shape.pop().unwrap_or(0);
        if d != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "momentum array shape {:?} is not grid x d",
                raw.shape
            )));
        }
        Self::new(ControlGrid::from_parts(shape, spacing, origin)?, raw.data)
    }
}

/// Control point positions and momenta at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct State<const D: usize> {
    pub c: Vec<[f64; D]>,
    pub a: Vec<[f64; D]>,
}

impl<const D: usize> State<D> {
    pub fn zeros(n: usize) -> Self {
        Self {
            c: vec![[0.0; D]; n],
            a: vec![[0.0; D]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    fn axpy(&self, h: f64, rate: &State<D>) -> State<D> {
        let step = |x: &[[f64; D]], v: &[[f64; D]]| -> Vec<[f64; D]> {
            x.iter()
                .zip(v)
                .map(|(p, q)| std::array::from_fn(|a| p[a] + h * q[a]))
                .collect()
        };
        State {
            c: step(&self.c, &rate.c),
            a: step(&self.a, &rate.a),
        }
    }

    fn is_finite(&self) -> bool {
        self.c.iter().chain(&self.a).flatten().all(|v| v.is_finite())
    }

    /// `sum_jk a_j . a_k K(c_j, c_k)`.
    pub fn kinetic_energy(&self, k: &KernelConfig) -> f64 {
        KernelField::new(self, k).kinetic_energy()
    }
}

/// Velocity field generated by one state, with neighbour lookup.
pub(crate) struct KernelField<'s, const D: usize> {
    c: &'s [[f64; D]],
    a: &'s [[f64; D]],
    cells: CellList<D>,
    inv_s2: f64,
    gamma: f64,
    cut2: f64,
    floor: f64,
    rescale: f64,
}

impl<'s, const D: usize> KernelField<'s, D> {
    pub fn new(state: &'s State<D>, k: &KernelConfig) -> Self {
        let cut = k.cutoff();
        Self {
            c: &state.c,
            a: &state.a,
            cells: CellList::new(&state.c, cut),
            inv_s2: 1.0 / (k.sigma * k.sigma),
            gamma: k.gamma(),
            cut2: cut * cut,
            floor: cutoff_floor(),
            rescale: 1.0 / (1.0 - cutoff_floor()),
        }
    }

    /// Calls `f(j, offset p - c_j, kernel value, derivative weight)` for
    /// every point in range. The kernel's gradient in `p` is
    /// `-gamma * weight * offset`.
    #[inline]
    fn for_each_in_range(&self, p: &[f64; D], mut f: impl FnMut(usize, [f64; D], f64, f64)) {
        self.cells.for_each_near(p, |j| {
            let d = diff(p, &self.c[j]);
            let r2 = dot(&d, &d);
            if r2 < self.cut2 {
                let e = (-r2 * self.inv_s2).exp();
                f(j, d, (e - self.floor) * self.rescale, e * self.rescale);
            }
        });
    }

    #[inline]
    pub fn velocity(&self, p: &[f64; D]) -> [f64; D] {
        let mut v = [0.0; D];
        self.for_each_in_range(p, |j, _, kv, _| {
            for a in 0..D {
                v[a] += kv * self.a[j][a];
            }
        });
        v
    }

    /// Pulls the cotangent `lam` of `velocity(p)` back onto the control
    /// points, momenta (accumulated) and the query point (returned).
    #[inline]
    pub fn velocity_vjp(
        &self,
        p: &[f64; D],
        lam: &[f64; D],
        grad_c: &mut [[f64; D]],
        grad_a: &mut [[f64; D]],
    ) -> [f64; D] {
        let mut gp = [0.0; D];
        self.for_each_in_range(p, |j, d, kv, kd| {
            let w = self.gamma * kd * dot(lam, &self.a[j]);
            for a in 0..D {
                gp[a] -= w * d[a];
                grad_c[j][a] += w * d[a];
                grad_a[j][a] += kv * lam[a];
            }
        });
        gp
    }

    /// Right-hand side of the Hamiltonian system.
    pub fn hamiltonian_rhs(&self) -> State<D> {
        let n = self.c.len();
        let mut out = State::zeros(n);
        for m in 0..n {
            let am = self.a[m];
            let (mut fc, mut fa) = ([0.0; D], [0.0; D]);
            self.for_each_in_range(&self.c[m], |l, d, kv, kd| {
                let s = self.gamma * kd * dot(&am, &self.a[l]);
                for a in 0..D {
                    fc[a] += kv * self.a[l][a];
                    fa[a] += s * d[a];
                }
            });
            out.c[m] = fc;
            out.a[m] = fa;
        }
        out
    }

    /// Pulls cotangents `(mu, nu)` of `hamiltonian_rhs()` back onto the
    /// state, adding into `grad`.
    pub fn hamiltonian_vjp(&self, mu: &[[f64; D]], nu: &[[f64; D]], grad: &mut State<D>) {
        let g = self.gamma;
        for m in 0..self.c.len() {
            let am = self.a[m];
            let (mut gc, mut ga) = ([0.0; D], [0.0; D]);
            self.for_each_in_range(&self.c[m], |l, d, kv, kd| {
                let al = &self.a[l];
                let dn = diff(&nu[m], &nu[l]);
                let dn_d = dot(&dn, &d);
                let s = dot(&am, al);
                let cross = dot(&mu[m], al) + dot(&mu[l], &am);
                for a in 0..D {
                    ga[a] += kv * mu[l][a] + kd * g * dn_d * al[a];
                    gc[a] += g * kd * (s * (dn[a] - g * dn_d * d[a]) - cross * d[a]);
                }
            });
            for a in 0..D {
                grad.c[m][a] += gc[a];
                grad.a[m][a] += ga[a];
            }
        }
    }

    pub fn kinetic_energy(&self) -> f64 {
        let mut e = 0.0;
        for m in 0..self.c.len() {
            let v = self.velocity(&self.c[m]);
            e += dot(&self.a[m], &v);
        }
        e
    }
}

/// States along a shot geodesic: `states[n]` at time `n / T`, and the RK2
/// midpoint `half[n]` between times `n` and `n + 1`.
#[derive(Clone, Debug)]
pub struct FlowTrajectory<const D: usize> {
    pub kernel: KernelConfig,
    pub states: Vec<State<D>>,
    pub half: Vec<State<D>>,
}

impl<const D: usize> FlowTrajectory<D> {
    pub fn steps(&self) -> usize {
        self.half.len()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps() as f64
    }

    pub fn initial(&self) -> &State<D> {
        &self.states[0]
    }

    pub fn last(&self) -> &State<D> {
        &self.states[self.steps()]
    }

    pub fn kinetic_energies(&self) -> Vec<f64> {
        self.states
            .iter()
            .map(|s| s.kinetic_energy(&self.kernel))
            .collect()
    }
}

/// Sum of kernel-weighted momenta at each query point.
pub fn velocity_at<const D: usize>(
    xs: &[[f64; D]],
    c: &[[f64; D]],
    a: &[[f64; D]],
    k: &KernelConfig,
) -> Result<Vec<[f64; D]>> {
    if c.len() != a.len() {
        return Err(Error::SizeMismatch {
            expected: c.len(),
            found: a.len(),
        });
    }
    let state = State {
        c: c.to_vec(),
        a: a.to_vec(),
    };
    let field = KernelField::new(&state, k);
    Ok(xs.iter().map(|x| field.velocity(x)).collect())
}

/// Integrates the Hamiltonian system with the RK2 midpoint rule in `steps`
/// uniform steps over `[0, 1]`.
pub fn shoot<const D: usize>(
    c0: &[[f64; D]],
    a0: &[[f64; D]],
    k: &KernelConfig,
    steps: usize,
) -> Result<FlowTrajectory<D>> {
    if c0.len() != a0.len() {
        return Err(Error::SizeMismatch {
            expected: c0.len(),
            found: a0.len(),
        });
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("at least one time step is required".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut states = Vec::with_capacity(steps + 1);
    let mut half = Vec::with_capacity(steps);
    states.push(State {
        c: c0.to_vec(),
        a: a0.to_vec(),
    });
    for n in 0..steps {
        let y = &states[n];
        let h = y.axpy(0.5 * dt, &KernelField::new(y, k).hamiltonian_rhs());
        if !h.is_finite() {
            return Err(Error::NonFinite("geodesic state"));
        }
        let next = y.axpy(dt, &KernelField::new(&h, k).hamiltonian_rhs());
        if !next.is_finite() {
            return Err(Error::NonFinite("geodesic state"));
        }
        half.push(h);
        states.push(next);
    }
    Ok(FlowTrajectory {
        kernel: *k,
        states,
        half,
    })
}

pub fn kinetic_energy<const D: usize>(c: &[[f64; D]], a: &[[f64; D]], k: &KernelConfig) -> f64 {
    let state = State {
        c: c.to_vec(),
        a: a.to_vec(),
    };
    state.kinetic_energy(k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// `x -> Phi_1(x)`.
    Forward,
    /// `y -> Phi_1^{-1}(y)`, by reverse-time advection.
    Inverse,
}

/// Positions visited by the reverse-time flow: `x[n]` at time `n / T`
/// (with `x[T]` the start points) and the midpoint probes `u[n - 1]`.
pub(crate) struct InversePath<const D: usize> {
    pub x: Vec<Vec<[f64; D]>>,
    pub u: Vec<Vec<[f64; D]>>,
}

pub(crate) fn inverse_path<const D: usize>(
    traj: &FlowTrajectory<D>,
    starts: &[[f64; D]],
) -> Result<InversePath<D>> {
    let steps = traj.steps();
    let dt = traj.dt();
    let mut x = vec![Vec::new(); steps + 1];
    let mut u = vec![Vec::new(); steps];
    x[steps] = starts.to_vec();
    for n in (1..=steps).rev() {
        let end = KernelField::new(&traj.states[n], &traj.kernel);
        let mid = KernelField::new(&traj.half[n - 1], &traj.kernel);
        let mut un = Vec::with_capacity(starts.len());
        let mut prev = Vec::with_capacity(starts.len());
        for p in &x[n] {
            let v = end.velocity(p);
            let q: [f64; D] = std::array::from_fn(|a| p[a] - 0.5 * dt * v[a]);
            let w = mid.velocity(&q);
            prev.push(std::array::from_fn(|a| p[a] - dt * w[a]));
            un.push(q);
        }
        if prev.iter().flatten().any(|v: &f64| !v.is_finite()) {
            return Err(Error::NonFinite("flow positions"));
        }
        u[n - 1] = un;
        x[n - 1] = prev;
    }
    Ok(InversePath { x, u })
}

/// Advects `starts` along the flow of the trajectory.
pub fn integrate_points<const D: usize>(
    traj: &FlowTrajectory<D>,
    starts: &[[f64; D]],
    direction: Direction,
) -> Result<Vec<[f64; D]>> {
    match direction {
        Direction::Inverse => Ok(inverse_path(traj, starts)?.x.swap_remove(0)),
        Direction::Forward => {
            let dt = traj.dt();
            let mut x = starts.to_vec();
            for n in 0..traj.steps() {
                let start = KernelField::new(&traj.states[n], &traj.kernel);
                let mid = KernelField::new(&traj.half[n], &traj.kernel);
                for p in x.iter_mut() {
                    let v = start.velocity(p);
                    let q: [f64; D] = std::array::from_fn(|a| p[a] + 0.5 * dt * v[a]);
                    let w = mid.velocity(&q);
                    for a in 0..D {
                        p[a] += dt * w[a];
                    }
                }
            }
            if x.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("flow positions"));
            }
            Ok(x)
        }
    }
}

/// Image grid node coordinates in row-major order.
pub fn grid_points<const D: usize>(shape: &[usize]) -> Vec<[f64; D]> {
    GridIndices::new(shape)
        .map(|idx| std::array::from_fn(|a| idx[a] as f64))
        .collect()
}

/// Image of every node of a grid of `grid_shape` under the flow map.
pub fn integrate_flow<const D: usize>(
    traj: &FlowTrajectory<D>,
    grid_shape: &[usize],
    direction: Direction,
) -> Result<VectorField> {
    if grid_shape.len() != D {
        return Err(Error::ShapeMismatch(format!(
            "{}D grid for a {D}D flow",
            grid_shape.len()
        )));
    }
    let pts = integrate_points(traj, &grid_points::<D>(grid_shape), direction)?;
    VectorField::from_points(grid_shape.to_vec(), &pts)
}

pub(crate) fn warp_points<const D: usize>(
    img: &ScalarImage,
    positions: &[[f64; D]],
) -> Result<ScalarImage> {
    if positions.len() != img.len() {
        return Err(Error::SizeMismatch {
            expected: img.len(),
            found: positions.len(),
        });
    }
    let s = Sampler::<D>::new(img)?;
    ScalarImage::new(
        img.shape().to_vec(),
        positions.iter().map(|p| s.value(p)).collect(),
    )
}

/// `out(y) = img(positions(y))` with multilinear interpolation.
pub fn warp_image(img: &ScalarImage, positions: &VectorField) -> Result<ScalarImage> {
    if positions.shape() != img.shape() || positions.dim() != img.ndim() {
        return Err(Error::ShapeMismatch(format!(
            "positions {:?}x{} for image {:?}",
            positions.shape(),
            positions.dim(),
            img.shape()
        )));
    }
    match img.ndim() {
        2 => warp_points(img, &positions.to_points::<2>()?),
        _ => warp_points(img, &positions.to_points::<3>()?),
    }
}
