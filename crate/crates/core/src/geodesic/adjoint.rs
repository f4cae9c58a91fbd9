//! Reverse sweeps through the discrete RK2 recursions of `shoot` and the
//! reverse-time flow, producing exact gradients of the discretized maps.

use super::{FlowTrajectory, InversePath, KernelField, State};

fn scaled<const D: usize>(v: &[[f64; D]], s: f64) -> Vec<[f64; D]> {
    v.iter().map(|p| std::array::from_fn(|a| s * p[a])).collect()
}

fn add_into<const D: usize>(dst: &mut [[f64; D]], src: &[[f64; D]]) {
    for (d, s) in dst.iter_mut().zip(src) {
        for a in 0..D {
            d[a] += s[a];
        }
    }
}

/// Cotangents on every stored state induced by a cotangent `xhat0` on the
/// end points `path.x[0]` of the reverse-time flow.
pub(crate) fn inverse_flow_vjp<const D: usize>(
    traj: &FlowTrajectory<D>,
    path: &InversePath<D>,
    mut xhat: Vec<[f64; D]>,
) -> (Vec<State<D>>, Vec<State<D>>) {
    let steps = traj.steps();
    let dt = traj.dt();
    let n_ctrl = traj.states[0].len();
    let mut ey = vec![State::zeros(n_ctrl); steps + 1];
    let mut eh = vec![State::zeros(n_ctrl); steps];
    for n in 1..=steps {
        let mid = KernelField::new(&traj.half[n - 1], &traj.kernel);
        let end = KernelField::new(&traj.states[n], &traj.kernel);
        let (eh_n, ey_n) = (&mut eh[n - 1], &mut ey[n]);
        for (i, xh) in xhat.iter_mut().enumerate() {
            let lam: [f64; D] = std::array::from_fn(|a| -dt * xh[a]);
            let uhat = mid.velocity_vjp(&path.u[n - 1][i], &lam, &mut eh_n.c, &mut eh_n.a);
            let lam2: [f64; D] = std::array::from_fn(|a| -0.5 * dt * uhat[a]);
            let gx = end.velocity_vjp(&path.x[n][i], &lam2, &mut ey_n.c, &mut ey_n.a);
            for a in 0..D {
                xh[a] += uhat[a] + gx[a];
            }
        }
    }
    (ey, eh)
}

/// Cotangent on the initial state given external cotangents on every
/// stored state (`ey[n]` on `states[n]`, `eh[n]` on `half[n]`).
pub(crate) fn shoot_vjp<const D: usize>(
    traj: &FlowTrajectory<D>,
    mut ey: Vec<State<D>>,
    mut eh: Vec<State<D>>,
) -> State<D> {
    let steps = traj.steps();
    let dt = traj.dt();
    let mut yhat = std::mem::replace(&mut ey[steps], State::zeros(0));
    for n in (0..steps).rev() {
        let mut hhat = std::mem::replace(&mut eh[n], State::zeros(0));
        KernelField::new(&traj.half[n], &traj.kernel).hamiltonian_vjp(
            &scaled(&yhat.c, dt),
            &scaled(&yhat.a, dt),
            &mut hhat,
        );
        KernelField::new(&traj.states[n], &traj.kernel).hamiltonian_vjp(
            &scaled(&hhat.c, 0.5 * dt),
            &scaled(&hhat.a, 0.5 * dt),
            &mut yhat,
        );
        add_into(&mut yhat.c, &hhat.c);
        add_into(&mut yhat.a, &hhat.a);
        add_into(&mut yhat.c, &ey[n].c);
        add_into(&mut yhat.a, &ey[n].a);
    }
    yhat
}
