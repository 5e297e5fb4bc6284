//! Reference implementations used only to cross-check the production code
//! paths. Each one takes a deliberately different (slower, more literal)
//! route to the same quantity.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::envs::{ConfidenceMpcEnv, ConfidenceMpcSpec, RandomSmoothSystem};
use crate::error::Result;
use crate::gaps::{run_gaps_with, GapsConfig, RunOptions};
use crate::linalg::{self, Matrix};
use crate::system::{ControlSystem, Dims, Trajectory};

/// Adds the quadratic and linear terms of `(S U + c)ᵀ W (S U + c)` in `U`.
fn accumulate(s: &Matrix, c: &[f64], w: &Matrix, hess: &mut Matrix, lin: &mut [f64]) {
    let st_w = &s.transpose() * w;
    *hess += &(&st_w * s);
    for (l, gi) in lin.iter_mut().zip(st_w.mul_vec(c)) {
        *l += gi;
    }
}

/// First control of the receding-horizon problem, solved as one dense QP over
/// the stacked input vector `U = (u_0, …, u_{k-1})`.
pub fn mpc_first_control_qp(
    a: &[Matrix],
    b: &[Matrix],
    q: &[Matrix],
    r: &[Matrix],
    q_terminal: &Matrix,
    x0: &[f64],
    v: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let k = a.len();
    let n = x0.len();
    let m = b[0].cols();
    let km = k * m;
    // predicted state i = S_i U + c_i
    let mut s = Matrix::zeros(n, km);
    let mut c = x0.to_vec();
    let mut hess = Matrix::zeros(km, km);
    let mut lin = vec![0.0; km];
    for i in 0..k {
        accumulate(&s, &c, &q[i], &mut hess, &mut lin);
        for p in 0..m {
            for p2 in 0..m {
                hess[(i * m + p, i * m + p2)] += r[i][(p, p2)];
            }
        }
        let mut s_next = &a[i] * &s;
        for row in 0..n {
            for p in 0..m {
                s_next[(row, i * m + p)] += b[i][(row, p)];
            }
        }
        let mut c_next = a[i].mul_vec(&c);
        for (cn, vi) in c_next.iter_mut().zip(&v[i]) {
            *cn += vi;
        }
        s = s_next;
        c = c_next;
    }
    accumulate(&s, &c, q_terminal, &mut hess, &mut lin);
    let u = hess.lu()?.solve_vec(&lin);
    Ok(u[..m].iter().map(|x| -x).collect())
}

/// `Σ_{b=0}^{min(B-1,t)} ∂f_{t|0}/∂θ_{t-b}` evaluated by forming each chain-rule
/// product explicitly from the recorded Jacobians. O(t²) per call.
pub fn explicit_chain_rule_gradient(traj: &Trajectory, t: usize, buffer_len: usize) -> Vec<f64> {
    let jac = |s: usize| {
        traj.steps[s]
            .jac
            .as_ref()
            .expect("trajectory recorded without Jacobians")
    };
    let jt = jac(t);
    let mut grad = jt.dpi_dtheta.left_mul_vec(&jt.df_du);
    let mut cost_row = jt.df_dx.clone();
    let extra = jt.dpi_dx.left_mul_vec(&jt.df_du);
    for (c, e) in cost_row.iter_mut().zip(extra) {
        *c += e;
    }
    let last_b = (buffer_len - 1).min(t);
    for b in 1..=last_b {
        // row vector (∂f_t/∂x_t) · A_cl(t-1) ⋯ A_cl(t-b+1)
        let mut row = cost_row.clone();
        for s in ((t - b + 1)..t).rev() {
            let js = jac(s);
            let a_cl = &js.dg_dx + &(&js.dg_du * &js.dpi_dx);
            row = a_cl.left_mul_vec(&row);
        }
        let jb = jac(t - b);
        let input = &jb.dg_du * &jb.dpi_dtheta;
        for (g, v) in grad.iter_mut().zip(input.left_mul_vec(&row)) {
            *g += v;
        }
    }
    grad
}

/// Adaptive regret by direct enumeration of every interval with fresh sums.
pub fn brute_force_adaptive_regret(costs: &[f64], table: &[Vec<f64>]) -> f64 {
    let t_len = costs.len();
    let grid = table[0].len();
    let mut best = f64::NEG_INFINITY;
    for t1 in 0..t_len {
        for t2 in t1..t_len {
            let online: f64 = costs[t1..=t2].iter().sum();
            let comparator = (0..grid)
                .map(|g| (t1..=t2).map(|t| table[t][g]).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            best = best.max(online - comparator);
        }
    }
    best
}

fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Matrix {
    let g = gaussian_matrix(rng, n, n, 1.0);
    &(&g * &g.transpose()) + &Matrix::identity(n).scale(0.5)
}

/// Largest relative gap `‖u − u_QP‖ / (1 + ‖u_QP‖)` between the confidence
/// MPC law and the dense QP over random time-varying instances with
/// `n, m ≤ 2` and `k ≤ 4`.
pub fn mpc_law_vs_qp<R: Rng + ?Sized>(rng: &mut R, instances: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(1..=2);
        let m = rng.random_range(1..=2);
        let k = rng.random_range(1..=4);
        let horizon = 3;
        let len = horizon + k - 1;
        let spec = ConfidenceMpcSpec {
            a: (0..len).map(|_| gaussian_matrix(rng, n, n, 0.7)).collect(),
            b: (0..len).map(|_| gaussian_matrix(rng, n, m, 1.0)).collect(),
            q: (0..len).map(|_| random_spd(rng, n)).collect(),
            r: (0..len).map(|_| random_spd(rng, m)).collect(),
            q_terminal: random_spd(rng, n),
            k,
            x0: vec![0.0; n],
            disturbances: (0..horizon)
                .map(|_| gaussian_matrix(rng, n, 1, 1.0).into_vec())
                .collect(),
            predictions: (0..horizon)
                .map(|_| (0..k).map(|_| gaussian_matrix(rng, n, 1, 1.0).into_vec()).collect())
                .collect(),
            horizon,
        };
        let env = ConfidenceMpcEnv::new(spec.clone())?;
        let t = 1;
        let x = gaussian_matrix(rng, n, 1, 1.0).into_vec();
        let lambda: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..1.0)).collect();
        let v: Vec<Vec<f64>> = (0..k)
            .map(|i| linalg::scaled(lambda[i], &spec.predictions[t][i]))
            .collect();
        let qp = mpc_first_control_qp(
            &spec.a[t..t + k],
            &spec.b[t..t + k],
            &spec.q[t..t + k],
            &spec.r[t..t + k],
            &spec.q_terminal,
            &x,
            &v,
        )?;
        let u = env.policy(t, &x, &lambda);
        worst = worst.max(linalg::dist(&u, &qp) / (1.0 + linalg::norm(&qp)));
    }
    Ok(worst)
}

/// Largest absolute gap between the buffered GAPS gradient and
/// [`explicit_chain_rule_gradient`] over `systems` random smooth systems with
/// `n, m, d ≤ 3`, every step of a `steps`-long run and every buffer length.
pub fn buffer_vs_chain_rule<R: Rng + ?Sized>(
    rng: &mut R,
    systems: usize,
    steps: usize,
    buffer_lens: &[usize],
    eta: f64,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..systems {
        let dims = Dims {
            n: rng.random_range(1..=3),
            m: rng.random_range(1..=3),
            d: rng.random_range(1..=3),
        };
        let sys = RandomSmoothSystem::sample(rng, dims, steps);
        for &b in buffer_lens {
            let cfg = GapsConfig::new(eta, b, vec![0.0; dims.d], sys.parameter_set())?;
            let options = RunOptions {
                record_jacobians: true,
                ..Default::default()
            };
            let traj = run_gaps_with(&sys, &cfg, steps, &options)?;
            for t in 0..steps {
                let oracle = explicit_chain_rule_gradient(&traj, t, b);
                let g = traj.steps[t].grad.as_ref().expect("GAPS records gradients");
                worst = worst.max(linalg::dist(g, &oracle));
            }
        }
    }
    Ok(worst)
}
