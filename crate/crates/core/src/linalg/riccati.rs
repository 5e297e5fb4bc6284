use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{check_dim, Error, Result};

/// Stabilizing solution of the discrete algebraic Riccati equation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RiccatiSolution {
    /// Cost-to-go matrix `P` (n×n, symmetric).
    pub p: Matrix,
    /// Optimal gain `K = (R + BᵀPB)⁻¹BᵀPA` (m×n); control is `u = -Kx`.
    pub k: Matrix,
    /// Frobenius norm of `P - DARE(P)` at the returned `P`.
    pub residual: f64,
    pub iterations: usize,
}

/// One application of the Riccati map. Returns `(Q + AᵀP(A - BK), K)`.
fn riccati_step(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<(Matrix, Matrix)> {
    let bt_p = &b.transpose() * p;
    let h = r + &(&bt_p * b);
    let k = h.solve(&(&bt_p * a))?;
    let a_cl = a - &(b * &k);
    let next = q + &(&(&a.transpose() * p) * &a_cl);
    Ok((next.symmetrize(), k))
}

/// `‖P − (Q + AᵀPA − AᵀPB(R+BᵀPB)⁻¹BᵀPA)‖_F`
pub fn dare_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<f64> {
    let (mapped, _) = riccati_step(a, b, q, r, p)?;
    Ok((p - &mapped).frobenius_norm())
}

fn check_lq_shapes(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<()> {
    let n = a.rows();
    check_dim("A (square)", n, a.cols())?;
    check_dim("B rows", n, b.rows())?;
    check_dim("Q rows", n, q.rows())?;
    check_dim("Q cols", n, q.cols())?;
    check_dim("R rows", b.cols(), r.rows())?;
    check_dim("R cols", b.cols(), r.cols())
}

/// Solves the DARE by fixed-point iteration of the Riccati map from `P₀ = Q`.
///
/// Stops once the Frobenius change between iterates drops below `tol` and the
/// residual at the returned iterate is also below `tol`.
pub fn solve_dare(
    a: &Matrix,
    b: &Matrix,
    q: &Matrix,
    r: &Matrix,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution> {
    check_lq_shapes(a, b, q, r)?;
    let mut p = q.symmetrize();
    let mut last_change = f64::INFINITY;
    for it in 1..=max_iter {
        let (next, _) = riccati_step(a, b, q, r, &p)?;
        if !next.is_finite() {
            return Err(Error::NonConvergence {
                iterations: it,
                last_change: f64::INFINITY,
            });
        }
        last_change = (&next - &p).frobenius_norm();
        p = next;
        if last_change < tol {
            let (mapped, k) = riccati_step(a, b, q, r, &p)?;
            let residual = (&p - &mapped).frobenius_norm();
            if residual <= tol {
                return Ok(RiccatiSolution {
                    p,
                    k,
                    residual,
                    iterations: it,
                });
            }
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iter,
        last_change,
    })
}

/// Affine receding-horizon law from a finite-horizon backward Riccati pass.
///
/// For the plan starting at time `t` with horizon `k`, the first committed
/// control is
///
/// ```text
/// u_t = -K x_t - Σ_{i<k} feedforward[i] · v_{t+i}
/// ```
///
/// where `v_{t+i}` is the additive disturbance the planner assumes at stage
/// `t+i` (for confidence-weighted MPC, `λ⁽ⁱ⁾ w_{t+i|t}`).
#[derive(Clone, Debug)]
pub struct FiniteHorizonGains {
    /// State feedback gains for plan offsets `0..k` (offset 0 is the committed one).
    pub state_gains: Vec<Matrix>,
    /// Feedforward maps on the planned disturbance at offsets `0..k` (each m×n).
    pub feedforward: Vec<Matrix>,
    /// Quadratic cost-to-go `P` at offsets `0..=k` (`P_k` is the terminal weight).
    pub cost_to_go: Vec<Matrix>,
}

impl FiniteHorizonGains {
    pub fn horizon(&self) -> usize {
        self.state_gains.len()
    }

    /// First control of the plan for state `x` and planned disturbances `v`.
    pub fn first_control(&self, x: &[f64], v: &[Vec<f64>]) -> Vec<f64> {
        let mut u = self.state_gains[0].mul_vec(x);
        for (f, vi) in self.feedforward.iter().zip(v) {
            super::axpy(1.0, &f.mul_vec(vi), &mut u);
        }
        u.iter_mut().for_each(|ui| *ui = -*ui);
        u
    }
}

/// Backward Riccati pass over `k` stages with terminal weight `q_terminal`.
///
/// Minimizes `Σ_τ (xᵀQ_τx + uᵀR_τu) + x_kᵀ Q̃ x_k` subject to
/// `x_{τ+1} = A_τ x_τ + B_τ u_τ + v_τ`.
pub fn finite_horizon_lq(
    a_seq: &[Matrix],
    b_seq: &[Matrix],
    q_seq: &[Matrix],
    r_seq: &[Matrix],
    q_terminal: &Matrix,
) -> Result<FiniteHorizonGains> {
    let k = a_seq.len();
    if k == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    check_dim("B sequence length", k, b_seq.len())?;
    check_dim("Q sequence length", k, q_seq.len())?;
    check_dim("R sequence length", k, r_seq.len())?;
    for i in 0..k {
        check_lq_shapes(&a_seq[i], &b_seq[i], &q_seq[i], &r_seq[i])?;
    }
    let n = a_seq[0].rows();
    check_dim("terminal weight rows", n, q_terminal.rows())?;
    check_dim("terminal weight cols", n, q_terminal.cols())?;

    let mut cost_to_go = vec![Matrix::zeros(n, n); k + 1];
    cost_to_go[k] = q_terminal.clone();
    let mut state_gains = Vec::with_capacity(k);
    // H⁻¹Bᵀ at each stage, needed for the feedforward maps.
    let mut hinv_bt = Vec::with_capacity(k);
    for tau in (0..k).rev() {
        let (a, b) = (&a_seq[tau], &b_seq[tau]);
        let p_next = &cost_to_go[tau + 1];
        let bt = b.transpose();
        let h = &r_seq[tau] + &(&(&bt * p_next) * b);
        let lu = h.lu()?;
        let hb = lu.solve(&bt);
        let gain = &(&hb * p_next) * a;
        let a_cl = a - &(b * &gain);
        cost_to_go[tau] = (&q_seq[tau] + &(&(&a.transpose() * p_next) * &a_cl)).symmetrize();
        state_gains.push(gain);
        hinv_bt.push(hb);
    }
    state_gains.reverse();
    hinv_bt.reverse();

    // The linear cost-to-go term seen by stage 0 is
    //   p_1 = Σ_{j≥1} (M_j ⋯ M_1)ᵀ P_{j+1} v_j,   M_j = A_j - B_j K_j,
    // so the feedforward on v_j is H_0⁻¹B_0ᵀ (M_1ᵀ ⋯ M_jᵀ) P_{j+1}.
    let mut feedforward = Vec::with_capacity(k);
    let mut transport = Matrix::identity(n);
    for j in 0..k {
        if j > 0 {
            let m_j = &a_seq[j] - &(&b_seq[j] * &state_gains[j]);
            transport = &transport * &m_j.transpose();
        }
        feedforward.push(&(&hinv_bt[0] * &transport) * &cost_to_go[j + 1]);
    }

    Ok(FiniteHorizonGains {
        state_gains,
        feedforward,
        cost_to_go,
    })
}
