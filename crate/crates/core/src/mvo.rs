//! Long-only mean-variance optimization with a linear trading-cost term:
//!
//! ```text
//! maximize   wᵀμ − γ_risk·wᵀΣw − γ_trade·a·‖w − w_pre‖₁
//! subject to 0 ≤ w ≤ w_ub,  1ᵀw ≤ L
//! ```
//!
//! The L1 term is made smooth exactly by splitting the trade into buys and
//! sells, `w = w_pre + b − s` with `b, s ≥ 0`, which gives a convex QP in
//! `(b, s)` solved here with a primal active-set method.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, dot, lu_solve, Matrix};

pub const FEASIBILITY_TOL: f64 = 1e-8;
pub const KKT_TOL: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 10_000;

/// Constraints within this distance of their bound count as active when
/// checking optimality.
const ACTIVE_TOL: f64 = 1e-9;
/// Relative ridge on the split Hessian, which is only semidefinite along
/// simultaneous buy-and-sell directions.
const SPLIT_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvoProblem {
    /// Expected excess returns.
    pub mu: Vec<f64>,
    pub sigma: Matrix,
    pub gamma_risk: f64,
    pub gamma_trade: f64,
    /// One-way proportional cost.
    pub cost_a: f64,
    pub w_pre: Vec<f64>,
    pub w_ub: f64,
    pub leverage_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvoSolution {
    pub weights: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl MvoProblem {
    pub fn n(&self) -> usize {
        self.mu.len()
    }

    fn trade_penalty(&self) -> f64 {
        self.gamma_trade * self.cost_a
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(Error::invalid("mvo: empty problem"));
        }
        if self.sigma.rows() != n || self.sigma.cols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.sigma.rows(),
            });
        }
        if self.w_pre.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.w_pre.len(),
            });
        }
        if self.mu.iter().any(|v| !v.is_finite()) || !self.sigma.is_finite() {
            return Err(Error::invalid("mvo: non-finite μ or Σ"));
        }
        if !(self.gamma_risk > 0.0) || !(self.gamma_trade >= 0.0) || !(self.cost_a >= 0.0) {
            return Err(Error::invalid(
                "mvo: need gamma_risk > 0, gamma_trade >= 0 and cost_a >= 0",
            ));
        }
        if !(self.w_ub > 0.0) || !(self.leverage_cap > 0.0) {
            return Err(Error::invalid("mvo: need w_ub > 0 and leverage_cap > 0"));
        }
        if self.w_pre.iter().any(|w| !w.is_finite() || *w < -FEASIBILITY_TOL) {
            return Err(Error::invalid("mvo: infeasible w_pre (negative weight)"));
        }
        let scale = (0..n).map(|i| self.sigma[(i, i)].abs()).fold(0.0, f64::max);
        if self.sigma.max_asymmetry() > 1e-12 * scale.max(1e-300) {
            return Err(Error::invalid("mvo: Σ is not symmetric"));
        }
        cholesky(&self.sigma).map_err(|_| Error::numerical("mvo: Σ is not positive definite"))?;
        Ok(())
    }

    /// Objective value at `w` (the quantity being maximized).
    pub fn objective(&self, w: &[f64]) -> f64 {
        let trade: f64 = w.iter().zip(&self.w_pre).map(|(a, b)| (a - b).abs()).sum();
        dot(w, &self.mu) - self.gamma_risk * self.sigma.quad_form(w) - self.trade_penalty() * trade
    }

    /// Largest violation of `0 ≤ w ≤ w_ub`, `1ᵀw ≤ L`.
    pub fn infeasibility(&self, w: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for &x in w {
            worst = worst.max(-x).max(x - self.w_ub);
        }
        worst.max(w.iter().sum::<f64>() - self.leverage_cap)
    }
}

/// Maximum violation of the optimality conditions at `weights`: primal
/// feasibility, and stationarity with sign-constrained multipliers on the
/// active bounds and a subgradient in `[−1, 1]` wherever `w_j = w_pre_j`.
pub fn verify_kkt(problem: &MvoProblem, weights: &[f64]) -> f64 {
    let n = problem.n();
    let c = problem.trade_penalty();
    let sw = problem.sigma.mul_vec(weights);
    let grad: Vec<f64> = (0..n)
        .map(|j| problem.mu[j] - 2.0 * problem.gamma_risk * sw[j])
        .collect();
    // grad_j − η must lie in [lo_j, hi_j]
    let bounds: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let w = weights[j];
            let delta = w - problem.w_pre[j];
            let (mut lo, mut hi) = if delta.abs() <= ACTIVE_TOL {
                (-c, c)
            } else {
                (c * delta.signum(), c * delta.signum())
            };
            if w <= ACTIVE_TOL {
                lo = f64::NEG_INFINITY;
            }
            if w >= problem.w_ub - ACTIVE_TOL {
                hi = f64::INFINITY;
            }
            (lo, hi)
        })
        .collect();
    let stationarity = |eta: f64| -> f64 {
        grad.iter()
            .zip(&bounds)
            .map(|(g, (lo, hi))| {
                let v = g - eta;
                (lo - v).max(v - hi).max(0.0)
            })
            .fold(0.0, f64::max)
    };
    let leverage_active = weights.iter().sum::<f64>() >= problem.leverage_cap - ACTIVE_TOL;
    let best = if leverage_active {
        // convex in η: ternary search
        let mut lo = 0.0;
        let mut hi = grad.iter().map(|g| g.abs()).fold(0.0, f64::max) + c + 1e-12;
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if stationarity(m1) <= stationarity(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        stationarity(0.5 * (lo + hi)).min(stationarity(0.0))
    } else {
        stationarity(0.0)
    };
    best.max(problem.infeasibility(weights).max(0.0))
}

/// Dense linear inequality constraints `a_i · z ≤ b_i` in split variables.
struct Constraints {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
}

impl Constraints {
    fn for_problem(p: &MvoProblem) -> Self {
        let n = p.n();
        let m = 2 * n;
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        let unit = |i: usize, v: f64| {
            let mut r = vec![0.0; m];
            r[i] = v;
            r
        };
        for j in 0..n {
            rows.push(unit(j, -1.0)); // b_j ≥ 0
            rhs.push(0.0);
            rows.push(unit(n + j, -1.0)); // s_j ≥ 0
            rhs.push(0.0);
            let mut lower = unit(j, -1.0); // w_j ≥ 0
            lower[n + j] = 1.0;
            rows.push(lower);
            rhs.push(p.w_pre[j]);
            let mut upper = unit(j, 1.0); // w_j ≤ w_ub
            upper[n + j] = -1.0;
            rows.push(upper);
            rhs.push(p.w_ub - p.w_pre[j]);
        }
        let mut lev = vec![1.0; m];
        lev[n..].iter_mut().for_each(|v| *v = -1.0);
        rows.push(lev);
        rhs.push(p.leverage_cap - p.w_pre.iter().sum::<f64>());
        Constraints { rows, rhs }
    }

    fn slack(&self, i: usize, z: &[f64]) -> f64 {
        self.rhs[i] - dot(&self.rows[i], z)
    }
}

/// A feasible split point: sell down anything above the bound, then scale
/// down further if the leverage cap is still exceeded.
fn feasible_start(p: &MvoProblem) -> Vec<f64> {
    let n = p.n();
    let mut target: Vec<f64> = p.w_pre.iter().map(|w| w.clamp(0.0, p.w_ub)).collect();
    let total: f64 = target.iter().sum();
    if total > p.leverage_cap {
        let f = p.leverage_cap / total;
        target.iter_mut().for_each(|w| *w *= f);
    }
    let mut z = vec![0.0; 2 * n];
    for j in 0..n {
        let d = target[j] - p.w_pre[j];
        if d > 0.0 {
            z[j] = d;
        } else {
            z[n + j] = -d;
        }
    }
    z
}

/// Solve the problem to global optimality.
pub fn solve(problem: &MvoProblem) -> Result<MvoSolution> {
    problem.validate()?;
    let n = problem.n();
    let m = 2 * n;
    let c = problem.trade_penalty();

    // Hessian in split space: 2γ [Σ −Σ; −Σ Σ] + εI
    let mut h = Matrix::zeros(m, m);
    let mut diag_max: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = 2.0 * problem.gamma_risk * problem.sigma[(i, j)];
            h[(i, j)] = v;
            h[(n + i, n + j)] = v;
            h[(i, n + j)] = -v;
            h[(n + i, j)] = -v;
        }
        diag_max = diag_max.max(h[(i, i)]);
    }
    let ridge = SPLIT_RIDGE * diag_max.max(f64::MIN_POSITIVE);
    for i in 0..m {
        h[(i, i)] += ridge;
    }

    let to_weights = |z: &[f64]| -> Vec<f64> { (0..n).map(|j| problem.w_pre[j] + z[j] - z[n + j]).collect() };
    let gradient = |z: &[f64]| -> Vec<f64> {
        let w = to_weights(z);
        let sw = problem.sigma.mul_vec(&w);
        let gw: Vec<f64> = (0..n)
            .map(|j| -problem.mu[j] + 2.0 * problem.gamma_risk * sw[j])
            .collect();
        let mut g = vec![0.0; m];
        for j in 0..n {
            g[j] = gw[j] + c + ridge * z[j];
            g[n + j] = -gw[j] + c + ridge * z[n + j];
        }
        g
    };

    let h_norm = 1.0 / (diag_max + ridge);
    let cons = Constraints::for_problem(problem);
    let mut z = feasible_start(problem);
    let mut working: Vec<usize> = Vec::new();
    let scale = problem
        .mu
        .iter()
        .map(|v| v.abs())
        .fold(c, f64::max)
        .max(diag_max)
        .max(f64::MIN_POSITIVE);
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let g = gradient(&z);
        let k = working.len();
        // [H Aᵀ; A 0] [p; ν] = [−g; 0]
        let dim = m + k;
        let mut kkt = Matrix::zeros(dim, dim);
        // H is normalized to unit diagonal scale so its pivots are not
        // swamped by the O(1) constraint rows
        for i in 0..m {
            for j in 0..m {
                kkt[(i, j)] = h[(i, j)] * h_norm;
            }
        }
        for (r, &ci) in working.iter().enumerate() {
            for j in 0..m {
                kkt[(m + r, j)] = cons.rows[ci][j];
                kkt[(j, m + r)] = cons.rows[ci][j];
            }
        }
        let mut rhs = vec![0.0; dim];
        for i in 0..m {
            rhs[i] = -g[i] * h_norm;
        }
        let sol = lu_solve(&kkt, &rhs)
            .map_err(|e| e.context("mvo: working-set KKT system"))?;
        let p = &sol[..m];
        let nu = &sol[m..];

        let p_norm = p.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let z_norm = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if p_norm <= 1e-12 * (1.0 + z_norm) {
            // multipliers of a_i·z ≤ b_i must be non-negative at the optimum
            let (worst, worst_nu) = nu
                .iter()
                .enumerate()
                .fold((None, 0.0), |(bi, bv), (i, &v)| if v < bv { (Some(i), v) } else { (bi, bv) });
            match worst {
                Some(i) if worst_nu < -1e-12 * scale * h_norm => {
                    working.remove(i);
                }
                _ => {
                    converged = true;
                    break;
                }
            }
            continue;
        }

        let mut alpha = 1.0;
        let mut blocking = None;
        for i in 0..cons.rows.len() {
            if working.contains(&i) {
                continue;
            }
            let ap = dot(&cons.rows[i], p);
            if ap > 1e-15 * (1.0 + p_norm) {
                let step = cons.slack(i, &z).max(0.0) / ap;
                if step < alpha {
                    alpha = step;
                    blocking = Some(i);
                }
            }
        }
        for (zi, pi) in z.iter_mut().zip(p) {
            *zi += alpha * pi;
        }
        if let Some(i) = blocking {
            working.push(i);
        }
    }

    let mut weights = to_weights(&z);
    for w in weights.iter_mut() {
        *w = w.clamp(0.0, problem.w_ub);
    }
    let kkt_residual = verify_kkt(problem, &weights);
    Ok(MvoSolution {
        objective: problem.objective(&weights),
        weights,
        kkt_residual,
        iterations,
        converged,
    })
}

/// `Σ⁻¹1` scaled to leverage `L`: the optimum with `μ ∝ 1`, no bounds, no
/// trading cost and `γ_risk` below [`minvar_gamma_threshold`].
pub fn minvar_closed_form_check(sigma: &Matrix, leverage_cap: f64) -> Result<Vec<f64>> {
    let l = cholesky(sigma).map_err(|_| Error::numerical("Σ is singular or not positive definite"))?;
    let x = cholesky_solve(&l, &vec![1.0; sigma.rows()]);
    let total: f64 = x.iter().sum();
    Ok(x.iter().map(|v| leverage_cap * v / total).collect())
}

/// `1ᵀΣ⁻¹1 / (2L)`.
pub fn minvar_gamma_threshold(sigma: &Matrix, leverage_cap: f64) -> Result<f64> {
    let l = cholesky(sigma).map_err(|_| Error::numerical("Σ is singular or not positive definite"))?;
    let x = cholesky_solve(&l, &vec![1.0; sigma.rows()]);
    Ok(x.iter().sum::<f64>() / (2.0 * leverage_cap))
}
