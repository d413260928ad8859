//! Statistical jump models.
//!
//! A jump model clusters a feature sequence `x_0 .. x_{T-1}` into `K` states
//! while charging a fixed penalty `λ` for every change of state:
//!
//! ```text
//! min_{Θ,S}  Σ_t ½‖x_t − θ_{s_t}‖²  +  λ · #{t ≥ 1 : s_{t−1} ≠ s_t}
//! ```
//!
//! It is fitted by coordinate descent. For fixed centroids the state
//! sequence is found exactly by dynamic programming ([`assign_states`]);
//! for a fixed state sequence each centroid is the mean of its rows. With
//! `λ = 0` this reduces to Lloyd's k-means.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 100;

/// Semantic label of the bullish regime when `K = 2`.
pub const BULLISH: usize = 0;
/// Semantic label of the bearish regime when `K = 2`.
pub const BEARISH: usize = 1;

#[inline]
fn half_sq_dist(x: &[f64], theta: &[f64]) -> f64 {
    0.5 * x
        .iter()
        .zip(theta)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
}

/// `T × K` table of per-step losses `½‖x_t − θ_k‖²`.
pub fn loss_table(x: &Matrix, centroids: &Matrix) -> Result<Matrix> {
    if x.cols() != centroids.cols() {
        return Err(Error::DimensionMismatch {
            expected: centroids.cols(),
            found: x.cols(),
        });
    }
    let mut l = Matrix::zeros(x.rows(), centroids.rows());
    for t in 0..x.rows() {
        for k in 0..centroids.rows() {
            l[(t, k)] = half_sq_dist(x.row(t), centroids.row(k));
        }
    }
    Ok(l)
}

/// Optimal state path for a given loss table; ties go to the lowest state
/// index, both for the final state and while backtracking.
pub fn assign_states_from_losses(losses: &Matrix, jump_penalty: f64) -> Result<(Vec<usize>, f64)> {
    let (t_len, k_len) = (losses.rows(), losses.cols());
    if t_len == 0 || k_len == 0 {
        return Err(Error::invalid("assign_states: empty input"));
    }
    if !(jump_penalty >= 0.0) || !jump_penalty.is_finite() {
        return Err(Error::invalid(format!(
            "jump penalty must be finite and >= 0, got {jump_penalty}"
        )));
    }
    if losses.as_slice().iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("assign_states: NaN in losses"));
    }
    let mut value = losses.row(0).to_vec();
    let mut next = vec![0.0; k_len];
    // back[t * K + k] = predecessor of state k at step t
    let mut back = vec![0usize; t_len * k_len];
    for t in 1..t_len {
        let (best_j, best_v) = argmin(&value);
        let switch = best_v + jump_penalty;
        for k in 0..k_len {
            let stay = value[k];
            let (from, v) = if stay < switch {
                (k, stay)
            } else if switch < stay {
                (best_j, switch)
            } else {
                (k.min(best_j), stay)
            };
            back[t * k_len + k] = from;
            next[k] = losses[(t, k)] + v;
        }
        std::mem::swap(&mut value, &mut next);
    }
    let (mut state, cost) = argmin(&value);
    let mut states = vec![0; t_len];
    for t in (0..t_len).rev() {
        states[t] = state;
        if t > 0 {
            state = back[t * k_len + state];
        }
    }
    Ok((states, cost))
}

fn argmin(v: &[f64]) -> (usize, f64) {
    let mut best = (0, v[0]);
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x < best.1 {
            best = (i, x);
        }
    }
    best
}

/// Globally optimal state sequence for fixed centroids, with its cost.
pub fn assign_states(x: &Matrix, centroids: &Matrix, jump_penalty: f64) -> Result<(Vec<usize>, f64)> {
    if !x.is_finite() || !centroids.is_finite() {
        return Err(Error::invalid("assign_states: non-finite input"));
    }
    assign_states_from_losses(&loss_table(x, centroids)?, jump_penalty)
}

pub fn count_switches(states: &[usize]) -> usize {
    states.windows(2).filter(|w| w[0] != w[1]).count()
}

/// Jump-model objective of a given `(Θ, S)`.
pub fn objective(x: &Matrix, centroids: &Matrix, states: &[usize], jump_penalty: f64) -> f64 {
    let fit: f64 = states
        .iter()
        .enumerate()
        .map(|(t, &s)| half_sq_dist(x.row(t), centroids.row(s)))
        .sum();
    fit + jump_penalty * count_switches(states) as f64
}

/// Row-normalized transition counts; rows of unvisited states are uniform.
pub fn transition_matrix(states: &[usize], n_states: usize) -> Result<Matrix> {
    if let Some(&s) = states.iter().find(|&&s| s >= n_states) {
        return Err(Error::invalid(format!("state {s} out of range 0..{n_states}")));
    }
    let mut m = Matrix::zeros(n_states, n_states);
    for w in states.windows(2) {
        m[(w[0], w[1])] += 1.0;
    }
    for i in 0..n_states {
        let total: f64 = m.row(i).iter().sum();
        let row = m.row_mut(i);
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / n_states as f64);
        }
    }
    Ok(m)
}

/// Per-regime return statistics. `mean`/`volatility` are `None` for an
/// unoccupied regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeStats {
    pub count: usize,
    pub mean: Option<f64>,
    /// Population standard deviation of daily returns.
    pub volatility: Option<f64>,
    /// Sum of returns over the regime's periods.
    pub cumulative: f64,
}

/// Statistics of `returns` grouped by `states`, one entry per state.
pub fn regime_statistics(states: &[usize], returns: &[f64], n_states: usize) -> Result<Vec<RegimeStats>> {
    if states.len() != returns.len() {
        return Err(Error::DimensionMismatch {
            expected: states.len(),
            found: returns.len(),
        });
    }
    let mut out = Vec::with_capacity(n_states);
    for k in 0..n_states {
        let r: Vec<f64> = states
            .iter()
            .zip(returns)
            .filter(|(s, _)| **s == k)
            .map(|(_, r)| *r)
            .collect();
        let count = r.len();
        let cumulative = r.iter().sum::<f64>();
        let (mean, volatility) = if count == 0 {
            (None, None)
        } else {
            let m = cumulative / count as f64;
            let v = r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / count as f64;
            (Some(m), Some(v.sqrt()))
        };
        out.push(RegimeStats {
            count,
            mean,
            volatility,
            cumulative,
        });
    }
    Ok(out)
}

/// Map raw cluster index → semantic regime, ordering states by cumulative
/// return, highest first (so for `K = 2`, label 0 is bullish). Ties keep
/// the lower raw index first.
pub fn regime_labels(stats: &[RegimeStats]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..stats.len()).collect();
    order.sort_by(|&a, &b| stats[b].cumulative.total_cmp(&stats[a].cumulative).then(a.cmp(&b)));
    let mut labels = vec![0; stats.len()];
    for (rank, &raw) in order.iter().enumerate() {
        labels[raw] = rank;
    }
    labels
}

/// One coordinate-descent run from a given initialization.
#[derive(Debug, Clone)]
pub struct DescentRun {
    pub centroids: Matrix,
    pub states: Vec<usize>,
    pub objective: f64,
    /// Objective after every S-step, starting with the initial assignment.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpModelFit {
    pub centroids: Matrix,
    /// Raw cluster index per period.
    pub states: Vec<usize>,
    pub jump_penalty: f64,
    pub objective: f64,
    /// `labels[raw] = semantic regime`.
    pub labels: Vec<usize>,
    /// Transition matrix over raw states.
    pub transition_matrix: Matrix,
    /// Statistics over raw states, from the caller-supplied return series.
    pub regime_stats: Vec<RegimeStats>,
    pub restart: usize,
    pub iterations: usize,
}

impl JumpModelFit {
    pub fn n_states(&self) -> usize {
        self.centroids.rows()
    }

    /// Semantic regime per period (0 = bullish for `K = 2`).
    pub fn regimes(&self) -> Vec<usize> {
        self.states.iter().map(|&s| self.labels[s]).collect()
    }

    /// Statistics of the regime with the given semantic label.
    pub fn stats_for_regime(&self, regime: usize) -> &RegimeStats {
        let raw = self
            .labels
            .iter()
            .position(|&l| l == regime)
            .expect("labels are a permutation");
        &self.regime_stats[raw]
    }

    pub fn switches(&self) -> usize {
        count_switches(&self.states)
    }
}

/// Jump-model estimator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpModel {
    pub n_states: usize,
    pub jump_penalty: f64,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

impl JumpModel {
    pub fn new(n_states: usize, jump_penalty: f64) -> Self {
        JumpModel {
            n_states,
            jump_penalty,
            restarts: DEFAULT_RESTARTS,
            max_iter: DEFAULT_MAX_ITER,
            seed: 0,
        }
    }

    pub fn with_restarts(mut self, restarts: usize) -> Self {
        self.restarts = restarts;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if self.n_states == 0 {
            return Err(Error::invalid("need at least one state"));
        }
        if x.rows() <= self.n_states {
            return Err(Error::invalid(format!(
                "need more rows ({}) than states ({})",
                x.rows(),
                self.n_states
            )));
        }
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be >= 1"));
        }
        if !(self.jump_penalty >= 0.0) || !self.jump_penalty.is_finite() {
            return Err(Error::invalid(format!(
                "jump penalty must be finite and >= 0, got {}",
                self.jump_penalty
            )));
        }
        if !x.is_finite() {
            return Err(Error::data("jump model features contain non-finite values"));
        }
        Ok(())
    }

    /// Per-restart seeds derived from the master seed.
    pub fn restart_seeds(&self) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.restarts).map(|_| rng.gen()).collect()
    }

    /// k-means++ style seeding: the first centroid is a uniformly drawn row,
    /// each further one is drawn with probability proportional to the
    /// squared distance to the nearest centroid chosen so far.
    pub fn initial_centroids(&self, x: &Matrix, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = x.rows();
        let mut chosen = vec![rng.gen_range(0..t)];
        let mut nearest: Vec<f64> = (0..t)
            .map(|i| half_sq_dist(x.row(i), x.row(chosen[0])))
            .collect();
        while chosen.len() < self.n_states {
            let total: f64 = nearest.iter().sum();
            let pick = if total > 0.0 {
                let mut u = rng.gen::<f64>() * total;
                let mut pick = t - 1;
                for (i, d) in nearest.iter().enumerate() {
                    if u < *d {
                        pick = i;
                        break;
                    }
                    u -= d;
                }
                pick
            } else {
                rng.gen_range(0..t)
            };
            chosen.push(pick);
            for (i, d) in nearest.iter_mut().enumerate() {
                *d = d.min(half_sq_dist(x.row(i), x.row(pick)));
            }
        }
        x.select_rows(&chosen)
    }

    /// Coordinate descent from `init` until the state sequence stops
    /// changing or `max_iter` Θ-steps have been taken.
    pub fn descend(&self, x: &Matrix, init: Matrix) -> Result<DescentRun> {
        let lambda = self.jump_penalty;
        let mut centroids = init;
        let (mut states, mut cost) = assign_states(x, &centroids, lambda)?;
        let mut trace = vec![cost];
        let mut converged = false;
        let mut iterations = 0;
        while iterations < self.max_iter {
            iterations += 1;
            update_centroids(x, &states, &mut centroids);
            let (new_states, new_cost) = assign_states(x, &centroids, lambda)?;
            trace.push(new_cost);
            cost = new_cost;
            if new_states == states {
                converged = true;
                break;
            }
            states = new_states;
        }
        Ok(DescentRun {
            centroids,
            states,
            objective: cost,
            trace,
            iterations,
            converged,
        })
    }

    /// Fit with restarts and label regimes using `returns` (aligned with
    /// the rows of `x`).
    pub fn fit(&self, x: &Matrix, returns: &[f64]) -> Result<JumpModelFit> {
        self.check(x)?;
        if returns.len() != x.rows() {
            return Err(Error::DimensionMismatch {
                expected: x.rows(),
                found: returns.len(),
            });
        }
        let mut best: Option<(usize, DescentRun)> = None;
        for (restart, seed) in self.restart_seeds().into_iter().enumerate() {
            let run = self.descend(x, self.initial_centroids(x, seed))?;
            let better = match &best {
                None => true,
                Some((_, b)) => run.objective < b.objective,
            };
            if better {
                best = Some((restart, run));
            }
        }
        let (restart, run) = best.expect("restarts >= 1");
        let regime_stats = regime_statistics(&run.states, returns, self.n_states)?;
        Ok(JumpModelFit {
            labels: regime_labels(&regime_stats),
            transition_matrix: transition_matrix(&run.states, self.n_states)?,
            regime_stats,
            jump_penalty: self.jump_penalty,
            objective: run.objective,
            centroids: run.centroids,
            states: run.states,
            restart,
            iterations: run.iterations,
        })
    }
}

/// Θ-step: each centroid becomes the mean of its assigned rows. An empty
/// cluster is moved onto the row with the largest current loss.
fn update_centroids(x: &Matrix, states: &[usize], centroids: &mut Matrix) {
    let (k_len, d) = (centroids.rows(), centroids.cols());
    let mut sums = Matrix::zeros(k_len, d);
    let mut counts = vec![0usize; k_len];
    for (t, &s) in states.iter().enumerate() {
        counts[s] += 1;
        for (acc, v) in sums.row_mut(s).iter_mut().zip(x.row(t)) {
            *acc += v;
        }
    }
    let mut taken: Vec<usize> = Vec::new();
    for k in 0..k_len {
        if counts[k] > 0 {
            let c = counts[k] as f64;
            for (dst, s) in centroids.row_mut(k).iter_mut().zip(sums.row(k)) {
                *dst = s / c;
            }
        }
    }
    for k in 0..k_len {
        if counts[k] == 0 {
            // worst-fit row under the updated centroids, lowest index on ties
            let mut worst = (0usize, f64::NEG_INFINITY);
            for (t, &s) in states.iter().enumerate() {
                if taken.contains(&t) {
                    continue;
                }
                let l = half_sq_dist(x.row(t), centroids.row(s));
                if l > worst.1 {
                    worst = (t, l);
                }
            }
            taken.push(worst.0);
            let row = x.row(worst.0).to_vec();
            centroids.row_mut(k).copy_from_slice(&row);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dp_on_synthetic_loss_table() {
        let l = Matrix::from_rows(&[[0.0, 10.0], [10.0, 0.0], [0.0, 10.0]]).unwrap();
        assert_eq!(assign_states_from_losses(&l, 1.0).unwrap(), (vec![0, 1, 0], 2.0));
        assert_eq!(assign_states_from_losses(&l, 6.0).unwrap(), (vec![0, 0, 0], 10.0));
    }

    #[test]
    fn zero_penalty_is_nearest_centroid() {
        let x = Matrix::column_vector(&[1.0, 9.0, 2.0]);
        let c = Matrix::column_vector(&[0.0, 10.0]);
        assert_eq!(assign_states(&x, &c, 0.0).unwrap().0, vec![0, 1, 0]);
    }

    #[test]
    fn huge_penalty_gives_constant_path() {
        let x = Matrix::column_vector(&[1.0, 9.0, 8.0, 7.5]);
        let c = Matrix::column_vector(&[0.0, 10.0]);
        let (s, _) = assign_states(&x, &c, 1e9).unwrap();
        assert_eq!(s, vec![1, 1, 1, 1]);
    }

    #[test]
    fn assign_states_errors() {
        let x = Matrix::column_vector(&[1.0, f64::NAN]);
        let c = Matrix::column_vector(&[0.0, 1.0]);
        assert!(assign_states(&x, &c, 1.0).is_err());
        let x2 = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(matches!(
            assign_states(&x2, &c, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(assign_states(&Matrix::column_vector(&[1.0]), &c, -1.0).is_err());
    }

    #[test]
    fn transition_matrix_examples() {
        let m = transition_matrix(&[0, 0, 0, 0], 2).unwrap();
        assert_eq!(m.row(0), &[1.0, 0.0]);
        assert_eq!(m.row(1), &[0.5, 0.5]);
        let m = transition_matrix(&[0, 1, 0, 1, 0], 2).unwrap();
        assert_eq!(m.row(0), &[0.0, 1.0]);
        assert_eq!(m.row(1), &[1.0, 0.0]);
        let m = transition_matrix(&[0, 0, 1, 1], 2).unwrap();
        assert_eq!(m.row(0), &[0.5, 0.5]);
        assert_eq!(m.row(1), &[0.0, 1.0]);
        assert!(transition_matrix(&[0, 2], 2).is_err());
    }

    #[test]
    fn regime_statistics_examples() {
        let s = regime_statistics(&[0, 1], &[0.02, -0.01], 2).unwrap();
        assert_eq!(s[0].mean, Some(0.02));
        assert_eq!(s[1].mean, Some(-0.01));
        assert_eq!(regime_labels(&s), vec![BULLISH, BEARISH]);

        let s = regime_statistics(&[1, 0, 1, 0], &[-0.01, 0.01, -0.01, 0.01], 2).unwrap();
        assert_eq!(regime_labels(&s), vec![0, 1]);

        let s = regime_statistics(&[1, 1, 1], &[0.01, 0.02, -0.005], 2).unwrap();
        assert_eq!(s[0].count, 0);
        assert_eq!(s[0].mean, None);
        assert!((s[1].cumulative - 0.025).abs() < 1e-15);
        assert!(regime_statistics(&[0], &[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn fit_rejects_bad_shapes() {
        let x = Matrix::column_vector(&[1.0, 2.0]);
        assert!(JumpModel::new(2, 1.0).fit(&x, &[0.0, 0.0]).is_err());
        let x = Matrix::column_vector(&[1.0, 2.0, f64::INFINITY]);
        assert!(JumpModel::new(2, 1.0).fit(&x, &[0.0; 3]).is_err());
        let x = Matrix::column_vector(&[1.0, 2.0, 3.0]);
        assert!(JumpModel::new(2, 1.0).with_restarts(0).fit(&x, &[0.0; 3]).is_err());
    }

    #[test]
    fn empty_cluster_is_reseeded_to_worst_row() {
        let x = Matrix::column_vector(&[0.0, 0.1, 5.0]);
        let mut c = Matrix::column_vector(&[0.0, 100.0]);
        update_centroids(&x, &[0, 0, 0], &mut c);
        assert_eq!(c.column(0), vec![5.1 / 3.0, 5.0]);
    }
}
