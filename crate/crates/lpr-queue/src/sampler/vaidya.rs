//! Vaidya walk: Gaussian proposals shaped by the volumetric-logarithmic
//! barrier metric.
//!
//! At a point `x` with slacks `s_i = b_i - a_i . x`, the log-barrier Hessian
//! is `H_x = sum_i a_i a_i^T / s_i^2` with leverage scores
//! `sigma_i = a_i^T H_x^{-1} a_i / s_i^2`. The Vaidya metric re-weights each
//! outer product by `sigma_i + n/m`:
//!
//! ```text
//! V_x = sum_i (sigma_i + n/m) a_i a_i^T / s_i^2
//! ```
//!
//! and the proposal is `z ~ N(x, r^2/sqrt(mn) * V_x^{-1})`, accepted by the
//! Metropolis filter for the uniform target. The walk mixes in
//! `O(sqrt(m) n^1.5)` steps. A Cholesky failure of the metric (numerically
//! degenerate corner) falls back to a hit-and-run step for that iteration.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::hit_and_run::hit_and_run_step;
use super::PolytopeWalk;
use crate::nat::ConstraintSystem;
use crate::rng::SplitMix64;

pub const DEFAULT_RADIUS: f64 = 1.25;

struct Metric {
    chol: Cholesky<f64, nalgebra::Dyn>,
    half_log_det: f64,
}

pub struct VaidyaWalk {
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// Proposal scale `r / (m n)^(1/4)`.
    scale: f64,
    cached: Option<(DVector<f64>, Metric)>,
}

impl VaidyaWalk {
    pub fn new(system: &ConstraintSystem, radius: f64) -> Self {
        let m = system.rows() as f64;
        let n = system.dim() as f64;
        VaidyaWalk {
            a: system.a.clone(),
            b: system.b.clone(),
            scale: radius / (m * n).powf(0.25),
            cached: None,
        }
    }

    fn slacks(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        let s = &self.b - &self.a * x;
        if s.iter().all(|v| *v > 0.0) {
            Some(s)
        } else {
            None
        }
    }

    /// Vaidya metric at `x`; `None` when `x` is infeasible or the metric is
    /// numerically degenerate.
    fn metric(&self, x: &DVector<f64>) -> Option<Metric> {
        let (m, n) = (self.a.nrows(), self.a.ncols());
        let s = self.slacks(x)?;

        // Rows of A scaled by 1/s_i.
        let mut scaled = self.a.clone();
        for i in 0..m {
            let inv = 1.0 / s[i];
            for j in 0..n {
                scaled[(i, j)] *= inv;
            }
        }
        let h = scaled.transpose() * &scaled;
        let chol_h = Cholesky::new(h)?;

        let beta = n as f64 / m as f64;
        let mut v = DMatrix::zeros(n, n);
        for i in 0..m {
            let row = scaled.row(i).transpose();
            let leverage = row.dot(&chol_h.solve(&row));
            let w = leverage + beta;
            // v += w * row * row^T
            for p in 0..n {
                let rp = row[p] * w;
                for q in 0..n {
                    v[(p, q)] += rp * row[q];
                }
            }
        }
        let chol = Cholesky::new(v)?;
        let half_log_det = chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d: &f64| d.ln())
            .sum();
        Some(Metric {
            chol,
            half_log_det,
        })
    }

    /// `-ln q_x(z)` up to additive constants shared by both directions.
    fn log_density(&self, metric: &Metric, from: &DVector<f64>, to: &DVector<f64>) -> f64 {
        let d = to - from;
        let l = metric.chol.l_dirty();
        // (d^T V d) via the lower factor: ||L^T d||^2.
        let mut quad = 0.0;
        for j in 0..d.len() {
            let mut acc = 0.0;
            for i in j..d.len() {
                acc += l[(i, j)] * d[i];
            }
            quad += acc * acc;
        }
        metric.half_log_det - quad / (2.0 * self.scale * self.scale)
    }
}

impl PolytopeWalk for VaidyaWalk {
    fn name(&self) -> &'static str {
        "vaidya"
    }

    fn step(&mut self, x: &mut DVector<f64>, rng: &mut SplitMix64) -> bool {
        let current = match self.cached.take() {
            Some((pt, metric)) if pt == *x => Some(metric),
            _ => self.metric(x),
        };
        let Some(metric_x) = current else {
            // Degenerate metric: advance by a hit-and-run step instead.
            return hit_and_run_step(&self.a, &self.b, x, rng);
        };

        let n = x.len();
        let xi = DVector::from_fn(n, |_, _| -> f64 { StandardNormal.sample(rng) });
        // w = L^{-T} xi so that Cov(w) = V^{-1}.
        let mut w = xi;
        metric_x
            .chol
            .l_dirty()
            .transpose()
            .solve_upper_triangular_mut(&mut w);
        let z = &*x + self.scale * w;

        let accepted = if let Some(metric_z) = self.metric(&z) {
            let log_ratio =
                self.log_density(&metric_z, &z, x) - self.log_density(&metric_x, x, &z);
            let accept = log_ratio >= 0.0 || rng.uniform().ln() < log_ratio;
            if accept {
                *x = z.clone();
                self.cached = Some((z, metric_z));
                true
            } else {
                self.cached = Some((x.clone(), metric_x));
                false
            }
        } else {
            self.cached = Some((x.clone(), metric_x));
            false
        };
        accepted
    }
}
