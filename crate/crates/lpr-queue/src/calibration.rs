//! Parameter calibration.
//!
//! * saturation headway `h`: 15th percentile of observed discharge headways;
//! * minimum inter-group departure gap: the running-time range `b - a`;
//! * discharging speed `v_d` and delay threshold `D_thr`: grid search
//!   minimizing a weighted squared loss over calibration cycles, either on
//!   maximum queue length and its occurrence time (full mode) or on maximum
//!   queue length alone (where `v_d` drops out of the formulas entirely).

use serde::{Deserialize, Serialize};

use crate::running_time::RunningTimeDist;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Number of leading cycles used for calibration.
    pub calib_cycles: usize,
    /// Weight of the max-queue term in the loss.
    pub alpha: f64,
    /// Weight of the occurrence-time term in the loss.
    pub beta: f64,
    /// `(lo, hi, step)` m/s.
    pub v_d_grid: (f64, f64, f64),
    /// `(lo, hi, step)` s.
    pub d_thr_grid: (f64, f64, f64),
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            calib_cycles: 12,
            alpha: 1.0,
            beta: 1.0,
            v_d_grid: (4.0, 16.0, 0.5),
            d_thr_grid: (0.0, 12.0, 0.3),
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 || self.beta < 0.0 || (self.alpha == 0.0 && self.beta == 0.0) {
            return Err(Error::InvalidConfig(
                "loss weights must be nonnegative and not both zero".into(),
            ));
        }
        for (name, (lo, hi, step)) in [("v_d", self.v_d_grid), ("d_thr", self.d_thr_grid)] {
            if !(step > 0.0 && hi >= lo) {
                return Err(Error::InvalidConfig(format!("empty {name} grid")));
            }
        }
        Ok(())
    }
}

/// Grid points `lo, lo+step, ..., <= hi` (with a half-step tolerance).
pub fn grid_points((lo, hi, step): (f64, f64, f64)) -> Vec<f64> {
    let mut points = Vec::new();
    let mut k = 0usize;
    loop {
        let v = lo + k as f64 * step;
        if v > hi + step * 1e-9 {
            break;
        }
        points.push(v);
        k += 1;
    }
    points
}

/// Linear-interpolation percentile (rank `(n-1)*p` between order statistics).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let rank = (sorted.len() - 1) as f64 * p;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Saturation headway: the 15th percentile of observed headways.
pub fn calibrate_headway(observed_headways: &[f64]) -> Result<f64> {
    if observed_headways.len() < 20 {
        return Err(Error::TooFewSamples {
            context: "headway calibration",
            need: 20,
            got: observed_headways.len(),
        });
    }
    Ok(percentile(observed_headways, 0.15))
}

/// Minimum inter-group departure gap: the running-time range.
pub fn calibrate_min_gap(dist: &RunningTimeDist) -> f64 {
    let gap = dist.range();
    if gap == 0.0 {
        log::warn!("degenerate running-time range; min_gap = 0");
    }
    gap
}

/// Ground truth of one calibration cycle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CycleTruthPoint {
    pub max_queue: f64,
    /// First second attaining the cycle maximum.
    pub t_max: f64,
}

/// One estimate produced by the pipeline under a candidate parameter pair.
#[derive(Debug, Clone, Copy)]
pub struct CycleEstimatePoint {
    pub max_queue: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Eq.-30 style: joint `(v_d, D_thr)` on max queue and occurrence time.
    Full,
    /// Eq.-31 style: `D_thr` only, from max queue lengths (no `v_d`).
    MaxQueueOnly,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridOutcome {
    /// Absent in [`CalibrationMode::MaxQueueOnly`].
    pub v_d: Option<f64>,
    pub d_thr: f64,
    pub loss: f64,
    /// Full loss surface as `(v_d, d_thr, loss)` rows.
    pub surface: Vec<(f64, f64, f64)>,
}

/// Grid-search calibration. `runner(v_d, d_thr)` must return one estimate per
/// calibration cycle, aligned with `truth`. Ties prefer the smallest `D_thr`,
/// then the smallest `v_d`.
pub fn calibrate_grid<F>(
    mut runner: F,
    truth: &[CycleTruthPoint],
    config: &CalibrationConfig,
    mode: CalibrationMode,
) -> Result<GridOutcome>
where
    F: FnMut(f64, f64) -> Vec<CycleEstimatePoint>,
{
    config.validate()?;
    if truth.is_empty() {
        return Err(Error::invalid("no calibration ground truth"));
    }
    let v_values = match mode {
        CalibrationMode::Full => grid_points(config.v_d_grid),
        CalibrationMode::MaxQueueOnly => vec![config.v_d_grid.0],
    };
    let d_values = grid_points(config.d_thr_grid);

    let mut surface = Vec::with_capacity(v_values.len() * d_values.len());
    let mut best: Option<(f64, f64, f64)> = None; // (loss, d_thr, v_d)
    for &v_d in &v_values {
        for &d_thr in &d_values {
            let estimates = runner(v_d, d_thr);
            if estimates.len() != truth.len() {
                return Err(Error::invalid(format!(
                    "runner produced {} estimates for {} calibration cycles",
                    estimates.len(),
                    truth.len()
                )));
            }
            let loss: f64 = match mode {
                CalibrationMode::Full => estimates
                    .iter()
                    .zip(truth)
                    .map(|(e, t)| {
                        let dq = e.max_queue - t.max_queue;
                        let dt = e.t_max - t.t_max;
                        config.alpha * dq * dq + config.beta * dt * dt
                    })
                    .sum(),
                CalibrationMode::MaxQueueOnly => estimates
                    .iter()
                    .zip(truth)
                    .map(|(e, t)| {
                        let dq = e.max_queue - t.max_queue;
                        dq * dq
                    })
                    .sum(),
            };
            surface.push((v_d, d_thr, loss));
            let candidate = (loss, d_thr, v_d);
            let better = match best {
                None => true,
                Some((bl, bd, bv)) => {
                    loss < bl
                        || (loss == bl && (d_thr < bd || (d_thr == bd && v_d < bv)))
                }
            };
            if better {
                best = Some(candidate);
            }
        }
    }
    let (loss, d_thr, v_d) = best.expect("grids validated nonempty");
    Ok(GridOutcome {
        v_d: match mode {
            CalibrationMode::Full => Some(v_d),
            CalibrationMode::MaxQueueOnly => None,
        },
        d_thr,
        loss,
        surface,
    })
}
