//! Evaluation metrics against ground truth.
//!
//! Maximum queue lengths are scored per cycle with MAE, RMSE, MAPE and the
//! 95%-interval coverage rate; queue profiles are scored per second with
//! separate MAEs over red and green phases plus coverage. Cycles with zero
//! ground truth are excluded from MAPE and counted.

use serde::{Deserialize, Serialize};

use crate::lpr::SignalTiming;

/// Point summary of one estimated queue distribution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QueueSummary {
    pub mean: f64,
    pub ci_low: usize,
    pub ci_high: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaxQueueMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percent; `NaN` when every cycle was excluded.
    pub mape: f64,
    /// Fraction of cycles whose truth lies inside the 95% interval.
    pub coverage: f64,
    pub n_cycles: usize,
    /// Cycles excluded from MAPE for zero ground truth.
    pub mape_excluded: usize,
}

/// Per-cycle maximum-queue metrics.
pub fn evaluate_max_queue(estimates: &[QueueSummary], truth: &[f64]) -> MaxQueueMetrics {
    assert_eq!(
        estimates.len(),
        truth.len(),
        "estimates and truth must align per cycle"
    );
    let n = truth.len();
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut ape_sum = 0.0;
    let mut ape_n = 0usize;
    let mut covered = 0usize;
    for (est, y) in estimates.iter().zip(truth) {
        let err = y - est.mean;
        abs_sum += err.abs();
        sq_sum += err * err;
        if *y != 0.0 {
            ape_sum += (err / y).abs();
            ape_n += 1;
        }
        if est.ci_low as f64 <= *y && *y <= est.ci_high as f64 {
            covered += 1;
        }
    }
    MaxQueueMetrics {
        mae: abs_sum / n as f64,
        rmse: (sq_sum / n as f64).sqrt(),
        mape: if ape_n > 0 {
            100.0 * ape_sum / ape_n as f64
        } else {
            f64::NAN
        },
        coverage: covered as f64 / n as f64,
        n_cycles: n,
        mape_excluded: n - ape_n,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileMetrics {
    pub mae_red: f64,
    pub mae_green: f64,
    pub coverage: f64,
    pub n_seconds: usize,
}

/// Per-second profile metrics; `seconds` pairs each integer second with the
/// estimate summary and the true count.
pub fn evaluate_profile(
    seconds: &[(i64, QueueSummary, f64)],
    timing: &SignalTiming,
) -> ProfileMetrics {
    let mut red_abs = 0.0;
    let mut red_n = 0usize;
    let mut green_abs = 0.0;
    let mut green_n = 0usize;
    let mut covered = 0usize;
    for (t, est, y) in seconds {
        let err = (y - est.mean).abs();
        if timing.in_red(*t as f64) {
            red_abs += err;
            red_n += 1;
        } else {
            green_abs += err;
            green_n += 1;
        }
        if est.ci_low as f64 <= *y && *y <= est.ci_high as f64 {
            covered += 1;
        }
    }
    ProfileMetrics {
        mae_red: if red_n > 0 { red_abs / red_n as f64 } else { 0.0 },
        mae_green: if green_n > 0 {
            green_abs / green_n as f64
        } else {
            0.0
        },
        coverage: covered as f64 / seconds.len().max(1) as f64,
        n_seconds: seconds.len(),
    }
}

/// Combined evaluation report, serialized into the metrics artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub max_queue: MaxQueueMetrics,
    pub profile: Option<ProfileMetrics>,
}

/// Evaluate maximum-queue estimates and, when per-second data is available,
/// the queue profile.
pub fn evaluate_metrics(
    max_estimates: &[QueueSummary],
    max_truth: &[f64],
    profile_seconds: Option<&[(i64, QueueSummary, f64)]>,
    timing: &SignalTiming,
) -> EvaluationReport {
    EvaluationReport {
        max_queue: evaluate_max_queue(max_estimates, max_truth),
        profile: profile_seconds.map(|s| evaluate_profile(s, timing)),
    }
}
