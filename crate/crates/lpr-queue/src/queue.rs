//! Stochastic queue profiles and per-cycle maximum queue lengths.
//!
//! For cycle `c`, the candidates are the vehicles departing in or after the
//! cycle, ordered by departure time; the `i`-th candidate occupies queuing
//! position `i` with `q_i = i * x` meters of queue ahead of the stop line.
//! Shockwave geometry gives each position a potential queuing window inside
//! the cycle, and the arrival distributions turn position occupancy into
//! probabilities:
//!
//! * profile:   `P(Q(t) >= i) = P(t_i_a <= t + q_i/v_d - D_thr)` while `t`
//!   lies in position `i`'s queuing window;
//! * max queue: `P(Q_c >= i) = P(t_i_a <= t_green + Delta_i - D_thr)`,
//!   evaluated for increasing `i` until the probability hits zero.
//!
//! Positions whose window misses `t` are back-filled from the next valid
//! position, and the survival sequence is clamped non-increasing before
//! differencing (a queue of `i+1` vehicles implies one of at least `i`).
//! With point-mass arrival inputs every probability is 0 or 1 and the whole
//! module reduces to deterministic counting.

use serde::{Deserialize, Serialize};

use crate::arrival::ArrivalPmf;
use crate::lpr::Cycle;

/// Geometric and behavioral parameters of the queue model.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QueueGeometry {
    /// Queuing space per vehicle, meters.
    pub queuing_space: f64,
    /// Fixed discharging speed toward the stop line, m/s.
    pub discharge_speed: f64,
    /// Saturation headway, seconds.
    pub saturation_headway: f64,
    /// Minimum delay counted as a genuine stop, seconds.
    pub delay_threshold: f64,
}

impl QueueGeometry {
    /// Queue length in meters when `i` vehicles are queued.
    pub fn queue_meters(&self, i: usize) -> f64 {
        self.queuing_space * i as f64
    }
}

/// Queue-count distribution at one time step or for one cycle maximum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueuePmf {
    /// `P(Q = i)` for `i = 0..`.
    pub probabilities: Vec<f64>,
    pub mean: f64,
    pub ci_low: usize,
    pub ci_high: usize,
}

impl QueuePmf {
    /// Build from the survival sequence `S[i] = P(Q >= i)` (with `S[0] = 1`);
    /// the sequence is clamped non-increasing first.
    fn from_survival(mut survival: Vec<f64>) -> Self {
        if survival.is_empty() {
            survival.push(1.0);
        }
        survival[0] = 1.0;
        for i in (0..survival.len() - 1).rev() {
            survival[i] = survival[i].max(survival[i + 1]);
        }
        let mut probabilities = Vec::with_capacity(survival.len());
        for i in 0..survival.len() {
            let next = survival.get(i + 1).copied().unwrap_or(0.0);
            probabilities.push(survival[i] - next);
        }
        let mean: f64 = survival.iter().skip(1).sum();
        let (ci_low, ci_high) = ci_bounds(&survival);
        QueuePmf {
            probabilities,
            mean,
            ci_low,
            ci_high,
        }
    }

    pub fn degenerate_empty() -> Self {
        QueuePmf {
            probabilities: vec![1.0],
            mean: 0.0,
            ci_low: 0,
            ci_high: 0,
        }
    }

    /// `P(Q >= i)`.
    pub fn survival(&self, i: usize) -> f64 {
        self.probabilities.iter().skip(i).sum()
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum()
    }
}

/// 95% interval from a survival sequence: `L = max{i : P(Q>=i) >= 0.975}`,
/// `U = min{i : P(Q>=i+1) <= 0.025}` (the largest count still plausible).
fn ci_bounds(survival: &[f64]) -> (usize, usize) {
    let mut low = 0;
    for (i, s) in survival.iter().enumerate() {
        if *s >= 0.975 {
            low = i;
        }
    }
    let mut high = survival.len() - 1;
    for i in 0..survival.len() {
        let next = survival.get(i + 1).copied().unwrap_or(0.0);
        if next <= 0.025 {
            high = i;
            break;
        }
    }
    (low, high)
}

/// Mean and 95% bounds of a queue pmf.
pub fn summarize(pmf: &QueuePmf) -> (f64, usize, usize) {
    (pmf.mean, pmf.ci_low, pmf.ci_high)
}

/// One queue-estimation candidate: a vehicle departing in or after the cycle.
#[derive(Debug, Clone)]
pub struct QueueCandidate<'a> {
    /// Actual stop-line departure time.
    pub departure_time: f64,
    pub pmf: &'a ArrivalPmf,
}

/// Potential queuing window of position `i` (1-based) in `cycle`.
///
/// The dissipation wave `w = v_d q_i / (v_d Delta_i - q_i)` reaches position
/// `q_i` meters after `q_i / w` seconds, so the window is the red interval
/// shifted by that offset; its width always equals the red duration. A
/// non-physical wave (`v_d Delta_i <= q_i`) collapses the window onto the red
/// interval itself and is flagged.
pub fn queuing_time_range(
    i: usize,
    cycle: &Cycle,
    geometry: &QueueGeometry,
    departure_time: f64,
) -> ((f64, f64), bool) {
    debug_assert!(i >= 1);
    let q_i = geometry.queue_meters(i);
    let delta = (geometry.saturation_headway * i as f64)
        .min(departure_time - cycle.green_start);
    let denom = geometry.discharge_speed * delta - q_i;
    if denom <= 0.0 {
        log::warn!(
            "non-physical dissipation wave at position {i} (v_d*Delta = {:.3} <= q_i = {q_i:.3})",
            geometry.discharge_speed * delta
        );
        return ((cycle.red_start, cycle.green_start), true);
    }
    let wave = geometry.discharge_speed * q_i / denom;
    let offset = q_i / wave;
    ((cycle.red_start + offset, cycle.green_start + offset), false)
}

/// Per-second queue-length distributions over `[window_start, window_end)`.
///
/// `candidates` must hold the vehicles departing in or after `cycle`, in
/// departure order. Returns one pmf per integer second.
pub fn estimate_queue_profile(
    candidates: &[QueueCandidate],
    cycle: &Cycle,
    geometry: &QueueGeometry,
    window_start: i64,
    window_end: i64,
) -> Vec<(i64, QueuePmf)> {
    let ranges: Vec<(f64, f64)> = candidates
        .iter()
        .enumerate()
        .map(|(idx, c)| queuing_time_range(idx + 1, cycle, geometry, c.departure_time).0)
        .collect();

    let mut out = Vec::with_capacity((window_end - window_start).max(0) as usize);
    for t in window_start..window_end {
        let tf = t as f64;
        // Entry per position: None when t is outside the queuing window.
        let mut entries: Vec<Option<f64>> = Vec::new();
        for (idx, candidate) in candidates.iter().enumerate() {
            let (lo, hi) = ranges[idx];
            if tf < lo || tf > hi {
                entries.push(None);
                continue;
            }
            let stop_line_time = tf + geometry.queue_meters(idx + 1) / geometry.discharge_speed;
            let p = candidate
                .pmf
                .cdf_at(stop_line_time - geometry.delay_threshold);
            entries.push(Some(p));
        }
        // Drop trailing unavailable positions, then fill interior gaps from
        // the next valid estimate.
        while entries.last() == Some(&None) {
            entries.pop();
        }
        let mut survival = vec![1.0];
        let mut next_valid = 0.0;
        let mut filled: Vec<f64> = vec![0.0; entries.len()];
        for i in (0..entries.len()).rev() {
            if let Some(p) = entries[i] {
                next_valid = p;
            }
            filled[i] = next_valid;
        }
        survival.extend(filled);
        out.push((t, QueuePmf::from_survival(survival)));
    }
    out
}

/// Maximum-queue distribution for `cycle`.
///
/// Evaluates `P(Q_c >= i)` at the latest possible queuing instant of each
/// position (`t_green + Delta_i`, which sidesteps the discharging speed) for
/// increasing `i` until the probability reaches zero or candidates run out.
pub fn estimate_max_queue(
    candidates: &[QueueCandidate],
    cycle: &Cycle,
    geometry: &QueueGeometry,
) -> QueuePmf {
    if candidates.is_empty() {
        return QueuePmf::degenerate_empty();
    }
    let mut survival = vec![1.0];
    for (idx, candidate) in candidates.iter().enumerate() {
        let i = idx + 1;
        let delta = (geometry.saturation_headway * i as f64)
            .min(candidate.departure_time - cycle.green_start);
        let threshold = cycle.green_start + delta - geometry.delay_threshold;
        let p = candidate.pmf.cdf_at(threshold);
        survival.push(p);
        if p == 0.0 {
            break;
        }
    }
    QueuePmf::from_survival(survival)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geometry() -> QueueGeometry {
        QueueGeometry {
            queuing_space: 7.0,
            discharge_speed: 10.0,
            saturation_headway: 2.0,
            delay_threshold: 0.0,
        }
    }

    fn cycle() -> Cycle {
        Cycle {
            red_start: 100.0,
            green_start: 140.0,
            cycle_end: 180.0,
        }
    }

    #[test]
    fn range_width_equals_red_duration() {
        let g = geometry();
        let c = cycle();
        for i in 1..10 {
            let ((lo, hi), _) = queuing_time_range(i, &c, &g, 150.0 + 2.0 * i as f64);
            assert!((hi - lo - c.red_duration()).abs() < 1e-9);
        }
    }

    #[test]
    fn hand_evaluated_wave_offset() {
        // i=1, x=7, v_d=10, h=2, departure 5 s after green:
        // Delta = min(2, 5) = 2, w = 10*7/(10*2-7) = 70/13, offset = 7w^-1 = 1.3.
        let g = geometry();
        let c = cycle();
        let ((lo, hi), clamped) = queuing_time_range(1, &c, &g, c.green_start + 5.0);
        assert!(!clamped);
        assert!((lo - (c.red_start + 1.3)).abs() < 1e-9);
        assert!((hi - (c.green_start + 1.3)).abs() < 1e-9);
    }

    #[test]
    fn non_physical_wave_clamps_to_red_interval() {
        let g = QueueGeometry {
            queuing_space: 7.0,
            discharge_speed: 3.0,
            saturation_headway: 2.0,
            delay_threshold: 0.0,
        };
        let c = cycle();
        // v_d * Delta = 3*2 = 6 < q_1 = 7.
        let ((lo, hi), clamped) = queuing_time_range(1, &c, &g, c.green_start + 100.0);
        assert!(clamped);
        assert_eq!((lo, hi), (c.red_start, c.green_start));
    }

    #[test]
    fn no_arrivals_means_zero_queue() {
        let pmf = ArrivalPmf::point_mass(0, 1_000);
        let candidates = vec![QueueCandidate {
            departure_time: 1_050.0,
            pmf: &pmf,
        }];
        let profile = estimate_queue_profile(&candidates, &cycle(), &geometry(), 100, 104);
        for (_, q) in &profile {
            assert_eq!(q.mean, 0.0);
            assert_eq!(q.probabilities[0], 1.0);
        }
    }

    #[test]
    fn na_fill_uses_next_valid() {
        // Survival of positions 1..3 missing at t, position 4 valid with
        // p4: the filled sequence must repeat p4 downward.
        let survival = vec![1.0, 0.8, 0.8, 0.8, 0.8, 0.4, 0.0];
        let q = QueuePmf::from_survival(survival);
        assert!((q.probabilities[0] - 0.2).abs() < 1e-12);
        assert!((q.probabilities[4] - 0.4).abs() < 1e-12);
        assert!((q.total() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_candidates_degenerate_at_zero() {
        let q = estimate_max_queue(&[], &cycle(), &geometry());
        assert_eq!(q.mean, 0.0);
        assert_eq!(summarize(&q), (0.0, 0, 0));
    }

    #[test]
    fn point_mass_summary() {
        let q = QueuePmf::from_survival(vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
        // Point mass at 5.
        assert_eq!(summarize(&q), (5.0, 5, 5));
    }

    #[test]
    fn uniform_summary_by_hand() {
        // Uniform over {0..9}: survival S_i = (10-i)/10.
        let survival: Vec<f64> = (0..=10).map(|i| (10 - i) as f64 / 10.0).collect();
        let q = QueuePmf::from_survival(survival);
        assert!((q.mean - 4.5).abs() < 1e-12);
        // L = max{i : S_i >= 0.975} = 0; U = min{i : S_{i+1} <= 0.025} = 9.
        assert_eq!(q.ci_low, 0);
        assert_eq!(q.ci_high, 9);
    }

    #[test]
    fn survival_monotone_after_clamp() {
        let q = QueuePmf::from_survival(vec![1.0, 0.3, 0.6, 0.2, 0.0]);
        let mut prev = f64::INFINITY;
        for i in 0..q.probabilities.len() {
            let s = q.survival(i);
            assert!(s <= prev + 1e-12);
            prev = s;
        }
        assert!(q.probabilities.iter().all(|p| *p >= -1e-12));
    }

    #[test]
    fn max_queue_counts_point_masses() {
        // Three vehicles with integer NATs well before green; all queue.
        let g = geometry();
        let c = cycle();
        let pmfs: Vec<ArrivalPmf> = (0..3)
            .map(|i| ArrivalPmf::point_mass(i, 105 + 4 * i as i64))
            .collect();
        let candidates: Vec<QueueCandidate> = pmfs
            .iter()
            .enumerate()
            .map(|(i, pmf)| QueueCandidate {
                departure_time: c.green_start + 2.0 * (i + 1) as f64,
                pmf,
            })
            .collect();
        let q = estimate_max_queue(&candidates, &c, &g);
        assert_eq!(q.mean, 3.0);
        assert_eq!(summarize(&q), (3.0, 3, 3));
    }

    #[test]
    fn max_queue_zero_when_all_mass_late() {
        let g = geometry();
        let c = cycle();
        let pmf = ArrivalPmf::point_mass(0, (c.green_start + 50.0) as i64);
        let candidates = vec![QueueCandidate {
            departure_time: c.green_start + 60.0,
            pmf: &pmf,
        }];
        let q = estimate_max_queue(&candidates, &c, &g);
        assert_eq!(q.mean, 0.0);
    }

    #[test]
    fn profile_matches_counting_on_point_masses() {
        let g = geometry();
        let c = cycle();
        // NATs at integers; departures h-spaced after green.
        let nats: Vec<i64> = vec![102, 107, 113, 126];
        let pmfs: Vec<ArrivalPmf> = nats
            .iter()
            .enumerate()
            .map(|(i, t)| ArrivalPmf::point_mass(i, *t))
            .collect();
        let candidates: Vec<QueueCandidate> = pmfs
            .iter()
            .enumerate()
            .map(|(i, pmf)| QueueCandidate {
                departure_time: c.green_start + g.saturation_headway * (i + 1) as f64,
                pmf,
            })
            .collect();
        let profile = estimate_queue_profile(&candidates, &c, &g, 100, 180);
        for (t, q) in &profile {
            // Counting oracle: deepest occupied position among windows
            // covering t.
            let mut count = 0usize;
            for (idx, cand) in candidates.iter().enumerate() {
                let i = idx + 1;
                let ((lo, hi), _) = queuing_time_range(i, &c, &g, cand.departure_time);
                let tf = *t as f64;
                if tf < lo || tf > hi {
                    continue;
                }
                let thr = tf + g.queue_meters(i) / g.discharge_speed - g.delay_threshold;
                if (nats[idx] as f64) <= thr {
                    count = count.max(i);
                }
            }
            assert_eq!(q.mean, count as f64, "t = {t}");
            assert_eq!(q.probabilities[count], 1.0);
        }
    }
}
