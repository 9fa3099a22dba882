//! Per-vehicle arrival (NAT) distributions from polytope samples.
//!
//! For a group with conditions `A t <= b` and joint prior density `f`, the
//! probability that vehicle `k` arrives within the one-second bin `[t, t+1)`
//! is the ratio of the summed joint density over the samples landing in the
//! bin to the summed joint density over all samples; the polytope volume
//! cancels in the ratio. Sums are accumulated in log space because `f` is a
//! product of up to dozens of running-time densities.
//!
//! An [`ArrivalPmf`] stores the bin masses at the integer left edges, i.e. it
//! is treated as a discrete distribution on whole seconds: `cdf_at` steps at
//! integers, while `density_at` views the same masses as a piecewise-constant
//! density over `[t, t+1)` (the form consumed by unconstrained-group joint
//! densities). Point masses therefore survive the queue stage exactly, which
//! is what reduces the whole estimator to deterministic counting when fed
//! degenerate inputs.

use serde::{Deserialize, Serialize};

use nalgebra::DVector;

use crate::lp;
use crate::nat::{ConstraintSystem, GroupKind, VarRole, VehicleGroup};
use crate::running_time::RunningTimeDist;
use crate::sampler::{self, SampleBatch, SamplerParams};
use crate::{Error, Result};

/// Discrete arrival distribution of one vehicle over one-second bins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrivalPmf {
    /// Target-lane vehicle index this distribution belongs to.
    pub vehicle_index: usize,
    /// Left edge of the first bin, seconds.
    pub t_min: i64,
    /// Mass of bin `[t_min + i, t_min + i + 1)`.
    pub probabilities: Vec<f64>,
    /// Cached cumulative sums of `probabilities`.
    cdf: Vec<f64>,
    /// Kish effective sample size of the weighted estimate.
    pub ess: f64,
}

impl ArrivalPmf {
    pub fn new(vehicle_index: usize, t_min: i64, probabilities: Vec<f64>, ess: f64) -> Self {
        let mut cdf = Vec::with_capacity(probabilities.len());
        let mut acc = 0.0;
        for p in &probabilities {
            acc += p;
            cdf.push(acc);
        }
        ArrivalPmf {
            vehicle_index,
            t_min,
            probabilities,
            cdf,
            ess,
        }
    }

    /// Degenerate distribution with all mass at second `t`.
    pub fn point_mass(vehicle_index: usize, t: i64) -> Self {
        Self::new(vehicle_index, t, vec![1.0], f64::INFINITY)
    }

    /// Inclusive support `[first, last]` in integer seconds.
    pub fn support(&self) -> (i64, i64) {
        (self.t_min, self.t_min + self.probabilities.len() as i64 - 1)
    }

    pub fn total(&self) -> f64 {
        *self.cdf.last().unwrap_or(&0.0)
    }

    /// `P(arrival <= x)` with atoms at integer seconds.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let last = x.floor() as i64 - self.t_min;
        if last < 0 {
            0.0
        } else if (last as usize) >= self.cdf.len() {
            self.total()
        } else {
            self.cdf[last as usize]
        }
    }

    /// Piecewise-constant density over `[t, t+1)` bins.
    pub fn density_at(&self, x: f64) -> f64 {
        let bin = x.floor() as i64 - self.t_min;
        if bin < 0 || (bin as usize) >= self.probabilities.len() {
            0.0
        } else {
            self.probabilities[bin as usize]
        }
    }

    pub fn mean(&self) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(i, p)| (self.t_min + i as i64) as f64 * p)
            .sum()
    }

    /// Monte Carlo standard error of one bin probability.
    pub fn standard_error(&self, bin: usize) -> f64 {
        if !self.ess.is_finite() || self.ess <= 0.0 {
            return 0.0;
        }
        let p = self.probabilities.get(bin).copied().unwrap_or(0.0);
        (p * (1.0 - p) / self.ess).sqrt()
    }
}

/// Prior densities entering a group's joint pdf.
#[derive(Debug, Clone, Copy)]
pub struct GroupDensity<'a> {
    pub dist: &'a RunningTimeDist,
    /// Arrival distribution of the preceding boundary vehicle, when the group
    /// is unconstrained and the boundary exists.
    pub prev: Option<&'a ArrivalPmf>,
    /// Arrival distribution of the following boundary vehicle.
    pub foll: Option<&'a ArrivalPmf>,
}

impl<'a> GroupDensity<'a> {
    pub fn constrained(dist: &'a RunningTimeDist) -> Self {
        GroupDensity {
            dist,
            prev: None,
            foll: None,
        }
    }
}

/// Natural log of the joint prior density at one NAT point.
///
/// Matched vehicles contribute their running-time density
/// `g(t_k - t_k_u)`; unmatched vehicles have a uniform prior whose constant
/// cancels in the ratio estimator and is skipped; boundary variables of
/// unconstrained groups contribute the piecewise-constant density of their
/// already-estimated arrival distribution.
pub fn joint_log_pdf(
    point: &DVector<f64>,
    group: &VehicleGroup,
    system: &ConstraintSystem,
    density: &GroupDensity,
) -> f64 {
    debug_assert_eq!(point.len(), system.dim());
    let mut acc = 0.0;
    for (var, role) in system.roles.iter().enumerate() {
        match role {
            VarRole::Interior(i) => {
                if let Some(t_u) = group.vehicles[*i].upstream_departure {
                    acc += density.dist.ln_pdf(point[var] - t_u);
                }
            }
            VarRole::BoundaryPrev => {
                if let Some(pmf) = density.prev {
                    let d = pmf.density_at(point[var]);
                    acc += if d > 0.0 { d.ln() } else { f64::NEG_INFINITY };
                }
            }
            VarRole::BoundaryFoll => {
                if let Some(pmf) = density.foll {
                    let d = pmf.density_at(point[var]);
                    acc += if d > 0.0 { d.ln() } else { f64::NEG_INFINITY };
                }
            }
        }
        if acc == f64::NEG_INFINITY {
            break;
        }
    }
    acc
}

/// Joint prior density (zero outside the support of any factor).
pub fn joint_pdf(
    point: &DVector<f64>,
    group: &VehicleGroup,
    system: &ConstraintSystem,
    density: &GroupDensity,
) -> f64 {
    joint_log_pdf(point, group, system, density).exp()
}

/// Output of one group estimation: per-vehicle distributions plus the sample
/// batch and weights retained for multi-lane likelihood evaluation.
#[derive(Debug, Clone)]
pub struct GroupEstimate {
    /// One pmf per interior vehicle, in group order.
    pub pmfs: Vec<ArrivalPmf>,
    pub samples: SampleBatch,
    /// `ln f` of each sample under the group's joint prior.
    pub log_weights: Vec<f64>,
    /// LP range of every system variable, in variable order.
    pub var_bounds: Vec<(f64, f64)>,
    /// Arrival distribution of the boundary variables, when present. For a
    /// split oversized group the pseudo-boundary pmf is read from here.
    pub boundary_prev_pmf: Option<ArrivalPmf>,
    pub boundary_foll_pmf: Option<ArrivalPmf>,
    /// Slack inherited from the constraint system (0 when not relaxed).
    pub relaxation: f64,
    /// True when the group was estimated as split halves.
    pub split: bool,
}

fn weighted_bin_pmf(
    vehicle_index: usize,
    values: &[f64],
    log_weights: &[f64],
    bounds: (f64, f64),
) -> Result<ArrivalPmf> {
    let t_lo = bounds.0.floor() as i64;
    let t_hi = (bounds.1.ceil() as i64).max(t_lo + 1);
    let n_bins = (t_hi - t_lo) as usize;

    let max_lw = log_weights
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if max_lw == f64::NEG_INFINITY {
        return Err(Error::ZeroDensity);
    }

    let mut bins = vec![0.0f64; n_bins];
    let mut total = 0.0f64;
    let mut sum_sq = 0.0f64;
    for (value, lw) in values.iter().zip(log_weights) {
        if *lw == f64::NEG_INFINITY {
            continue;
        }
        let w = (lw - max_lw).exp();
        let bin = ((value.floor() as i64) - t_lo).clamp(0, n_bins as i64 - 1) as usize;
        bins[bin] += w;
        total += w;
        sum_sq += w * w;
    }
    if total <= 0.0 {
        return Err(Error::ZeroDensity);
    }
    for b in &mut bins {
        *b /= total;
    }
    let ess = total * total / sum_sq;
    Ok(ArrivalPmf::new(vehicle_index, t_lo, bins, ess))
}

fn estimate_group(
    group: &VehicleGroup,
    system: &ConstraintSystem,
    density: &GroupDensity,
    params: &SamplerParams,
) -> Result<GroupEstimate> {
    let batch = sampler::sample_uniform(system, params)?;
    let log_weights: Vec<f64> = (0..batch.len())
        .map(|i| joint_log_pdf(&batch.point(i), group, system, density))
        .collect();

    let mut var_bounds = Vec::with_capacity(system.dim());
    for j in 0..system.dim() {
        var_bounds.push(lp::coordinate_bounds(&system.a, &system.b, j)?);
    }

    let mut pmfs = Vec::new();
    let mut boundary_prev_pmf = None;
    let mut boundary_foll_pmf = None;
    for (var, role) in system.roles.iter().enumerate() {
        let values = batch.column(var);
        match role {
            VarRole::Interior(i) => {
                pmfs.push(weighted_bin_pmf(
                    group.vehicles[*i].vehicle_index,
                    &values,
                    &log_weights,
                    var_bounds[var],
                )?);
            }
            VarRole::BoundaryPrev => {
                let idx = group
                    .boundary_prev
                    .as_ref()
                    .map(|v| v.vehicle_index)
                    .unwrap_or(usize::MAX);
                boundary_prev_pmf =
                    Some(weighted_bin_pmf(idx, &values, &log_weights, var_bounds[var])?);
            }
            VarRole::BoundaryFoll => {
                let idx = group
                    .boundary_foll
                    .as_ref()
                    .map(|v| v.vehicle_index)
                    .unwrap_or(usize::MAX);
                boundary_foll_pmf =
                    Some(weighted_bin_pmf(idx, &values, &log_weights, var_bounds[var])?);
            }
        }
    }

    Ok(GroupEstimate {
        pmfs,
        samples: batch,
        log_weights,
        var_bounds,
        boundary_prev_pmf,
        boundary_foll_pmf,
        relaxation: system.relaxation,
        split: false,
    })
}

/// Arrival distributions for a constrained group.
pub fn estimate_constrained(
    group: &VehicleGroup,
    system: &ConstraintSystem,
    dist: &RunningTimeDist,
    params: &SamplerParams,
) -> Result<GroupEstimate> {
    debug_assert_eq!(group.kind, GroupKind::Constrained);
    estimate_group(group, system, &GroupDensity::constrained(dist), params)
}

/// Arrival distributions for an unconstrained group, given the estimated
/// distributions of its boundary vehicles (either may be absent at lane
/// edges, where the uniform period prior applies instead).
pub fn estimate_unconstrained(
    group: &VehicleGroup,
    system: &ConstraintSystem,
    dist: &RunningTimeDist,
    prev_pmf: Option<&ArrivalPmf>,
    foll_pmf: Option<&ArrivalPmf>,
    params: &SamplerParams,
) -> Result<GroupEstimate> {
    debug_assert_eq!(group.kind, GroupKind::Unconstrained);
    if group.vehicles.is_empty() {
        return Err(Error::invalid("unconstrained group with no interior vehicles"));
    }
    let density = GroupDensity {
        dist,
        prev: prev_pmf,
        foll: foll_pmf,
    };
    estimate_group(group, system, &density, params)
}

/// Check the monotone-coupling consequence of the departure-sequence rows:
/// the cdf of each later vehicle never exceeds that of an earlier one.
pub fn monotone_coupling_holds(pmfs: &[ArrivalPmf], tol: f64) -> bool {
    for pair in pmfs.windows(2) {
        let (lo, hi) = (
            pair[0].support().0.min(pair[1].support().0),
            pair[0].support().1.max(pair[1].support().1),
        );
        for t in lo..=hi {
            if pair[1].cdf_at(t as f64) > pair[0].cdf_at(t as f64) + tol {
                return false;
            }
        }
    }
    true
}
