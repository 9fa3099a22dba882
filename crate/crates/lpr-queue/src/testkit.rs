//! Independent verification oracles.
//!
//! Everything here deliberately avoids the production code paths it checks:
//! exhaustive enumeration instead of dynamic programming or backtracking,
//! rejection sampling instead of MCMC ratio estimation, direct counting
//! instead of distribution algebra. The test suites and the `verify` CLI
//! subcommand both run against these.

use crate::arrival::ArrivalPmf;
use crate::dlx::{CoverInstance, CoverRow, ElementId};
use crate::lpr::Cycle;
use crate::nat::{GroupKind, VehicleGroup};
use crate::queue::{queuing_time_range, QueueGeometry};
use crate::rng::SplitMix64;
use crate::running_time::RunningTimeDist;

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(|x, y| x.total_cmp(y));
    b.sort_by(|x, y| x.total_cmp(y));
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] == v {
            i += 1;
        }
        while j < b.len() && b[j] == v {
            j += 1;
        }
        let fa = i as f64 / a.len() as f64;
        let fb = j as f64 / b.len() as f64;
        d = d.max((fa - fb).abs());
    }
    d
}

/// Total-variation distance between two integer-bin distributions.
pub fn tv_distance(p: &ArrivalPmf, q: &ArrivalPmf) -> f64 {
    let lo = p.support().0.min(q.support().0);
    let hi = p.support().1.max(q.support().1);
    let mut d = 0.0;
    for t in lo..=hi {
        d += (p.density_at(t as f64) - q.density_at(t as f64)).abs();
    }
    0.5 * d
}

/// Maximum number of contiguous partitions of `lst` such that each boundary
/// after a prefix satisfies `min(next partition) - max(prefix) > min_gap`,
/// by exhausting all `2^(n-1)` cut patterns.
pub fn brute_force_max_partitions(lst: &[f64], min_gap: f64) -> usize {
    let n = lst.len();
    if n == 0 {
        return 0;
    }
    let mut best = 1usize;
    for mask in 0u32..(1 << (n - 1)) {
        let mut cuts = vec![0usize];
        for b in 0..n - 1 {
            if mask & (1 << b) != 0 {
                cuts.push(b + 1);
            }
        }
        cuts.push(n);
        let mut ok = true;
        for w in 1..cuts.len() - 1 {
            let boundary = cuts[w];
            let prefix_max = lst[..boundary].iter().cloned().fold(f64::MIN, f64::max);
            let seg_min = lst[boundary..cuts[w + 1]]
                .iter()
                .cloned()
                .fold(f64::MAX, f64::min);
            if seg_min - prefix_max <= min_gap {
                ok = false;
                break;
            }
        }
        if ok {
            best = best.max(cuts.len() - 1);
        }
    }
    best
}

/// True when the selected rows form a general exact cover of the instance.
pub fn is_feasible_cover(instance: &CoverInstance, selected: &[usize]) -> bool {
    let mut primaries: Vec<ElementId> = Vec::new();
    let mut secondaries: Vec<ElementId> = Vec::new();
    for r in selected {
        for e in &instance.rows[*r].elements {
            if *e < 0 {
                primaries.push(*e);
            } else {
                secondaries.push(*e);
            }
        }
    }
    primaries.sort_unstable();
    if primaries.windows(2).any(|w| w[0] == w[1]) {
        return false;
    }
    secondaries.sort_unstable();
    if secondaries.windows(2).any(|w| w[0] == w[1]) {
        return false;
    }
    primaries == instance.primary_columns()
}

/// All feasible covers (row index sets, ascending), by subset enumeration.
pub fn enumerate_feasible_covers(instance: &CoverInstance) -> Vec<Vec<usize>> {
    let n = instance.rows.len();
    assert!(n <= 20, "enumeration oracle is for small instances");
    let mut covers = Vec::new();
    for mask in 0u32..(1 << n) {
        let selected: Vec<usize> = (0..n).filter(|r| mask & (1 << r) != 0).collect();
        if is_feasible_cover(instance, &selected) {
            covers.push(selected);
        }
    }
    covers
}

/// Maximum-weight feasible cover by enumeration.
pub fn brute_force_best_cover(instance: &CoverInstance) -> Option<(f64, Vec<usize>)> {
    enumerate_feasible_covers(instance)
        .into_iter()
        .map(|rows| {
            let w = rows.iter().map(|r| instance.rows[*r].weight).sum::<f64>();
            (w, rows)
        })
        .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
}

/// Best cover containing a given row, by enumeration.
pub fn brute_force_best_cover_containing(
    instance: &CoverInstance,
    row: usize,
) -> Option<(f64, Vec<usize>)> {
    enumerate_feasible_covers(instance)
        .into_iter()
        .filter(|rows| rows.contains(&row))
        .map(|rows| {
            let w = rows.iter().map(|r| instance.rows[*r].weight).sum::<f64>();
            (w, rows)
        })
        .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
}

/// Random small cover instance: 2-4 groups, rows of 1-3 secondary elements
/// drawn from `1..=max_secondary`, weights in [-5, 5].
pub fn random_cover_instance(
    rng: &mut SplitMix64,
    max_rows: usize,
    max_secondary: usize,
) -> CoverInstance {
    let n_groups = 2 + rng.index(3);
    let mut rows = Vec::new();
    let n_rows = n_groups + rng.index(max_rows.saturating_sub(n_groups).max(1));
    for r in 0..n_rows.min(max_rows) {
        let group = -1 - (if r < n_groups { r } else { rng.index(n_groups) } as ElementId);
        let k = 1 + rng.index(3);
        let mut elements = vec![group];
        for _ in 0..k {
            let e = 1 + rng.index(max_secondary) as ElementId;
            if !elements.contains(&e) {
                elements.push(e);
            }
        }
        let mut row = CoverRow::new(elements, rng.uniform_in(-5.0, 5.0));
        row.tiebreak_cost = rng.index(4) as f64;
        rows.push(row);
    }
    CoverInstance::new(rows).unwrap()
}

/// Direct evaluation of the three NAT condition families on one point.
///
/// This re-states the inequalities from the vehicle data instead of going
/// through the assembled matrix, so it can serve as the membership oracle for
/// rejection sampling.
pub fn satisfies_nat_conditions(
    vehicles: &[crate::lpr::MatchedVehicle],
    headway: f64,
    dist: &RunningTimeDist,
    point: &[f64],
) -> bool {
    let n = vehicles.len();
    for k in 0..n.saturating_sub(1) {
        let gap = headway.min(vehicles[k + 1].detected_time - vehicles[k].detected_time);
        if point[k + 1] - point[k] < gap {
            return false;
        }
    }
    for (k, v) in vehicles.iter().enumerate() {
        if let Some(u) = v.upstream_departure {
            if point[k] < u + dist.a || point[k] > u + dist.b {
                return false;
            }
        }
        if point[k] > v.detected_time {
            return false;
        }
    }
    true
}

/// Rejection-sampling oracle for a constrained group: matched NATs proposed
/// as `t_u + tau` with `tau` from the running-time prior, unmatched NATs
/// uniform over `proposal_box`, accepted by direct condition evaluation.
/// Returns per-vehicle arrival pmfs over integer bins.
pub fn rejection_arrival_pmfs(
    group: &VehicleGroup,
    dist: &RunningTimeDist,
    headway: f64,
    proposal_box: &[(f64, f64)],
    n_accept: usize,
    rng: &mut SplitMix64,
) -> Option<Vec<ArrivalPmf>> {
    assert_eq!(group.kind, GroupKind::Constrained);
    let n = group.vehicles.len();
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(n_accept);
    let max_proposals = n_accept.saturating_mul(40_000).max(1_000_000);
    let mut proposals = 0usize;
    let mut point = vec![0.0f64; n];
    while accepted.len() < n_accept && proposals < max_proposals {
        proposals += 1;
        for (k, v) in group.vehicles.iter().enumerate() {
            point[k] = match v.upstream_departure {
                Some(u) => u + dist.sample(rng),
                None => rng.uniform_in(proposal_box[k].0, proposal_box[k].1),
            };
        }
        if satisfies_nat_conditions(&group.vehicles, headway, dist, &point) {
            accepted.push(point.clone());
        }
    }
    if accepted.len() < n_accept / 10 {
        return None;
    }
    Some(bin_samples(group, &accepted))
}

fn bin_samples(group: &VehicleGroup, accepted: &[Vec<f64>]) -> Vec<ArrivalPmf> {
    let n = group.vehicles.len();
    let mut pmfs = Vec::with_capacity(n);
    for k in 0..n {
        let lo = accepted
            .iter()
            .map(|p| p[k])
            .fold(f64::INFINITY, f64::min)
            .floor() as i64;
        let hi = accepted
            .iter()
            .map(|p| p[k])
            .fold(f64::NEG_INFINITY, f64::max)
            .ceil() as i64;
        let n_bins = ((hi - lo).max(1)) as usize;
        let mut bins = vec![0.0f64; n_bins];
        for p in accepted {
            let bin = ((p[k].floor() as i64) - lo).clamp(0, n_bins as i64 - 1) as usize;
            bins[bin] += 1.0;
        }
        let total: f64 = bins.iter().sum();
        for b in &mut bins {
            *b /= total;
        }
        pmfs.push(ArrivalPmf::new(
            group.vehicles[k].vehicle_index,
            lo,
            bins,
            accepted.len() as f64,
        ));
    }
    pmfs
}

/// Rejection oracle for an unconstrained group: boundary NATs drawn from
/// their estimated distributions (uniform within the bin), interior NATs
/// uniform over `proposal_box`, accepted by the sequence and detected-time
/// conditions over the full chain.
#[allow(clippy::too_many_arguments)]
pub fn rejection_unconstrained_pmfs(
    group: &VehicleGroup,
    headway: f64,
    prev_pmf: Option<&ArrivalPmf>,
    foll_pmf: Option<&ArrivalPmf>,
    proposal_box: &[(f64, f64)],
    n_accept: usize,
    rng: &mut SplitMix64,
) -> Option<Vec<ArrivalPmf>> {
    assert_eq!(group.kind, GroupKind::Unconstrained);
    let mut chain: Vec<&crate::lpr::MatchedVehicle> = Vec::new();
    if let Some(prev) = &group.boundary_prev {
        chain.push(prev);
    }
    let interior_offset = chain.len();
    for v in &group.vehicles {
        chain.push(v);
    }
    if let Some(foll) = &group.boundary_foll {
        chain.push(foll);
    }

    let sample_pmf = |pmf: &ArrivalPmf, rng: &mut SplitMix64| -> f64 {
        let u = rng.uniform();
        let mut acc = 0.0;
        for (i, p) in pmf.probabilities.iter().enumerate() {
            acc += p;
            if u <= acc {
                return (pmf.t_min + i as i64) as f64 + rng.uniform();
            }
        }
        (pmf.t_min + pmf.probabilities.len() as i64 - 1) as f64 + rng.uniform()
    };

    let n_chain = chain.len();
    let mut accepted: Vec<Vec<f64>> = Vec::new();
    let max_proposals = n_accept.saturating_mul(40_000).max(1_000_000);
    let mut proposals = 0usize;
    let mut point = vec![0.0f64; n_chain];
    while accepted.len() < n_accept && proposals < max_proposals {
        proposals += 1;
        let mut idx = 0;
        if group.boundary_prev.is_some() {
            point[idx] = match prev_pmf {
                Some(pmf) => sample_pmf(pmf, rng),
                None => rng.uniform_in(proposal_box[idx].0, proposal_box[idx].1),
            };
            idx += 1;
        }
        for _ in &group.vehicles {
            point[idx] = rng.uniform_in(proposal_box[idx].0, proposal_box[idx].1);
            idx += 1;
        }
        if group.boundary_foll.is_some() {
            point[idx] = match foll_pmf {
                Some(pmf) => sample_pmf(pmf, rng),
                None => rng.uniform_in(proposal_box[idx].0, proposal_box[idx].1),
            };
        }

        let mut ok = true;
        for k in 0..n_chain - 1 {
            let gap = headway.min(chain[k + 1].detected_time - chain[k].detected_time);
            if point[k + 1] - point[k] < gap {
                ok = false;
                break;
            }
        }
        if ok {
            for (k, v) in chain.iter().enumerate() {
                if point[k] > v.detected_time {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            accepted.push(point[interior_offset..interior_offset + group.vehicles.len()].to_vec());
        }
    }
    if accepted.len() < n_accept / 10 {
        return None;
    }
    let interior_group = VehicleGroup {
        kind: GroupKind::Constrained,
        vehicles: group.vehicles.clone(),
        boundary_prev: None,
        boundary_foll: None,
    };
    Some(bin_samples(&interior_group, &accepted))
}

/// Deterministic counting oracle for the queue profile: the deepest occupied
/// position among candidates whose queuing window covers `t`.
pub fn counting_profile(
    nats: &[i64],
    departures: &[f64],
    cycle: &Cycle,
    geometry: &QueueGeometry,
    window: (i64, i64),
) -> Vec<(i64, usize)> {
    let mut out = Vec::new();
    for t in window.0..window.1 {
        let tf = t as f64;
        let mut count = 0usize;
        for (idx, nat) in nats.iter().enumerate() {
            let i = idx + 1;
            let ((lo, hi), _) = queuing_time_range(i, cycle, geometry, departures[idx]);
            if tf < lo || tf > hi {
                continue;
            }
            let threshold =
                tf + geometry.queue_meters(i) / geometry.discharge_speed - geometry.delay_threshold;
            if (*nat as f64) <= threshold {
                count = count.max(i);
            }
        }
        out.push((t, count));
    }
    out
}

/// Deterministic counting oracle for the maximum queue: positions scanned in
/// order until the first one the vehicle cannot have reached in time.
pub fn counting_max_queue(
    nats: &[i64],
    departures: &[f64],
    cycle: &Cycle,
    geometry: &QueueGeometry,
) -> usize {
    let mut count = 0usize;
    for (idx, nat) in nats.iter().enumerate() {
        let i = idx + 1;
        let delta = (geometry.saturation_headway * i as f64)
            .min(departures[idx] - cycle.green_start);
        let threshold = cycle.green_start + delta - geometry.delay_threshold;
        if (*nat as f64) <= threshold {
            count = i;
        } else {
            break;
        }
    }
    count
}
