//! No-delay arrival time (NAT) conditions.
//!
//! Target-lane vehicles are split into *constrained* groups (bracketed by
//! matched vehicles, NATs boxed by running-time bounds) and *unconstrained*
//! groups (runs of unmatched vehicles between constrained groups, bounded only
//! through their neighbors). Each group yields a linear inequality system
//! `A t <= b` over the NAT vector combining three families of rows:
//!
//! 1. departure-sequence rows  `t_{k+1} - t_k >= min(h, d_{k+1} - d_k)`
//! 2. running-time box rows    `t_u + a <= t_k <= t_u + b`   (matched only)
//! 3. detected-time rows       `t_k <= d_k`
//!
//! Partitioning of the matched vehicles maximizes the number of groups subject
//! to a minimum inter-group upstream-departure gap, via dynamic programming.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::lp;
use crate::lpr::MatchedVehicle;
use crate::running_time::RunningTimeDist;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Constrained,
    Unconstrained,
}

/// A contiguous run of target-lane vehicles treated as one sampling unit.
#[derive(Debug, Clone)]
pub struct VehicleGroup {
    pub kind: GroupKind,
    /// Interior vehicles in departure order. For constrained groups this is
    /// the whole group; for unconstrained groups the boundary vehicles are
    /// kept separately.
    pub vehicles: Vec<MatchedVehicle>,
    /// Last vehicle of the preceding constrained group (unconstrained only).
    pub boundary_prev: Option<MatchedVehicle>,
    /// First vehicle of the following constrained group (unconstrained only).
    pub boundary_foll: Option<MatchedVehicle>,
}

impl VehicleGroup {
    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }
}

/// Role of one variable of a constraint system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarRole {
    BoundaryPrev,
    /// Index into `VehicleGroup::vehicles`.
    Interior(usize),
    BoundaryFoll,
}

/// Kind of one row, kept for diagnostics and debug dumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Sequence,
    RunningUpper,
    RunningLower,
    Detected,
    BoundarySupport,
    PeriodEdge,
}

/// Inequality system `A t <= b` over a group's NAT vector.
#[derive(Debug, Clone)]
pub struct ConstraintSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub roles: Vec<VarRole>,
    pub row_kinds: Vec<RowKind>,
    /// Uniform slack added to make a noisy system feasible; zero normally.
    pub relaxation: f64,
}

impl ConstraintSystem {
    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn contains(&self, point: &DVector<f64>, tol: f64) -> bool {
        let slack = &self.b - &self.a * point;
        slack.iter().all(|s| *s >= -tol)
    }

    /// Column index of the variable holding `role`, if present.
    pub fn var_of(&self, role: VarRole) -> Option<usize> {
        self.roles.iter().position(|r| *r == role)
    }

    /// Dump rows as CSV lines `a_0,...,a_{n-1},b,kind` for offline inspection.
    pub fn dump_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows() {
            for j in 0..self.dim() {
                out.push_str(&format!("{},", self.a[(i, j)]));
            }
            out.push_str(&format!("{},{:?}\n", self.b[i], self.row_kinds[i]));
        }
        out
    }
}

/// Break points of the maximal partitioning of `lst` (upstream departure
/// times in target-arrival order): returns indices `0 = p_0 < p_1 < ... <
/// p_K = n` so that partition `k` is `lst[p_k..p_{k+1}]`.
///
/// A new partition may start after position `j` only when
/// `min(lst[j+1..=i]) - max(lst[..=j]) > min_gap`, i.e. every vehicle of the
/// new partition departed upstream strictly more than `min_gap` after all
/// vehicles before it.
pub fn partition_break_points(lst: &[f64], min_gap: f64) -> Vec<usize> {
    let n = lst.len();
    if n == 0 {
        return vec![0, 0];
    }

    // prefix_max[j] = max(lst[..=j]); suffix-min over windows computed inline.
    let mut prefix_max = vec![lst[0]; n];
    for j in 1..n {
        prefix_max[j] = prefix_max[j - 1].max(lst[j]);
    }

    let mut dp = vec![1usize; n];
    let mut break_points = vec![0usize; n + 2];
    break_points[dp[0]] = 1;
    for i in 1..n {
        // min(lst[j+1..=i]) maintained while j goes downward.
        let mut window_min = lst[i];
        for j in (0..i).rev() {
            window_min = window_min.min(lst[j + 1]);
            if window_min - prefix_max[j] > min_gap {
                dp[i] = dp[i].max(dp[j] + 1);
            }
        }
        break_points[dp[i]] = i + 1;
    }

    let count = dp[n - 1];
    let mut points = Vec::with_capacity(count + 1);
    points.push(0);
    for k in 1..=count {
        points.push(break_points[k]);
    }
    points
}

/// Maximal partitioning of upstream departure times (target-arrival order)
/// into contiguous groups separated by more than `min_gap`.
pub fn partition_matched(lst: &[f64], min_gap: f64) -> Vec<Vec<f64>> {
    let points = partition_break_points(lst, min_gap);
    points
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| lst[w[0]..w[1]].to_vec())
        .collect()
}

/// Group formation output: groups in departure order plus edge-case warnings.
#[derive(Debug, Clone)]
pub struct GroupingOutcome {
    pub groups: Vec<VehicleGroup>,
    pub warnings: Vec<String>,
}

/// Form constrained and unconstrained groups for one lane.
///
/// `partitions` must be the output of [`partition_matched`] on the upstream
/// departure times of the matched subset of `target`, in departure order.
/// Each matched partition plus the unmatched vehicles interleaved with it
/// forms a constrained group; maximal runs of unmatched vehicles between
/// constrained groups form unconstrained groups carrying boundary references.
pub fn form_groups(target: &[MatchedVehicle], partitions: &[Vec<f64>]) -> Result<GroupingOutcome> {
    let matched_idx: Vec<usize> = (0..target.len()).filter(|&i| target[i].matched()).collect();
    let total_matched: usize = partitions.iter().map(|p| p.len()).sum();
    if total_matched != matched_idx.len() {
        return Err(Error::invalid(format!(
            "partitions cover {total_matched} matched vehicles, lane has {}",
            matched_idx.len()
        )));
    }
    for (k, &i) in matched_idx.iter().enumerate() {
        let mut seen = 0usize;
        for p in partitions {
            if k < seen + p.len() {
                let expect = p[k - seen];
                let got = target[i].upstream_departure.expect("matched");
                if (expect - got).abs() > 1e-9 {
                    return Err(Error::invalid(
                        "partitions do not match the lane's matched upstream departures",
                    ));
                }
                break;
            }
            seen += p.len();
        }
    }

    let mut warnings = Vec::new();
    let mut groups = Vec::new();

    if matched_idx.is_empty() {
        if !target.is_empty() {
            warnings.push(format!(
                "lane `{}` has no matched vehicles; single unconstrained group with period boundaries",
                target[0].lane_id
            ));
            groups.push(VehicleGroup {
                kind: GroupKind::Unconstrained,
                vehicles: target.to_vec(),
                boundary_prev: None,
                boundary_foll: None,
            });
        }
        return Ok(GroupingOutcome { groups, warnings });
    }

    // Constrained group k spans target indices [first_k, last_k] where first
    // and last are the bracketing matched vehicles of partition k.
    let mut spans: Vec<(usize, usize)> = Vec::with_capacity(partitions.len());
    let mut seen = 0usize;
    for p in partitions {
        let first = matched_idx[seen];
        let last = matched_idx[seen + p.len() - 1];
        spans.push((first, last));
        seen += p.len();
    }

    // Leading unmatched run.
    if spans[0].0 > 0 {
        warnings.push(format!(
            "{} unmatched vehicle(s) before the first matched vehicle in lane `{}`",
            spans[0].0, target[0].lane_id
        ));
        groups.push(VehicleGroup {
            kind: GroupKind::Unconstrained,
            vehicles: target[..spans[0].0].to_vec(),
            boundary_prev: None,
            boundary_foll: Some(target[spans[0].0].clone()),
        });
    }

    for (k, &(first, last)) in spans.iter().enumerate() {
        groups.push(VehicleGroup {
            kind: GroupKind::Constrained,
            vehicles: target[first..=last].to_vec(),
            boundary_prev: None,
            boundary_foll: None,
        });
        if let Some(&(next_first, _)) = spans.get(k + 1) {
            if next_first > last + 1 {
                groups.push(VehicleGroup {
                    kind: GroupKind::Unconstrained,
                    vehicles: target[last + 1..next_first].to_vec(),
                    boundary_prev: Some(target[last].clone()),
                    boundary_foll: Some(target[next_first].clone()),
                });
            }
        }
    }

    // Trailing unmatched run.
    let last_span_end = spans.last().unwrap().1;
    if last_span_end + 1 < target.len() {
        warnings.push(format!(
            "{} unmatched vehicle(s) after the last matched vehicle in lane `{}`",
            target.len() - last_span_end - 1,
            target[0].lane_id
        ));
        groups.push(VehicleGroup {
            kind: GroupKind::Unconstrained,
            vehicles: target[last_span_end + 1..].to_vec(),
            boundary_prev: Some(target[last_span_end].clone()),
            boundary_foll: None,
        });
    }

    Ok(GroupingOutcome { groups, warnings })
}

/// Support bounds of a boundary vehicle's already-estimated arrival
/// distribution, `[lo, hi)` in seconds.
#[derive(Debug, Clone, Copy)]
pub struct BoundarySupport {
    pub lo: f64,
    pub hi: f64,
}

/// Extra inputs for building an unconstrained group's system.
#[derive(Debug, Clone, Copy)]
pub struct UnconstrainedBounds {
    pub prev: Option<BoundarySupport>,
    pub foll: Option<BoundarySupport>,
    /// Study period `[start, end]`, used as a uniform-prior synthetic
    /// boundary when a real one is missing at the lane edge.
    pub period: (f64, f64),
}

fn sequence_rhs(headway: f64, later: &MatchedVehicle, earlier: &MatchedVehicle) -> f64 {
    -headway.min(later.detected_time - earlier.detected_time)
}

/// Assemble the inequality system for a group (no feasibility check).
pub fn assemble_system(
    group: &VehicleGroup,
    headway: f64,
    dist: &RunningTimeDist,
    bounds: Option<&UnconstrainedBounds>,
) -> Result<ConstraintSystem> {
    if group.is_empty() {
        return Err(Error::invalid("empty vehicle group"));
    }
    match group.kind {
        GroupKind::Constrained => {
            if !(group.vehicles.first().unwrap().matched()
                && group.vehicles.last().unwrap().matched())
            {
                return Err(Error::invalid(
                    "constrained group must begin and end with a matched vehicle",
                ));
            }
        }
        GroupKind::Unconstrained => {
            if group.vehicles.iter().any(|v| v.matched()) && bounds.is_none() {
                return Err(Error::invalid(
                    "unconstrained group with matched members needs boundary bounds",
                ));
            }
            if bounds.is_none() {
                return Err(Error::invalid(
                    "unconstrained group needs boundary bounds",
                ));
            }
        }
    }

    // Variable layout: [prev?] interior... [foll?].
    let mut roles = Vec::new();
    let mut chain: Vec<&MatchedVehicle> = Vec::new();
    if group.kind == GroupKind::Unconstrained {
        if let Some(prev) = &group.boundary_prev {
            roles.push(VarRole::BoundaryPrev);
            chain.push(prev);
        }
    }
    for (i, v) in group.vehicles.iter().enumerate() {
        roles.push(VarRole::Interior(i));
        chain.push(v);
    }
    if group.kind == GroupKind::Unconstrained {
        if let Some(foll) = &group.boundary_foll {
            roles.push(VarRole::BoundaryFoll);
            chain.push(foll);
        }
    }
    let n = roles.len();

    let mut rows: Vec<(Vec<(usize, f64)>, f64, RowKind)> = Vec::new();

    // 1. Departure-sequence rows over consecutive chain members:
    //    t_k - t_{k+1} <= -min(h, d_{k+1} - d_k).
    for k in 0..n - 1 {
        rows.push((
            vec![(k, 1.0), (k + 1, -1.0)],
            sequence_rhs(headway, chain[k + 1], chain[k]),
            RowKind::Sequence,
        ));
    }

    // 2. Running-time boxes for matched interior vehicles.
    for (var, role) in roles.iter().enumerate() {
        if let VarRole::Interior(i) = role {
            if let Some(t_u) = group.vehicles[*i].upstream_departure {
                rows.push((vec![(var, 1.0)], t_u + dist.b, RowKind::RunningUpper));
                rows.push((vec![(var, -1.0)], -(t_u + dist.a), RowKind::RunningLower));
            }
        }
    }

    // 3. Detected-time rows for every chain member.
    for (var, vehicle) in chain.iter().enumerate() {
        rows.push((
            vec![(var, 1.0)],
            vehicle.detected_time,
            RowKind::Detected,
        ));
    }

    // Boundary supports and synthetic period edges for unconstrained groups.
    if let Some(bounds) = bounds {
        if group.kind == GroupKind::Unconstrained {
            match (&group.boundary_prev, bounds.prev) {
                (Some(_), Some(sup)) => {
                    let var = roles
                        .iter()
                        .position(|r| *r == VarRole::BoundaryPrev)
                        .unwrap();
                    rows.push((vec![(var, 1.0)], sup.hi, RowKind::BoundarySupport));
                    rows.push((vec![(var, -1.0)], -sup.lo, RowKind::BoundarySupport));
                }
                (Some(_), None) => {
                    return Err(Error::invalid("missing support for prev boundary"));
                }
                (None, _) => {
                    // Uniform synthetic boundary at period start.
                    rows.push((vec![(0, -1.0)], -bounds.period.0, RowKind::PeriodEdge));
                }
            }
            match (&group.boundary_foll, bounds.foll) {
                (Some(_), Some(sup)) => {
                    let var = roles
                        .iter()
                        .position(|r| *r == VarRole::BoundaryFoll)
                        .unwrap();
                    rows.push((vec![(var, 1.0)], sup.hi, RowKind::BoundarySupport));
                    rows.push((vec![(var, -1.0)], -sup.lo, RowKind::BoundarySupport));
                }
                (Some(_), None) => {
                    return Err(Error::invalid("missing support for foll boundary"));
                }
                (None, _) => {
                    rows.push((vec![(n - 1, 1.0)], bounds.period.1, RowKind::PeriodEdge));
                }
            }
        }
    }

    let m = rows.len();
    let mut a = DMatrix::zeros(m, n);
    let mut b = DVector::zeros(m);
    let mut row_kinds = Vec::with_capacity(m);
    for (i, (coeffs, rhs, kind)) in rows.into_iter().enumerate() {
        for (j, c) in coeffs {
            a[(i, j)] = c;
        }
        b[i] = rhs;
        row_kinds.push(kind);
    }

    Ok(ConstraintSystem {
        a,
        b,
        roles,
        row_kinds,
        relaxation: 0.0,
    })
}

/// Minimum Chebyshev radius for a system to count as usable by the sampler.
const MIN_INTERIOR_RADIUS: f64 = 1e-9;

/// Build a group's system and verify it is feasible with nonempty interior.
///
/// On infeasibility the error carries a minimal infeasible row subset; use
/// [`build_constraints_relaxed`] to apply the uniform slack recovery.
pub fn build_constraints(
    group: &VehicleGroup,
    headway: f64,
    dist: &RunningTimeDist,
    bounds: Option<&UnconstrainedBounds>,
) -> Result<ConstraintSystem> {
    let system = assemble_system(group, headway, dist, bounds)?;
    if lp::is_strictly_feasible(&system.a, &system.b, MIN_INTERIOR_RADIUS) {
        Ok(system)
    } else {
        Err(Error::Infeasible {
            rows: lp::minimal_infeasible_subset(&system.a, &system.b),
        })
    }
}

/// Like [`build_constraints`], but recover from noisy-data infeasibility by
/// adding a uniform slack to `b`, doubling from 0.5 s up to 8 s. The applied
/// slack is recorded in `ConstraintSystem::relaxation`.
pub fn build_constraints_relaxed(
    group: &VehicleGroup,
    headway: f64,
    dist: &RunningTimeDist,
    bounds: Option<&UnconstrainedBounds>,
) -> Result<ConstraintSystem> {
    let mut system = assemble_system(group, headway, dist, bounds)?;
    if lp::is_strictly_feasible(&system.a, &system.b, MIN_INTERIOR_RADIUS) {
        return Ok(system);
    }
    let mut eps = 0.5;
    while eps <= 8.0 {
        let relaxed_b = system.b.add_scalar(eps);
        if lp::is_strictly_feasible(&system.a, &relaxed_b, MIN_INTERIOR_RADIUS) {
            log::warn!("relaxed infeasible system by {eps} s");
            system.b = relaxed_b;
            system.relaxation = eps;
            return Ok(system);
        }
        eps *= 2.0;
    }
    Err(Error::Infeasible {
        rows: lp::minimal_infeasible_subset(&system.a, &system.b),
    })
}

/// Drop rows that cannot bind: a row is redundant when maximizing its left
/// side subject to the remaining rows stays within `b_i + eps`. The feasible
/// set is unchanged.
pub fn remove_redundant(system: &ConstraintSystem) -> ConstraintSystem {
    const EPS: f64 = 1e-7;
    let mut keep: Vec<bool> = vec![true; system.rows()];
    for i in 0..system.rows() {
        let rows: Vec<usize> = (0..system.rows())
            .filter(|&r| keep[r] && r != i)
            .collect();
        if rows.is_empty() {
            continue;
        }
        let sub_a = DMatrix::from_fn(rows.len(), system.dim(), |r, c| system.a[(rows[r], c)]);
        let sub_b = DVector::from_iterator(rows.len(), rows.iter().map(|&r| system.b[r]));
        let objective = system.a.row(i).transpose();
        match lp::maximize(&sub_a, &sub_b, &objective, None) {
            Ok(max_val) if max_val <= system.b[i] + EPS => keep[i] = false,
            _ => {}
        }
    }
    let rows: Vec<usize> = (0..system.rows()).filter(|&r| keep[r]).collect();
    ConstraintSystem {
        a: DMatrix::from_fn(rows.len(), system.dim(), |r, c| system.a[(rows[r], c)]),
        b: DVector::from_iterator(rows.len(), rows.iter().map(|&r| system.b[r])),
        roles: system.roles.clone(),
        row_kinds: rows.iter().map(|&r| system.row_kinds[r]).collect(),
        relaxation: system.relaxation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn vehicle(index: usize, upstream: Option<f64>, detected: f64) -> MatchedVehicle {
        MatchedVehicle {
            vehicle_index: index,
            lane_id: "L1".into(),
            plate: format!("P{index}"),
            upstream_departure: upstream,
            detected_time: detected,
            departure_time: detected,
        }
    }

    fn dist() -> RunningTimeDist {
        RunningTimeDist::new(3.89, 0.15, 31.1, 58.0).unwrap()
    }

    #[test]
    fn partition_separated_departures() {
        let parts = partition_matched(&[0.0, 100.0, 200.0], 26.9);
        assert_eq!(parts, vec![vec![0.0], vec![100.0], vec![200.0]]);
    }

    #[test]
    fn partition_single_when_gaps_small() {
        let parts = partition_matched(&[0.0, 10.0, 20.0], 50.0);
        assert_eq!(parts, vec![vec![0.0, 10.0, 20.0]]);
    }

    #[test]
    fn partition_overtaking_blocks_split() {
        // The adjacent gap 55 - 90 is negative and the prefix max (90) blocks
        // a boundary after the first element even though 90 - 50 > gap.
        let parts = partition_matched(&[50.0, 90.0, 55.0], 30.0);
        assert_eq!(parts.len(), 1);
    }

    /// Exhaustive maximum over contiguous partitions: a boundary after prefix
    /// `..=j` is valid when min(next partition) - max(prefix) > gap.
    fn brute_force_max_partitions(lst: &[f64], min_gap: f64) -> usize {
        let n = lst.len();
        let mut best = 1usize;
        // Each of the 2^(n-1) cut patterns encodes boundaries between items.
        for mask in 0u32..(1 << (n - 1)) {
            let mut cuts = vec![0usize];
            for b in 0..n - 1 {
                if mask & (1 << b) != 0 {
                    cuts.push(b + 1);
                }
            }
            cuts.push(n);
            let mut ok = true;
            'outer: for w in 1..cuts.len() - 1 {
                let boundary = cuts[w];
                let prefix_max = lst[..boundary].iter().cloned().fold(f64::MIN, f64::max);
                let seg_min = lst[boundary..cuts[w + 1]]
                    .iter()
                    .cloned()
                    .fold(f64::MAX, f64::min);
                if seg_min - prefix_max <= min_gap {
                    ok = false;
                    break 'outer;
                }
            }
            if ok {
                best = best.max(cuts.len() - 1);
            }
        }
        best
    }

    #[test]
    fn partition_count_matches_brute_force() {
        let mut rng = SplitMix64::new(2024);
        for trial in 0..200 {
            let n = 2 + rng.index(11); // up to 12
            let lst: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.0, 300.0)).collect();
            let min_gap = rng.uniform_in(5.0, 80.0);
            let parts = partition_matched(&lst, min_gap);
            let concat: Vec<f64> = parts.iter().flatten().cloned().collect();
            assert_eq!(concat, lst, "trial {trial}: concatenation must equal input");
            assert_eq!(
                parts.len(),
                brute_force_max_partitions(&lst, min_gap),
                "trial {trial}: lst={lst:?} gap={min_gap}"
            );
        }
    }

    #[test]
    fn groups_from_reference_layout() {
        // Five matched, four unmatched, four matched: two constrained groups
        // around one unconstrained group.
        let mut target = Vec::new();
        for i in 0..5 {
            target.push(vehicle(i, Some(i as f64 * 3.0), 100.0 + i as f64 * 2.0));
        }
        for i in 5..9 {
            target.push(vehicle(i, None, 100.0 + i as f64 * 2.0));
        }
        for i in 9..13 {
            target.push(vehicle(i, Some(200.0 + i as f64 * 3.0), 300.0 + i as f64 * 2.0));
        }
        let matched_times: Vec<f64> = target
            .iter()
            .filter_map(|v| v.upstream_departure)
            .collect();
        let parts = partition_matched(&matched_times, 26.9);
        assert_eq!(parts.len(), 2);
        let outcome = form_groups(&target, &parts).unwrap();
        assert_eq!(outcome.groups.len(), 3);
        assert_eq!(outcome.groups[0].kind, GroupKind::Constrained);
        assert_eq!(outcome.groups[0].len(), 5);
        assert_eq!(outcome.groups[1].kind, GroupKind::Unconstrained);
        assert_eq!(outcome.groups[1].len(), 4);
        assert!(outcome.groups[1].boundary_prev.is_some());
        assert!(outcome.groups[1].boundary_foll.is_some());
        assert_eq!(outcome.groups[2].kind, GroupKind::Constrained);
        assert_eq!(outcome.groups[2].len(), 4);
        assert!(outcome.warnings.is_empty());
    }

    #[test]
    fn all_matched_means_all_constrained() {
        let target: Vec<MatchedVehicle> = (0..4)
            .map(|i| vehicle(i, Some(i as f64 * 100.0), 200.0 + i as f64 * 100.0))
            .collect();
        let times: Vec<f64> = target.iter().filter_map(|v| v.upstream_departure).collect();
        let parts = partition_matched(&times, 26.9);
        let outcome = form_groups(&target, &parts).unwrap();
        assert!(outcome
            .groups
            .iter()
            .all(|g| g.kind == GroupKind::Constrained));
        let total: usize = outcome.groups.iter().map(|g| g.len()).sum();
        assert_eq!(total, 4);
    }

    #[test]
    fn edge_unmatched_get_single_boundary_and_warning() {
        let target = vec![
            vehicle(0, None, 50.0),
            vehicle(1, Some(10.0), 55.0),
            vehicle(2, None, 60.0),
        ];
        let parts = partition_matched(&[10.0], 26.9);
        let outcome = form_groups(&target, &parts).unwrap();
        assert_eq!(outcome.groups.len(), 3);
        assert_eq!(outcome.warnings.len(), 2);
        assert!(outcome.groups[0].boundary_prev.is_none());
        assert!(outcome.groups[0].boundary_foll.is_some());
        assert!(outcome.groups[2].boundary_prev.is_some());
        assert!(outcome.groups[2].boundary_foll.is_none());
    }

    #[test]
    fn every_vehicle_in_exactly_one_group() {
        let mut rng = SplitMix64::new(99);
        for _ in 0..50 {
            let n = 1 + rng.index(20);
            let target: Vec<MatchedVehicle> = (0..n)
                .map(|i| {
                    let matched = rng.uniform() < 0.6;
                    vehicle(
                        i,
                        matched.then(|| rng.uniform_in(0.0, 500.0)),
                        600.0 + i as f64 * 2.0,
                    )
                })
                .collect();
            let times: Vec<f64> = target.iter().filter_map(|v| v.upstream_departure).collect();
            let parts = partition_matched(&times, 30.0);
            let outcome = form_groups(&target, &parts).unwrap();
            let mut seen = vec![0usize; n];
            for g in &outcome.groups {
                match g.kind {
                    GroupKind::Constrained => {
                        assert!(g.vehicles.first().unwrap().matched());
                        assert!(g.vehicles.last().unwrap().matched());
                    }
                    GroupKind::Unconstrained => {
                        assert!(g.vehicles.iter().all(|v| !v.matched()));
                    }
                }
                for v in &g.vehicles {
                    seen[v.vehicle_index] += 1;
                }
            }
            assert!(seen.iter().all(|&c| c == 1), "partition must be exact");
        }
    }

    #[test]
    fn single_matched_vehicle_box() {
        let group = VehicleGroup {
            kind: GroupKind::Constrained,
            vehicles: vec![vehicle(0, Some(0.0), 100.0)],
            boundary_prev: None,
            boundary_foll: None,
        };
        let system = build_constraints(&group, 2.0, &dist(), None).unwrap();
        // Rows: t <= 0 + 58, -t <= -31.1, t <= 100.
        assert_eq!(system.rows(), 3);
        let (lo, hi) = lp::coordinate_bounds(&system.a, &system.b, 0).unwrap();
        assert!((lo - 31.1).abs() < 1e-6);
        assert!((hi - 58.0).abs() < 1e-6);

        // The detected-time row is dominated and gets pruned.
        let pruned = remove_redundant(&system);
        assert_eq!(pruned.rows(), 2);
        assert!(!pruned.row_kinds.contains(&RowKind::Detected));
    }

    #[test]
    fn sequence_row_uses_min_of_headway_and_detected_gap() {
        let group = VehicleGroup {
            kind: GroupKind::Constrained,
            vehicles: vec![vehicle(0, Some(0.0), 100.0), vehicle(1, Some(1.0), 101.5)],
            boundary_prev: None,
            boundary_foll: None,
        };
        let system = build_constraints(&group, 2.0, &dist(), None).unwrap();
        let seq_row = system
            .row_kinds
            .iter()
            .position(|k| *k == RowKind::Sequence)
            .unwrap();
        assert!((system.b[seq_row] - (-1.5)).abs() < 1e-12);
    }

    /// Direct evaluation of the three inequality families on a point.
    fn satisfies_directly(
        group: &VehicleGroup,
        headway: f64,
        dist: &RunningTimeDist,
        point: &[f64],
    ) -> bool {
        let n = group.vehicles.len();
        for k in 0..n - 1 {
            let gap = headway.min(
                group.vehicles[k + 1].detected_time - group.vehicles[k].detected_time,
            );
            if point[k + 1] - point[k] < gap - 1e-9 {
                return false;
            }
        }
        for (k, v) in group.vehicles.iter().enumerate() {
            if let Some(u) = v.upstream_departure {
                if point[k] < u + dist.a - 1e-9 || point[k] > u + dist.b + 1e-9 {
                    return false;
                }
            }
            if point[k] > v.detected_time + 1e-9 {
                return false;
            }
        }
        true
    }

    #[test]
    fn rows_agree_with_direct_inequality_evaluation() {
        let mut rng = SplitMix64::new(7);
        let d = dist();
        for _ in 0..20 {
            // Random 5-vehicle constrained group, matched at the ends.
            let mut vehicles = Vec::new();
            let mut det = rng.uniform_in(100.0, 200.0);
            for i in 0..5 {
                let matched = i == 0 || i == 4 || rng.uniform() < 0.5;
                let upstream = matched.then(|| det - rng.uniform_in(30.0, 60.0));
                vehicles.push(vehicle(i, upstream, det));
                det += rng.uniform_in(0.5, 8.0);
            }
            let group = VehicleGroup {
                kind: GroupKind::Constrained,
                vehicles,
                boundary_prev: None,
                boundary_foll: None,
            };
            let system = assemble_system(&group, 2.0, &d, None).unwrap();
            for _ in 0..200 {
                let point: Vec<f64> = (0..5).map(|_| rng.uniform_in(50.0, 250.0)).collect();
                let vec = DVector::from_row_slice(&point);
                assert_eq!(
                    system.contains(&vec, 1e-9),
                    satisfies_directly(&group, 2.0, &d, &point),
                );
            }
        }
    }

    #[test]
    fn duplicated_row_removed() {
        let a = DMatrix::from_row_slice(5, 2, &[1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let b = DVector::from_row_slice(&[1.0, 1.0, 0.0, 1.0, 0.0]);
        let system = ConstraintSystem {
            a,
            b,
            roles: vec![VarRole::Interior(0), VarRole::Interior(1)],
            row_kinds: vec![RowKind::Detected; 5],
            relaxation: 0.0,
        };
        let pruned = remove_redundant(&system);
        assert_eq!(pruned.rows(), 4);
    }

    #[test]
    fn pruning_preserves_membership() {
        let mut rng = SplitMix64::new(31);
        let d = dist();
        for _ in 0..10 {
            let mut vehicles = Vec::new();
            let mut det = 100.0;
            for i in 0..4 {
                let matched = i == 0 || i == 3;
                let upstream = matched.then(|| det - rng.uniform_in(32.0, 55.0));
                vehicles.push(vehicle(i, upstream, det));
                det += rng.uniform_in(1.0, 6.0);
            }
            let group = VehicleGroup {
                kind: GroupKind::Constrained,
                vehicles,
                boundary_prev: None,
                boundary_foll: None,
            };
            let system = build_constraints(&group, 2.0, &d, None).unwrap();
            let pruned = remove_redundant(&system);
            assert!(pruned.rows() <= system.rows());
            for _ in 0..10_000 {
                let point =
                    DVector::from_fn(4, |_, _| rng.uniform_in(40.0, 160.0));
                assert_eq!(
                    system.contains(&point, 1e-9),
                    pruned.contains(&point, 1e-9)
                );
            }
        }
    }

    #[test]
    fn infeasible_system_reports_rows_and_relaxation_recovers() {
        // Detected time before the earliest possible arrival: infeasible by
        // ~1.1 s, recovered by slack 2.0.
        let group = VehicleGroup {
            kind: GroupKind::Constrained,
            vehicles: vec![vehicle(0, Some(0.0), 30.0)],
            boundary_prev: None,
            boundary_foll: None,
        };
        let err = build_constraints(&group, 2.0, &dist(), None).unwrap_err();
        match err {
            Error::Infeasible { rows } => assert!(!rows.is_empty()),
            other => panic!("expected Infeasible, got {other:?}"),
        }
        let system = build_constraints_relaxed(&group, 2.0, &dist(), None).unwrap();
        assert!(system.relaxation > 0.0 && system.relaxation <= 8.0);
    }
}
