//! Cross-lane rematching of unmatched vehicles.
//!
//! Each unmatched target-lane vehicle admits upstream candidates whose
//! departure lies in `[t_min_a - b, t_max_a - a]`, with `[t_min_a, t_max_a]`
//! the vehicle's NAT range under its group's conditions and `[a, b]` the
//! running-time bounds. Groups whose candidate sets touch are clustered;
//! inside a cluster, every injective assignment of candidates to a group's
//! unmatched vehicles is scored by the log-likelihood of the group's stored
//! polytope samples under the implied running-time factors, unordered
//! candidate sets become weighted rows of a general exact cover instance
//! (group ids as primary columns, upstream ids as secondary), and the
//! maximum-weight cover selects one matching per group. The best ordering of
//! the winning set is what gets applied.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::arrival::GroupEstimate;
use crate::dlx::{solve_dlx, CoverInstance, CoverRow, ElementId};
use crate::nat::{ConstraintSystem, VarRole, VehicleGroup};
use crate::rng::SplitMix64;
use crate::running_time::RunningTimeDist;
use crate::{Error, Result};

/// One upstream record available for rematching.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpstreamCandidate {
    pub id: usize,
    /// Link entry time `t_u`.
    pub departure_time: f64,
    pub lane_id: String,
    pub plate: String,
}

/// Candidate window of one unmatched vehicle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateSet {
    /// Index of the vehicle inside its group's interior list.
    pub interior_index: usize,
    /// Admissible upstream departure window `[lo, hi]`.
    pub window: (f64, f64),
    /// Ids of pool candidates inside the window.
    pub candidates: Vec<usize>,
}

/// Upstream candidates for one vehicle given its NAT range.
///
/// `nat_bounds` is the LP range of the vehicle's coordinate; the pool must be
/// sorted by departure time.
pub fn upstream_candidates(
    interior_index: usize,
    nat_bounds: (f64, f64),
    dist: &RunningTimeDist,
    pool: &[UpstreamCandidate],
) -> CandidateSet {
    let window = (nat_bounds.0 - dist.b, nat_bounds.1 - dist.a);
    let candidates = pool
        .iter()
        .filter(|c| c.departure_time >= window.0 && c.departure_time <= window.1)
        .map(|c| c.id)
        .collect();
    CandidateSet {
        interior_index,
        window,
        candidates,
    }
}

/// Connected components of the groups-candidates bipartite graph: groups
/// sharing any upstream candidate land in the same cluster. Returns clusters
/// of group indices, each ascending, ordered by smallest member.
pub fn cluster_groups(group_candidates: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = group_candidates.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let root = find(parent, parent[i]);
            parent[i] = root;
        }
        parent[i]
    }
    let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
    for (g, candidates) in group_candidates.iter().enumerate() {
        for c in candidates {
            match owner.get(c) {
                Some(&other) => {
                    let (a, b) = (find(&mut parent, g), find(&mut parent, other));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
                None => {
                    owner.insert(*c, g);
                }
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for g in 0..n {
        let root = find(&mut parent, g);
        clusters.entry(root).or_default().push(g);
    }
    clusters.into_values().collect()
}

/// View of one estimated group entering the rematch stage.
#[derive(Debug, Clone, Copy)]
pub struct GroupRef<'a> {
    pub group: &'a VehicleGroup,
    pub system: &'a ConstraintSystem,
    pub estimate: &'a GroupEstimate,
}

impl GroupRef<'_> {
    /// Interior indices of vehicles without an upstream match.
    pub fn unmatched_interior(&self) -> Vec<usize> {
        (0..self.group.vehicles.len())
            .filter(|&i| !self.group.vehicles[i].matched())
            .collect()
    }

    /// NAT bounds of one interior vehicle, from the stored LP ranges.
    pub fn nat_bounds(&self, interior_index: usize) -> Option<(f64, f64)> {
        let var = self.system.var_of(VarRole::Interior(interior_index))?;
        self.estimate.var_bounds.get(var).copied()
    }
}

/// Log-likelihood of assigning upstream departures to previously unmatched
/// members of a group: `log sum_i exp(ln f_i + sum_k ln g(t_{k,i} - t_u_k))`
/// over the group's stored samples. `-inf` means the matching is infeasible.
pub fn group_log_likelihood(
    group_ref: &GroupRef,
    dist: &RunningTimeDist,
    assignment: &[(usize, f64)],
) -> f64 {
    let estimate = group_ref.estimate;
    let n = estimate.samples.len();
    let columns: Vec<(Vec<f64>, f64)> = assignment
        .iter()
        .map(|(interior, t_u)| {
            let var = group_ref
                .system
                .var_of(VarRole::Interior(*interior))
                .expect("assigned vehicle must be a system variable");
            (estimate.samples.column(var), *t_u)
        })
        .collect();

    let mut max = f64::NEG_INFINITY;
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let mut lw = estimate.log_weights[i];
        for (values, t_u) in &columns {
            lw += dist.ln_pdf(values[i] - t_u);
            if lw == f64::NEG_INFINITY {
                break;
            }
        }
        terms.push(lw);
        max = max.max(lw);
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + terms
        .iter()
        .map(|t| (t - max).exp())
        .sum::<f64>()
        .ln()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RematchConfig {
    /// Rows kept per group after weight-ordered truncation.
    pub top_n: usize,
    /// Assignment-enumeration cap per group; beyond it a random subsample of
    /// this size is scored instead.
    pub max_combinations: usize,
    /// Solver budget per cluster.
    pub timeout: Duration,
    pub seed: u64,
}

impl Default for RematchConfig {
    fn default() -> Self {
        RematchConfig {
            top_n: 50,
            max_combinations: 10_000,
            timeout: Duration::from_secs(10),
            seed: 0,
        }
    }
}

/// One decoded row: a group plus the best-ordering assignment it stands for.
#[derive(Debug, Clone)]
struct RowDecode {
    group_index: usize,
    assignment: Vec<(usize, usize)>,
}

/// Matching chosen for one group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub group_index: usize,
    /// Pairs `(interior vehicle index, upstream candidate id)`.
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RematchOutcome {
    pub assignments: Vec<GroupAssignment>,
    /// Groups left in their single-lane state (no feasible rows, infeasible
    /// cluster cover, or solver timeout without incumbent).
    pub fallback_groups: Vec<usize>,
    pub clusters: usize,
    pub suboptimal_clusters: usize,
}

/// Enumerate injective assignments of candidates to a group's unmatched
/// vehicles, score them, and reduce to weighted unordered rows.
///
/// Returns `(candidate set, weight, best ordering)` rows sorted by weight,
/// truncated to `top_n`.
fn score_group_rows(
    group_ref: &GroupRef,
    candidate_sets: &[CandidateSet],
    pool: &BTreeMap<usize, f64>,
    dist: &RunningTimeDist,
    config: &RematchConfig,
    rng: &mut SplitMix64,
) -> Vec<(BTreeSet<usize>, f64, Vec<(usize, usize)>)> {
    let vehicles: Vec<&CandidateSet> = candidate_sets.iter().collect();
    if vehicles.is_empty() || vehicles.iter().any(|c| c.candidates.is_empty()) {
        return Vec::new();
    }

    // Projected combination count decides enumeration vs sampling.
    let mut projected: f64 = 1.0;
    for c in &vehicles {
        projected *= c.candidates.len() as f64;
    }

    let mut assignments: Vec<Vec<(usize, usize)>> = Vec::new();
    if projected <= config.max_combinations as f64 {
        let mut current: Vec<(usize, usize)> = Vec::new();
        let mut used: BTreeSet<usize> = BTreeSet::new();
        fn dfs(
            vehicles: &[&CandidateSet],
            depth: usize,
            current: &mut Vec<(usize, usize)>,
            used: &mut BTreeSet<usize>,
            out: &mut Vec<Vec<(usize, usize)>>,
        ) {
            if depth == vehicles.len() {
                out.push(current.clone());
                return;
            }
            let set = vehicles[depth];
            for &cand in &set.candidates {
                if used.insert(cand) {
                    current.push((set.interior_index, cand));
                    dfs(vehicles, depth + 1, current, used, out);
                    current.pop();
                    used.remove(&cand);
                }
            }
        }
        dfs(&vehicles, 0, &mut current, &mut used, &mut assignments);
    } else {
        // Random subsample of injective assignments.
        let mut seen: BTreeSet<Vec<(usize, usize)>> = BTreeSet::new();
        let mut tries = 0usize;
        while seen.len() < config.max_combinations && tries < config.max_combinations * 20 {
            tries += 1;
            let mut used = BTreeSet::new();
            let mut assignment = Vec::with_capacity(vehicles.len());
            let mut ok = true;
            for set in &vehicles {
                let cand = set.candidates[rng.index(set.candidates.len())];
                if !used.insert(cand) {
                    ok = false;
                    break;
                }
                assignment.push((set.interior_index, cand));
            }
            if ok {
                seen.insert(assignment);
            }
        }
        assignments = seen.into_iter().collect();
    }

    // Score and reduce ordered assignments to unordered candidate sets.
    let mut by_set: BTreeMap<BTreeSet<usize>, (f64, Vec<(usize, usize)>)> = BTreeMap::new();
    for assignment in assignments {
        let scored: Vec<(usize, f64)> = assignment
            .iter()
            .map(|(interior, cand)| (*interior, pool[cand]))
            .collect();
        let weight = group_log_likelihood(group_ref, dist, &scored);
        if weight == f64::NEG_INFINITY {
            continue;
        }
        let key: BTreeSet<usize> = assignment.iter().map(|(_, c)| *c).collect();
        match by_set.get_mut(&key) {
            Some(best) if best.0 >= weight => {}
            _ => {
                by_set.insert(key, (weight, assignment));
            }
        }
    }

    let mut rows: Vec<(BTreeSet<usize>, f64, Vec<(usize, usize)>)> = by_set
        .into_iter()
        .map(|(set, (w, a))| (set, w, a))
        .collect();
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    rows.truncate(config.top_n);
    rows
}

/// Build the weighted general exact cover instance for one cluster.
///
/// `members` are indices into `groups`; the returned decode table maps
/// instance rows back to groups and orderings. Groups contributing zero
/// feasible rows are reported separately and left out of the instance.
fn build_cluster_instance(
    groups: &[GroupRef],
    members: &[usize],
    candidate_sets: &BTreeMap<usize, Vec<CandidateSet>>,
    pool: &BTreeMap<usize, f64>,
    dist: &RunningTimeDist,
    config: &RematchConfig,
    rng: &mut SplitMix64,
) -> (CoverInstance, Vec<RowDecode>, Vec<usize>) {
    let mut rows = Vec::new();
    let mut decode = Vec::new();
    let mut zero_row_groups = Vec::new();
    for (ordinal, &g) in members.iter().enumerate() {
        let scored = score_group_rows(
            &groups[g],
            &candidate_sets[&g],
            pool,
            dist,
            config,
            rng,
        );
        if scored.is_empty() {
            log::warn!("group {g} has no feasible matching rows; staying single-lane");
            zero_row_groups.push(g);
            continue;
        }
        let primary: ElementId = -(ordinal as ElementId + 1);
        for (set, weight, assignment) in scored {
            let mut elements: Vec<ElementId> =
                set.iter().map(|c| *c as ElementId + 1).collect();
            elements.push(primary);
            let mut row = CoverRow::new(elements, weight);
            row.tiebreak_cost = assignment.len() as f64;
            rows.push(row);
            decode.push(RowDecode {
                group_index: g,
                assignment,
            });
        }
    }
    (
        CoverInstance::new(rows).expect("rows built with exactly one primary"),
        decode,
        zero_row_groups,
    )
}

/// Find the optimal cross-lane matching for every cluster.
///
/// `groups` must carry stored samples and LP bounds from the single-lane
/// pass; `pool` is the global set of upstream records unmatched by plate.
pub fn rematch(
    groups: &[GroupRef],
    pool: &[UpstreamCandidate],
    dist: &RunningTimeDist,
    config: &RematchConfig,
) -> Result<RematchOutcome> {
    let mut sorted_pool = pool.to_vec();
    sorted_pool.sort_by(|a, b| a.departure_time.total_cmp(&b.departure_time));
    let departure_of: BTreeMap<usize, f64> = sorted_pool
        .iter()
        .map(|c| (c.id, c.departure_time))
        .collect();

    // Candidate sets per group.
    let mut candidate_sets: BTreeMap<usize, Vec<CandidateSet>> = BTreeMap::new();
    let mut unions: Vec<Vec<usize>> = vec![Vec::new(); groups.len()];
    for (g, group_ref) in groups.iter().enumerate() {
        let mut sets = Vec::new();
        for interior in group_ref.unmatched_interior() {
            let Some(bounds) = group_ref.nat_bounds(interior) else {
                continue;
            };
            sets.push(upstream_candidates(interior, bounds, dist, &sorted_pool));
        }
        let mut union: Vec<usize> = sets.iter().flat_map(|s| s.candidates.clone()).collect();
        union.sort_unstable();
        union.dedup();
        unions[g] = union;
        candidate_sets.insert(g, sets);
    }

    // Only groups that actually have unmatched vehicles participate.
    let participating: Vec<usize> = (0..groups.len())
        .filter(|&g| !candidate_sets[&g].is_empty())
        .collect();

    let participating_unions: Vec<Vec<usize>> = participating
        .iter()
        .map(|&g| unions[g].clone())
        .collect();
    let clusters = cluster_groups(&participating_unions);

    let mut outcome = RematchOutcome {
        clusters: clusters.len(),
        ..Default::default()
    };
    let mut rng = SplitMix64::new(crate::rng::derive_seed(config.seed, "multilane/sampling"));

    for cluster in clusters {
        let members: Vec<usize> = cluster.iter().map(|&k| participating[k]).collect();
        let (instance, decode, zero_row_groups) = build_cluster_instance(
            groups,
            &members,
            &candidate_sets,
            &departure_of,
            dist,
            config,
            &mut rng,
        );
        outcome.fallback_groups.extend(zero_row_groups);
        if instance.rows.is_empty() {
            continue;
        }
        match solve_dlx(&instance, config.timeout) {
            Ok(solution) => {
                if !solution.optimal {
                    outcome.suboptimal_clusters += 1;
                }
                for row in solution.selected {
                    let d = &decode[row];
                    outcome.assignments.push(GroupAssignment {
                        group_index: d.group_index,
                        pairs: d.assignment.clone(),
                    });
                }
            }
            Err(Error::NoFeasibleCover | Error::CoverTimeout) => {
                log::warn!(
                    "cluster of groups {members:?} has no feasible cover; staying single-lane"
                );
                let extra: Vec<usize> = members
                    .iter()
                    .filter(|g| !outcome.fallback_groups.contains(g))
                    .cloned()
                    .collect();
                outcome.fallback_groups.extend(extra);
            }
            Err(other) => return Err(other),
        }
    }
    outcome.assignments.sort_by_key(|a| a.group_index);
    outcome.fallback_groups.sort_unstable();
    outcome.fallback_groups.dedup();
    Ok(outcome)
}

/// Write the chosen upstream departures into the groups; returns the number
/// of vehicles that gained a match. The caller rebuilds constraint systems
/// and re-runs arrival estimation on the updated groups.
pub fn apply_matching(
    groups: &mut [VehicleGroup],
    assignments: &[GroupAssignment],
    pool: &[UpstreamCandidate],
) -> usize {
    let departure_of: BTreeMap<usize, f64> = pool
        .iter()
        .map(|c| (c.id, c.departure_time))
        .collect();
    let mut applied = 0usize;
    for assignment in assignments {
        let group = &mut groups[assignment.group_index];
        for (interior, candidate) in &assignment.pairs {
            let t_u = departure_of[candidate];
            debug_assert!(group.vehicles[*interior].upstream_departure.is_none());
            group.vehicles[*interior].upstream_departure = Some(t_u);
            applied += 1;
        }
    }
    applied
}
