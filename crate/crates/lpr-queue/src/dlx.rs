//! Weighted general exact cover via dancing links.
//!
//! Rows are candidate matchings; columns are elements. Negative element ids
//! (group ids) are *primary* columns that must be covered exactly once;
//! positive ids (upstream vehicle ids) are *secondary* columns covered at most
//! once. The solver is a backtracking search over the dancing-links lattice
//! that maximizes total row weight, guided by a per-row completion bound: the
//! row's weight plus, for every remaining primary column, the best weight
//! still available in that column. The bound never underestimates the best
//! completion through the row (covering only removes rows, so column maxima
//! only shrink), which makes the `cur + h <= best` prune safe.
//!
//! Branches are explored in descending bound order; on weight ties the
//! incumbent with the smaller tie-break cost (then lexicographically smaller
//! row set) is kept. A timeout returns the best incumbent flagged as
//! suboptimal.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type ElementId = i64;

/// One subset of the cover instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverRow {
    /// Elements of the subset; exactly one must be negative (the group id).
    pub elements: Vec<ElementId>,
    pub weight: f64,
    /// Secondary objective on weight ties (e.g. number of reassignments);
    /// smaller is preferred.
    pub tiebreak_cost: f64,
}

impl CoverRow {
    pub fn new(elements: Vec<ElementId>, weight: f64) -> Self {
        CoverRow {
            elements,
            weight,
            tiebreak_cost: 0.0,
        }
    }

    pub fn primary(&self) -> Option<ElementId> {
        self.elements.iter().copied().find(|e| *e < 0)
    }
}

/// A weighted general exact cover instance.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CoverInstance {
    pub rows: Vec<CoverRow>,
}

impl CoverInstance {
    pub fn new(rows: Vec<CoverRow>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            let negatives = row.elements.iter().filter(|e| **e < 0).count();
            if negatives != 1 {
                return Err(Error::invalid(format!(
                    "row {i} must contain exactly one primary (negative) element, has {negatives}"
                )));
            }
            if !row.weight.is_finite() {
                return Err(Error::invalid(format!("row {i} has non-finite weight")));
            }
        }
        Ok(CoverInstance { rows })
    }

    /// Distinct primary column ids, ascending.
    pub fn primary_columns(&self) -> Vec<ElementId> {
        let mut ids: Vec<ElementId> = self
            .rows
            .iter()
            .flat_map(|r| r.elements.iter().copied().filter(|e| *e < 0))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Distinct secondary column ids, ascending.
    pub fn secondary_columns(&self) -> Vec<ElementId> {
        let mut ids: Vec<ElementId> = self
            .rows
            .iter()
            .flat_map(|r| r.elements.iter().copied().filter(|e| *e > 0))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

const NIL_ROW: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    l: usize,
    r: usize,
    u: usize,
    d: usize,
    /// Header node index of this node's column.
    col: usize,
    /// Row id, `NIL_ROW` for headers.
    row: usize,
}

/// Dancing-links lattice over a [`CoverInstance`].
///
/// Headers of primary columns live in the root ring; secondary headers are
/// self-linked so the identical cover/uncover code applies while "no primary
/// columns remain" is just `root.r == root`.
pub struct DlxMatrix {
    nodes: Vec<Node>,
    /// Live-node count per header index.
    sizes: Vec<usize>,
    /// One representative node per row.
    row_nodes: Vec<usize>,
    row_count: usize,
}

const ROOT: usize = 0;

impl DlxMatrix {
    pub fn new(instance: &CoverInstance) -> Self {
        let mut columns: Vec<ElementId> = instance.primary_columns();
        let n_primary = columns.len();
        columns.extend(instance.secondary_columns());

        let mut nodes = Vec::with_capacity(1 + columns.len());
        nodes.push(Node {
            l: 0,
            r: 0,
            u: 0,
            d: 0,
            col: 0,
            row: NIL_ROW,
        });
        let mut header_of = std::collections::BTreeMap::new();
        for (idx, element) in columns.iter().enumerate() {
            let h = nodes.len();
            header_of.insert(*element, h);
            nodes.push(Node {
                l: h,
                r: h,
                u: h,
                d: h,
                col: h,
                row: NIL_ROW,
            });
            if idx < n_primary {
                // Splice into the root ring.
                let last = nodes[ROOT].l;
                nodes[h].l = last;
                nodes[h].r = ROOT;
                nodes[last].r = h;
                nodes[ROOT].l = h;
            }
        }
        let mut sizes = vec![0usize; nodes.len()];

        let mut row_nodes = Vec::with_capacity(instance.rows.len());
        for (row_id, row) in instance.rows.iter().enumerate() {
            let mut first = None;
            let mut elements = row.elements.clone();
            elements.sort_unstable();
            for element in elements {
                let header = header_of[&element];
                let node = nodes.len();
                let up = nodes[header].u;
                nodes.push(Node {
                    l: node,
                    r: node,
                    u: up,
                    d: header,
                    col: header,
                    row: row_id,
                });
                nodes[up].d = node;
                nodes[header].u = node;
                sizes[header] += 1;
                match first {
                    None => first = Some(node),
                    Some(f) => {
                        let last = nodes[f].l;
                        nodes[node].l = last;
                        nodes[node].r = f;
                        nodes[last].r = node;
                        nodes[f].l = node;
                    }
                }
            }
            row_nodes.push(first.expect("row has at least its primary element"));
        }

        DlxMatrix {
            nodes,
            sizes,
            row_nodes,
            row_count: instance.rows.len(),
        }
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    fn cover_column(&mut self, c: usize) {
        let (l, r) = (self.nodes[c].l, self.nodes[c].r);
        self.nodes[l].r = r;
        self.nodes[r].l = l;
        let mut i = self.nodes[c].d;
        while i != c {
            let mut j = self.nodes[i].r;
            while j != i {
                let (u, d) = (self.nodes[j].u, self.nodes[j].d);
                self.nodes[u].d = d;
                self.nodes[d].u = u;
                self.sizes[self.nodes[j].col] -= 1;
                j = self.nodes[j].r;
            }
            i = self.nodes[i].d;
        }
    }

    fn uncover_column(&mut self, c: usize) {
        let mut i = self.nodes[c].u;
        while i != c {
            let mut j = self.nodes[i].l;
            while j != i {
                let (u, d) = (self.nodes[j].u, self.nodes[j].d);
                self.nodes[u].d = j;
                self.nodes[d].u = j;
                self.sizes[self.nodes[j].col] += 1;
                j = self.nodes[j].l;
            }
            i = self.nodes[i].u;
        }
        let (l, r) = (self.nodes[c].l, self.nodes[c].r);
        self.nodes[l].r = c;
        self.nodes[r].l = c;
    }

    /// Remove every column of row `r` and every row conflicting with it.
    pub fn cover_row(&mut self, row: usize) {
        let start = self.row_nodes[row];
        self.cover_column(self.nodes[start].col);
        let mut j = self.nodes[start].r;
        while j != start {
            self.cover_column(self.nodes[j].col);
            j = self.nodes[j].r;
        }
    }

    /// Exact inverse of [`Self::cover_row`].
    pub fn uncover_row(&mut self, row: usize) {
        let start = self.row_nodes[row];
        let mut j = self.nodes[start].l;
        while j != start {
            self.uncover_column(self.nodes[j].col);
            j = self.nodes[j].l;
        }
        self.uncover_column(self.nodes[start].col);
    }

    /// Hash of the full link topology and column sizes.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        let mut feed = |v: usize| {
            h ^= v as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        };
        for node in &self.nodes {
            feed(node.l);
            feed(node.r);
            feed(node.u);
            feed(node.d);
        }
        for s in &self.sizes {
            feed(*s);
        }
        h
    }

    /// Primary header with the fewest live rows; `None` when no primary
    /// columns remain.
    fn choose_column(&self) -> Option<usize> {
        let mut best = None;
        let mut c = self.nodes[ROOT].r;
        while c != ROOT {
            match best {
                None => best = Some(c),
                Some(b) if self.sizes[c] < self.sizes[b] => best = Some(c),
                _ => {}
            }
            c = self.nodes[c].r;
        }
        best
    }

    /// Live rows of a column, in insertion order.
    fn rows_of(&self, c: usize) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.sizes[c]);
        let mut i = self.nodes[c].d;
        while i != c {
            rows.push(self.nodes[i].row);
            i = self.nodes[i].d;
        }
        rows
    }

    /// Completion bound for selecting `row`: its weight plus the best
    /// remaining weight of every primary column left after covering it.
    /// `-inf` when some primary column would become uncoverable.
    fn heuristic(&mut self, row: usize, weights: &[f64]) -> f64 {
        self.cover_row(row);
        let mut h = weights[row];
        let mut c = self.nodes[ROOT].r;
        while c != ROOT {
            let mut best = f64::NEG_INFINITY;
            let mut i = self.nodes[c].d;
            while i != c {
                best = best.max(weights[self.nodes[i].row]);
                i = self.nodes[i].d;
            }
            h += best;
            if h == f64::NEG_INFINITY {
                break;
            }
            c = self.nodes[c].r;
        }
        self.uncover_row(row);
        h
    }
}

/// Solver output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveOutcome {
    /// Selected row indices, ascending.
    pub selected: Vec<usize>,
    pub total_weight: f64,
    /// False when the timeout fired and the incumbent may be suboptimal.
    pub optimal: bool,
    pub nodes_explored: u64,
}

struct Search<'a> {
    matrix: DlxMatrix,
    weights: &'a [f64],
    tiebreak: &'a [f64],
    deadline: Instant,
    timed_out: bool,
    nodes: u64,
    current: Vec<usize>,
    best: Option<(f64, f64, Vec<usize>)>,
}

impl Search<'_> {
    fn record_if_better(&mut self, weight: f64) {
        let cost: f64 = self.current.iter().map(|r| self.tiebreak[*r]).sum();
        let mut rows = self.current.clone();
        rows.sort_unstable();
        let better = match &self.best {
            None => true,
            Some((bw, bc, brows)) => {
                weight > *bw
                    || (weight == *bw && (cost < *bc || (cost == *bc && rows < *brows)))
            }
        };
        if better {
            self.best = Some((weight, cost, rows));
        }
    }

    fn backtrack(&mut self, cur_weight: f64) {
        self.nodes += 1;
        if Instant::now() >= self.deadline {
            self.timed_out = true;
            return;
        }

        let Some(column) = self.matrix.choose_column() else {
            self.record_if_better(cur_weight);
            return;
        };

        let rows = self.matrix.rows_of(column);
        let mut scored: Vec<(f64, usize)> = rows
            .into_iter()
            .map(|r| (self.matrix.heuristic(r, self.weights), r))
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

        for (h, row) in scored {
            // Strictly-worse bounds are pruned; equal bounds stay explorable
            // so the documented weight-tie-break can apply.
            if let Some((best_weight, _, _)) = &self.best {
                if cur_weight + h < *best_weight {
                    return;
                }
            }
            if h == f64::NEG_INFINITY {
                return;
            }
            self.matrix.cover_row(row);
            self.current.push(row);
            self.backtrack(cur_weight + self.weights[row]);
            self.current.pop();
            self.matrix.uncover_row(row);
            if self.timed_out {
                return;
            }
        }
    }
}

/// Maximum-weight general exact cover of `instance`.
///
/// Every primary column is covered exactly once, every secondary column at
/// most once. Returns [`Error::NoFeasibleCover`] when no selection covers the
/// primaries; when `timeout` expires the best incumbent is returned with
/// `optimal = false`.
pub fn solve_dlx(instance: &CoverInstance, timeout: Duration) -> Result<SolveOutcome> {
    let weights: Vec<f64> = instance.rows.iter().map(|r| r.weight).collect();
    let tiebreak: Vec<f64> = instance.rows.iter().map(|r| r.tiebreak_cost).collect();
    let mut search = Search {
        matrix: DlxMatrix::new(instance),
        weights: &weights,
        tiebreak: &tiebreak,
        deadline: Instant::now() + timeout,
        timed_out: false,
        nodes: 0,
        current: Vec::new(),
        best: None,
    };
    search.backtrack(0.0);
    let timed_out = search.timed_out;
    let nodes = search.nodes;
    match search.best {
        Some((weight, _, rows)) => Ok(SolveOutcome {
            selected: rows,
            total_weight: weight,
            optimal: !timed_out,
            nodes_explored: nodes,
        }),
        None if timed_out => Err(Error::CoverTimeout),
        None => Err(Error::NoFeasibleCover),
    }
}

/// Root-state completion bound of every row (testing hook for the
/// admissibility property).
pub fn root_heuristics(instance: &CoverInstance) -> Vec<f64> {
    let weights: Vec<f64> = instance.rows.iter().map(|r| r.weight).collect();
    let mut matrix = DlxMatrix::new(instance);
    (0..instance.rows.len())
        .map(|r| matrix.heuristic(r, &weights))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::testkit;

    fn row(elements: &[ElementId], weight: f64) -> CoverRow {
        CoverRow::new(elements.to_vec(), weight)
    }

    /// The three-group reference instance: groups -1..-3 with upstream
    /// candidates 1..10; candidate sets ([5,6],[5,6,7]), ([1],[1,2,3],
    /// [2,3,4,5]) and ([8,9],[9,10]).
    pub(crate) fn reference_instance(weights: &[f64; 11]) -> CoverInstance {
        let rows = vec![
            row(&[5, 6, -1], weights[0]),
            row(&[5, 7, -1], weights[1]),
            row(&[6, 7, -1], weights[2]),
            row(&[1, 2, 3, -2], weights[3]),
            row(&[1, 2, 4, -2], weights[4]),
            row(&[1, 2, 5, -2], weights[5]),
            row(&[1, 3, 4, -2], weights[6]),
            row(&[1, 3, 5, -2], weights[7]),
            row(&[8, 9, -3], weights[8]),
            row(&[8, 10, -3], weights[9]),
            row(&[9, 10, -3], weights[10]),
        ];
        CoverInstance::new(rows).unwrap()
    }

    #[test]
    fn reference_instance_feasible_covers() {
        let instance = reference_instance(&[0.0; 11]);
        let feasible = testkit::enumerate_feasible_covers(&instance);
        assert!(feasible.contains(&vec![0, 4, 9]), "s1,s5,s10 must be feasible");
        assert!(feasible.contains(&vec![1, 6, 10]), "s2,s7,s11 must be feasible");
        // Every feasible cover uses each group exactly once.
        for cover in &feasible {
            let mut groups: Vec<ElementId> = cover
                .iter()
                .flat_map(|r| instance.rows[*r].elements.iter().copied().filter(|e| *e < 0))
                .collect();
            groups.sort_unstable();
            assert_eq!(groups, vec![-3, -2, -1]);
        }
    }

    #[test]
    fn single_row_covering_all_primaries() {
        let instance = CoverInstance::new(vec![row(&[1, -1], 2.5)]).unwrap();
        let outcome = solve_dlx(&instance, Duration::from_secs(5)).unwrap();
        assert_eq!(outcome.selected, vec![0]);
        assert_eq!(outcome.total_weight, 2.5);
        assert!(outcome.optimal);
    }

    #[test]
    fn infeasible_when_secondary_conflicts() {
        // Both groups need upstream vehicle 1.
        let instance =
            CoverInstance::new(vec![row(&[1, -1], 0.0), row(&[1, -2], 0.0)]).unwrap();
        assert!(matches!(
            solve_dlx(&instance, Duration::from_secs(5)),
            Err(Error::NoFeasibleCover)
        ));
    }

    #[test]
    fn optimal_weight_matches_brute_force_on_random_instances() {
        let mut rng = SplitMix64::new(404);
        for trial in 0..200 {
            let instance = testkit::random_cover_instance(&mut rng, 12, 10);
            let brute = testkit::brute_force_best_cover(&instance);
            let solved = solve_dlx(&instance, Duration::from_secs(10));
            match (brute, solved) {
                (None, Err(Error::NoFeasibleCover)) => {}
                (Some((bw, _)), Ok(outcome)) => {
                    assert!(
                        (outcome.total_weight - bw).abs() < 1e-9,
                        "trial {trial}: dlx {} vs brute {bw}",
                        outcome.total_weight
                    );
                    assert!(outcome.optimal);
                }
                (b, s) => panic!("trial {trial}: feasibility mismatch {b:?} vs {s:?}"),
            }
        }
    }

    #[test]
    fn heuristic_is_admissible_at_root() {
        let mut rng = SplitMix64::new(991);
        for _ in 0..100 {
            let instance = testkit::random_cover_instance(&mut rng, 10, 8);
            let bounds = root_heuristics(&instance);
            for (r, bound) in bounds.iter().enumerate() {
                if let Some((best, _)) = testkit::brute_force_best_cover_containing(&instance, r) {
                    assert!(
                        *bound >= best - 1e-9,
                        "row {r}: bound {bound} under best completion {best}"
                    );
                }
            }
        }
    }

    #[test]
    fn cover_uncover_roundtrip_restores_fingerprint() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..50 {
            let instance = testkit::random_cover_instance(&mut rng, 10, 8);
            let mut matrix = DlxMatrix::new(&instance);
            let before = matrix.fingerprint();
            // Random non-conflicting cover sequence, then unwind.
            let mut covered: Vec<usize> = Vec::new();
            for _ in 0..instance.rows.len().min(4) {
                let r = rng.index(instance.rows.len());
                // Skip rows sharing elements with covered rows to keep the
                // sequence legal.
                let conflict = covered.iter().any(|c| {
                    instance.rows[*c]
                        .elements
                        .iter()
                        .any(|e| instance.rows[r].elements.contains(e))
                });
                if conflict {
                    continue;
                }
                matrix.cover_row(r);
                covered.push(r);
            }
            for r in covered.iter().rev() {
                matrix.uncover_row(*r);
            }
            assert_eq!(matrix.fingerprint(), before);
        }
    }

    #[test]
    fn no_upstream_id_in_two_selected_rows() {
        let mut rng = SplitMix64::new(55);
        for _ in 0..50 {
            let instance = testkit::random_cover_instance(&mut rng, 12, 10);
            if let Ok(outcome) = solve_dlx(&instance, Duration::from_secs(5)) {
                let mut seen = std::collections::BTreeSet::new();
                for r in &outcome.selected {
                    for e in instance.rows[*r].elements.iter().filter(|e| **e > 0) {
                        assert!(seen.insert(*e), "secondary {e} reused");
                    }
                }
            }
        }
    }

    #[test]
    fn timeout_returns_incumbent_or_times_out() {
        let mut rng = SplitMix64::new(3);
        let instance = testkit::random_cover_instance(&mut rng, 12, 10);
        if testkit::brute_force_best_cover(&instance).is_some() {
            match solve_dlx(&instance, Duration::from_nanos(1)) {
                Ok(outcome) => assert!(!outcome.optimal),
                Err(Error::CoverTimeout) => {}
                Err(other) => panic!("unexpected: {other:?}"),
            }
        }
    }

    #[test]
    fn tie_break_prefers_cheaper_rows() {
        let mut rows = vec![
            row(&[1, -1], 1.0),
            row(&[2, -1], 1.0),
        ];
        rows[0].tiebreak_cost = 2.0;
        rows[1].tiebreak_cost = 1.0;
        let instance = CoverInstance::new(rows).unwrap();
        let outcome = solve_dlx(&instance, Duration::from_secs(5)).unwrap();
        assert_eq!(outcome.selected, vec![1]);
    }
}
