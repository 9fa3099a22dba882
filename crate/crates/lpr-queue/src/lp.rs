//! Small dense linear programs over inequality systems `A x <= b`.
//!
//! These are plumbing for the sampler and the constraint builder: interior
//! points via the Chebyshev center, per-coordinate ranges, per-row redundancy
//! probes and minimal infeasible row subsets. The systems involved are tiny
//! (tens of rows, a handful of variables), so a plain simplex solve per query
//! is more than fast enough.

use minilp::{ComparisonOp, OptimizationDirection, Problem, Variable};
use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Box bound applied to every structural variable. NAT values are seconds
/// within a study period, so this is effectively unbounded.
const VAR_BOUND: f64 = 1e9;

fn add_rows(
    problem: &mut Problem,
    vars: &[Variable],
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    skip_row: Option<usize>,
) {
    for i in 0..a.nrows() {
        if Some(i) == skip_row {
            continue;
        }
        let coeffs: Vec<(Variable, f64)> = (0..a.ncols())
            .filter(|&j| a[(i, j)] != 0.0)
            .map(|j| (vars[j], a[(i, j)]))
            .collect();
        problem.add_constraint(&coeffs, ComparisonOp::Le, b[i]);
    }
}

/// Chebyshev center of `{x : A x <= b}`: the center of the largest inscribed
/// ball, together with its radius. A non-positive radius means the polytope
/// has an empty interior.
pub fn chebyshev_center(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let n = a.ncols();
    if n == 0 {
        return Err(Error::invalid("zero-dimensional system"));
    }
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<Variable> = (0..n)
        .map(|_| problem.add_var(0.0, (-VAR_BOUND, VAR_BOUND)))
        .collect();
    let radius = problem.add_var(1.0, (0.0, VAR_BOUND));
    for i in 0..a.nrows() {
        let norm = a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut coeffs: Vec<(Variable, f64)> = (0..n)
            .filter(|&j| a[(i, j)] != 0.0)
            .map(|j| (vars[j], a[(i, j)]))
            .collect();
        coeffs.push((radius, norm));
        problem.add_constraint(&coeffs, ComparisonOp::Le, b[i]);
    }
    let solution = match problem.solve() {
        Ok(s) => s,
        Err(_) => {
            return Err(Error::Infeasible {
                rows: minimal_infeasible_subset(a, b),
            })
        }
    };
    let center = DVector::from_iterator(n, vars.iter().map(|v| solution[*v]));
    Ok((center, solution[radius]))
}

/// True when the system admits a point with strictly positive slack.
pub fn is_strictly_feasible(a: &DMatrix<f64>, b: &DVector<f64>, min_radius: f64) -> bool {
    match {
        // Chebyshev solve without the IIS fallback on failure.
        let n = a.ncols();
        let mut problem = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<Variable> = (0..n)
            .map(|_| problem.add_var(0.0, (-VAR_BOUND, VAR_BOUND)))
            .collect();
        let radius = problem.add_var(1.0, (0.0, VAR_BOUND));
        for i in 0..a.nrows() {
            let norm = a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut coeffs: Vec<(Variable, f64)> = (0..n)
                .filter(|&j| a[(i, j)] != 0.0)
                .map(|j| (vars[j], a[(i, j)]))
                .collect();
            coeffs.push((radius, norm));
            problem.add_constraint(&coeffs, ComparisonOp::Le, b[i]);
        }
        problem.solve().map(|s| s.objective())
    } {
        Ok(r) => r > min_radius,
        Err(_) => false,
    }
}

/// Maximum of `objective . x` over the system, optionally ignoring one row.
pub fn maximize(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    objective: &DVector<f64>,
    skip_row: Option<usize>,
) -> Result<f64> {
    let n = a.ncols();
    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<Variable> = (0..n)
        .map(|j| problem.add_var(objective[j], (-VAR_BOUND, VAR_BOUND)))
        .collect();
    add_rows(&mut problem, &vars, a, b, skip_row);
    let solution = problem.solve().map_err(|e| Error::Lp(e.to_string()))?;
    Ok(solution.objective())
}

/// `(min, max)` of coordinate `j` over the polytope.
pub fn coordinate_bounds(a: &DMatrix<f64>, b: &DVector<f64>, j: usize) -> Result<(f64, f64)> {
    let mut obj = DVector::zeros(a.ncols());
    obj[j] = 1.0;
    let hi = maximize(a, b, &obj, None)?;
    obj[j] = -1.0;
    let lo = -maximize(a, b, &obj, None)?;
    Ok((lo, hi))
}

/// Minimal infeasible row subset of an infeasible system (deletion filter):
/// every row in the result is necessary for the infeasibility.
pub fn minimal_infeasible_subset(a: &DMatrix<f64>, b: &DVector<f64>) -> Vec<usize> {
    let m = a.nrows();
    let mut kept: Vec<usize> = (0..m).collect();
    let feasible = |rows: &[usize]| -> bool {
        if rows.is_empty() {
            return true;
        }
        let sub_a = DMatrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)]);
        let sub_b = DVector::from_iterator(rows.len(), rows.iter().map(|&i| b[i]));
        is_strictly_feasible(&sub_a, &sub_b, -1e-9)
    };
    if feasible(&kept) {
        return Vec::new();
    }
    let mut i = 0;
    while i < kept.len() {
        let mut trial = kept.clone();
        trial.remove(i);
        if feasible(&trial) {
            // Row is necessary for infeasibility; keep it.
            i += 1;
        } else {
            kept = trial;
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Unit box `0 <= x_j <= 1` in `dim` dimensions.
    pub(crate) fn unit_box(dim: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(2 * dim, dim);
        let mut b = DVector::zeros(2 * dim);
        for j in 0..dim {
            a[(2 * j, j)] = 1.0;
            b[2 * j] = 1.0;
            a[(2 * j + 1, j)] = -1.0;
            b[2 * j + 1] = 0.0;
        }
        (a, b)
    }

    /// Simplex `x >= 0, sum x <= 1`.
    pub(crate) fn simplex(dim: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(dim + 1, dim);
        let mut b = DVector::zeros(dim + 1);
        for j in 0..dim {
            a[(j, j)] = -1.0;
        }
        for j in 0..dim {
            a[(dim, j)] = 1.0;
        }
        b[dim] = 1.0;
        (a, b)
    }

    #[test]
    fn box_center_is_midpoint() {
        for dim in [1, 2, 5] {
            let (a, b) = unit_box(dim);
            let (center, radius) = chebyshev_center(&a, &b).unwrap();
            for j in 0..dim {
                assert!((center[j] - 0.5).abs() < 1e-7, "dim {dim}: {center}");
            }
            assert!((radius - 0.5).abs() < 1e-7);
        }
    }

    #[test]
    fn simplex_center_equidistant_from_edges() {
        let (a, b) = simplex(2);
        let (center, radius) = chebyshev_center(&a, &b).unwrap();
        // Distances to x=0, y=0 and x+y=1.
        let d1 = center[0];
        let d2 = center[1];
        let d3 = (1.0 - center[0] - center[1]) / 2f64.sqrt();
        assert!((d1 - radius).abs() < 1e-5);
        assert!((d2 - radius).abs() < 1e-5);
        assert!((d3 - radius).abs() < 1e-5);
    }

    #[test]
    fn coordinate_bounds_of_box() {
        let (a, b) = unit_box(3);
        for j in 0..3 {
            let (lo, hi) = coordinate_bounds(&a, &b, j).unwrap();
            assert!((lo - 0.0).abs() < 1e-8);
            assert!((hi - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn infeasible_subset_is_minimal() {
        // x <= 0, -x <= -1 (i.e. x >= 1) conflict; x <= 5 is innocent.
        let a = DMatrix::from_row_slice(3, 1, &[1.0, -1.0, 1.0]);
        let b = DVector::from_row_slice(&[0.0, -1.0, 5.0]);
        let subset = minimal_infeasible_subset(&a, &b);
        assert_eq!(subset, vec![0, 1]);
    }

    #[test]
    fn feasibility_probe() {
        let (a, b) = unit_box(2);
        assert!(is_strictly_feasible(&a, &b, 1e-12));
        let a2 = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b2 = DVector::from_row_slice(&[0.0, -1.0]);
        assert!(!is_strictly_feasible(&a2, &b2, 1e-12));
    }
}
