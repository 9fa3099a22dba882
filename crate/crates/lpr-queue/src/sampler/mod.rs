//! Approximately uniform sampling of bounded polytopes `{t : A t <= b}`.
//!
//! Two interchangeable random walks sit behind the [`PolytopeWalk`] trait and
//! are selected by name through the [`WalkRegistry`]:
//!
//! * `vaidya` — interior-point walk whose Gaussian proposals follow the local
//!   metric of the volumetric-logarithmic barrier; the production default.
//! * `hit_and_run` — chord sampling along random directions; slower mixing
//!   per step but unconditionally correct, kept as the test oracle.
//!
//! Chains start at the Chebyshev center, discard `burn_in` steps (default
//! `ceil(sqrt(m) * n^1.5)`, the walk's mixing order) and keep every
//! `thinning`-th state afterwards. Everything is deterministic given the
//! seed.

mod hit_and_run;
mod vaidya;

pub use hit_and_run::HitAndRunWalk;
pub use vaidya::VaidyaWalk;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::nat::ConstraintSystem;
use crate::rng::SplitMix64;
use crate::{lp, Error, Result};

/// Membership tolerance for emitted samples.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkKind {
    Vaidya,
    HitAndRun,
}

impl WalkKind {
    pub fn name(self) -> &'static str {
        match self {
            WalkKind::Vaidya => "vaidya",
            WalkKind::HitAndRun => "hit_and_run",
        }
    }
}

impl std::str::FromStr for WalkKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "vaidya" => Ok(WalkKind::Vaidya),
            "hit_and_run" | "hit-and-run" => Ok(WalkKind::HitAndRun),
            other => Err(format!("unknown walk `{other}` (expected vaidya|hit_and_run)")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerParams {
    pub n_samples: usize,
    pub seed: u64,
    pub walk: WalkKind,
    /// Override of the default `ceil(sqrt(m) * n^1.5)` burn-in.
    pub burn_in: Option<usize>,
    /// Override of the default `n` thinning.
    pub thinning: Option<usize>,
    /// Step-size parameter of the Vaidya proposal.
    pub vaidya_radius: f64,
}

impl SamplerParams {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        SamplerParams {
            n_samples,
            seed,
            walk: WalkKind::Vaidya,
            burn_in: None,
            thinning: None,
            vaidya_radius: vaidya::DEFAULT_RADIUS,
        }
    }

    pub fn with_walk(mut self, walk: WalkKind) -> Self {
        self.walk = walk;
        self
    }
}

/// One Markov-chain state transition.
pub trait PolytopeWalk {
    fn name(&self) -> &'static str;

    /// Advance `x` by one step; returns whether the proposal was accepted
    /// (hit-and-run always moves).
    fn step(&mut self, x: &mut DVector<f64>, rng: &mut SplitMix64) -> bool;
}

pub type WalkFactory = fn(&ConstraintSystem, &SamplerParams) -> Box<dyn PolytopeWalk>;

/// Name-indexed registry of walk constructors.
///
/// The defaults register `vaidya` and `hit_and_run`; callers may add further
/// strategies under new names (last registration of a name wins).
pub struct WalkRegistry {
    entries: Vec<(&'static str, WalkFactory)>,
}

impl WalkRegistry {
    pub fn empty() -> Self {
        WalkRegistry { entries: Vec::new() }
    }

    pub fn with_defaults() -> Self {
        let mut registry = Self::empty();
        registry.register("vaidya", |system, params| {
            Box::new(VaidyaWalk::new(system, params.vaidya_radius))
        });
        registry.register("hit_and_run", |system, _| {
            Box::new(HitAndRunWalk::new(system))
        });
        registry
    }

    pub fn register(&mut self, name: &'static str, factory: WalkFactory) {
        self.entries.retain(|(n, _)| *n != name);
        self.entries.push((name, factory));
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|(n, _)| *n).collect()
    }

    pub fn create(
        &self,
        name: &str,
        system: &ConstraintSystem,
        params: &SamplerParams,
    ) -> Result<Box<dyn PolytopeWalk>> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| f(system, params))
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown walk `{name}`; registered: {:?}",
                    self.names()
                ))
            })
    }
}

/// A batch of polytope samples, one row per point.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub points: DMatrix<f64>,
    pub seed: u64,
    pub walk: WalkKind,
    pub burn_in: usize,
    pub thinning: usize,
    /// Fraction of accepted proposals over the whole run.
    pub acceptance: f64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.points.row(i).transpose()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.points[(i, j)]).collect()
    }
}

/// Chebyshev center of the system: the walk's starting point.
pub fn interior_point(system: &ConstraintSystem) -> Result<DVector<f64>> {
    if system.dim() == 0 {
        return Err(Error::invalid("zero-dimensional constraint system"));
    }
    let (center, radius) = lp::chebyshev_center(&system.a, &system.b)?;
    if radius <= 0.0 {
        return Err(Error::Infeasible {
            rows: lp::minimal_infeasible_subset(&system.a, &system.b),
        });
    }
    // The LP optimum carries solver tolerance; report the radius actually
    // achieved by the returned center so the slack guarantee is exact.
    let slack = &system.b - &system.a * &center;
    let mut achieved = f64::INFINITY;
    for (i, s) in slack.iter().enumerate() {
        let norm = system.a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            achieved = achieved.min(*s / norm);
        }
    }
    debug_assert!(
        achieved >= radius * (1.0 - 1e-4) - 1e-9,
        "center slack {achieved} far below LP radius {radius}"
    );
    Ok(center)
}

/// Default burn-in: the walk's mixing order `ceil(sqrt(m) * n^1.5)`.
pub fn default_burn_in(m: usize, n: usize) -> usize {
    ((m as f64).sqrt() * (n as f64).powf(1.5)).ceil() as usize
}

/// Draw `params.n_samples` approximately uniform points from the system.
pub fn sample_uniform(system: &ConstraintSystem, params: &SamplerParams) -> Result<SampleBatch> {
    sample_uniform_with(&WalkRegistry::with_defaults(), system, params)
}

/// [`sample_uniform`] with an explicit walk registry.
pub fn sample_uniform_with(
    registry: &WalkRegistry,
    system: &ConstraintSystem,
    params: &SamplerParams,
) -> Result<SampleBatch> {
    let n = system.dim();
    let m = system.rows();
    if n == 0 {
        return Err(Error::invalid("cannot sample a zero-dimensional system"));
    }
    if params.n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }

    let burn_in = params.burn_in.unwrap_or_else(|| default_burn_in(m, n));
    let thinning = params.thinning.unwrap_or(n).max(1);

    let mut rng = SplitMix64::new(params.seed);
    let mut x = interior_point(system)?;
    let mut walk = registry.create(params.walk.name(), system, params)?;

    let mut accepted = 0usize;
    let mut proposed = 0usize;
    let mut window_accepted = 0usize;
    let mut window_proposed = 0usize;
    const STUCK_WINDOW: usize = 10_000;

    let mut step = |x: &mut DVector<f64>, rng: &mut SplitMix64| -> Result<()> {
        let ok = walk.step(x, rng);
        proposed += 1;
        window_proposed += 1;
        if ok {
            accepted += 1;
            window_accepted += 1;
        }
        if window_proposed == STUCK_WINDOW {
            let rate = window_accepted as f64 / window_proposed as f64;
            if rate < 0.01 {
                return Err(Error::SamplerStuck {
                    acceptance: rate,
                    window: STUCK_WINDOW,
                });
            }
            window_proposed = 0;
            window_accepted = 0;
        }
        Ok(())
    };

    for _ in 0..burn_in {
        step(&mut x, &mut rng)?;
    }

    let mut points = DMatrix::zeros(params.n_samples, n);
    for i in 0..params.n_samples {
        for _ in 0..thinning {
            step(&mut x, &mut rng)?;
        }
        debug_assert!(system.contains(&x, MEMBERSHIP_TOL));
        points.row_mut(i).copy_from(&x.transpose());
    }

    Ok(SampleBatch {
        points,
        seed: params.seed,
        walk: params.walk,
        burn_in,
        thinning,
        acceptance: accepted as f64 / proposed.max(1) as f64,
    })
}

#[cfg(test)]
pub(crate) mod test_systems {
    use super::*;
    use crate::nat::{RowKind, VarRole};

    pub fn system_from(a: DMatrix<f64>, b: DVector<f64>) -> ConstraintSystem {
        let n = a.ncols();
        let m = a.nrows();
        ConstraintSystem {
            a,
            b,
            roles: (0..n).map(VarRole::Interior).collect(),
            row_kinds: vec![RowKind::Detected; m],
            relaxation: 0.0,
        }
    }

    /// Unit box `[0,1]^dim`.
    pub fn unit_box(dim: usize) -> ConstraintSystem {
        let mut a = DMatrix::zeros(2 * dim, dim);
        let mut b = DVector::zeros(2 * dim);
        for j in 0..dim {
            a[(2 * j, j)] = 1.0;
            b[2 * j] = 1.0;
            a[(2 * j + 1, j)] = -1.0;
        }
        system_from(a, b)
    }

    /// Simplex `x >= 0, sum x <= 1`.
    pub fn simplex(dim: usize) -> ConstraintSystem {
        let mut a = DMatrix::zeros(dim + 1, dim);
        let mut b = DVector::zeros(dim + 1);
        for j in 0..dim {
            a[(j, j)] = -1.0;
            a[(dim, j)] = 1.0;
        }
        b[dim] = 1.0;
        system_from(a, b)
    }

    /// A random bounded polytope: the unit box cut by `extra` random halfspaces
    /// through points near the center.
    pub fn random_polytope(dim: usize, extra: usize, rng: &mut SplitMix64) -> ConstraintSystem {
        let box_sys = unit_box(dim);
        let m = 2 * dim + extra;
        let mut a = DMatrix::zeros(m, dim);
        let mut b = DVector::zeros(m);
        a.view_mut((0, 0), (2 * dim, dim)).copy_from(&box_sys.a);
        b.rows_mut(0, 2 * dim).copy_from(&box_sys.b);
        for i in 0..extra {
            let mut norm = 0.0;
            for j in 0..dim {
                let v = rng.uniform_in(-1.0, 1.0);
                a[(2 * dim + i, j)] = v;
                norm += v * v;
            }
            let norm = norm.sqrt().max(1e-9);
            for j in 0..dim {
                a[(2 * dim + i, j)] /= norm;
            }
            // Offset keeps the center strictly inside.
            let mut rhs = 0.0;
            for j in 0..dim {
                rhs += a[(2 * dim + i, j)] * 0.5;
            }
            b[2 * dim + i] = rhs + rng.uniform_in(0.05, 0.45);
        }
        system_from(a, b)
    }
}
