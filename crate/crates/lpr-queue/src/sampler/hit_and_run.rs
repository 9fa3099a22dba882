//! Hit-and-run: pick a uniform random direction, intersect the line with the
//! polytope, move to a uniform point on the chord. Every step moves, and the
//! stationary distribution is exactly uniform, which makes this walk the
//! reference oracle for the Vaidya walk.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::PolytopeWalk;
use crate::nat::ConstraintSystem;
use crate::rng::SplitMix64;

pub struct HitAndRunWalk {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl HitAndRunWalk {
    pub fn new(system: &ConstraintSystem) -> Self {
        HitAndRunWalk {
            a: system.a.clone(),
            b: system.b.clone(),
        }
    }
}

/// One hit-and-run transition over `{t : A t <= b}`; shared with the Vaidya
/// walk's degenerate-metric fallback.
pub(crate) fn hit_and_run_step(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &mut DVector<f64>,
    rng: &mut SplitMix64,
) -> bool {
    let n = x.len();
    let mut direction = DVector::from_fn(n, |_, _| -> f64 { StandardNormal.sample(rng) });
    let norm = direction.norm();
    if norm < 1e-300 {
        return false;
    }
    direction /= norm;

    let slack = b - &*a * &*x;
    let projection = a * &direction;
    let (mut lo, mut hi) = (-1e12f64, 1e12f64);
    for i in 0..slack.len() {
        let p = projection[i];
        if p > 1e-14 {
            hi = hi.min(slack[i] / p);
        } else if p < -1e-14 {
            lo = lo.max(slack[i] / p);
        }
    }
    if !(lo < hi) || hi - lo < 1e-14 {
        return false;
    }
    let lambda = rng.uniform_in(lo, hi);
    *x += lambda * direction;
    true
}

impl PolytopeWalk for HitAndRunWalk {
    fn name(&self) -> &'static str {
        "hit_and_run"
    }

    fn step(&mut self, x: &mut DVector<f64>, rng: &mut SplitMix64) -> bool {
        hit_and_run_step(&self.a, &self.b, x, rng)
    }
}
