//! Stochastic lane-based queue estimation at signalized intersections from
//! multi-section license-plate recognition (LPR) data.
//!
//! The pipeline reconstructs each vehicle's *no-delay arrival time* (NAT) — the
//! instant it would have reached the stop line had it never slowed down — from
//! upstream/downstream plate matches and a fitted running-time distribution.
//! NATs of a vehicle group are constrained to a bounded polytope; uniform
//! samples of that polytope (weighted by the running-time prior) yield
//! per-vehicle arrival distributions, from which per-second queue profiles and
//! per-cycle maximum queue lengths follow via shockwave geometry.
//!
//! Module map:
//!
//! * [`lpr`] — record ingestion, departure-time extraction, plate matching
//! * [`running_time`] — truncated log-normal running-time prior, mixture fit
//! * [`nat`] — vehicle partitioning and NAT inequality systems
//! * [`sampler`] — uniform polytope sampling (Vaidya walk, hit-and-run)
//! * [`arrival`] — per-vehicle arrival distributions from polytope samples
//! * [`queue`] — queue profile and maximum queue length estimation
//! * [`multilane`] — cross-lane rematching via weighted general exact cover
//! * [`calibration`] — headway / gap / grid-search parameter calibration
//! * [`linksim`] — signalized-link micro-simulator for ground truth
//! * [`pipeline`] — end-to-end orchestration and artifact output

pub mod arrival;
pub mod calibration;
pub mod dlx;
mod error;
pub mod metrics;
pub mod multilane;
pub mod queue;
pub mod sampler;
pub mod testkit;
pub mod linksim;
pub mod lp;
pub mod lpr;
pub mod nat;
pub mod rng;
pub mod running_time;

pub use error::{Error, Result};
