//! Prior running-time distribution.
//!
//! Matched travel times mix the pure link running time with queued delay, so
//! the prior is recovered by fitting a log-normal mixture to the travel-time
//! sample, discarding noise components and keeping the component with the
//! smallest mean. That component, truncated to the range of its assigned
//! samples, is the [`RunningTimeDist`] used everywhere downstream.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Smallest admissible log-scale standard deviation during fitting.
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Components below this weight are treated as noise when selecting the
/// running component; so are components with log-scale sigma above
/// [`NOISE_SIGMA_CEIL`].
pub const NOISE_WEIGHT_FLOOR: f64 = 0.05;
pub const NOISE_SIGMA_CEIL: f64 = 1.0;

/// Truncated log-normal running-time distribution.
///
/// Density for `a <= tau <= b`:
///
/// ```text
/// g(tau) = phi((ln tau - mu)/sigma) / (tau sigma)
///          ------------------------------------------------
///          Phi((ln b - mu)/sigma) - Phi((ln a - mu)/sigma)
/// ```
///
/// and zero elsewhere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunningTimeDist {
    pub mu: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
}

impl RunningTimeDist {
    pub fn new(mu: f64, sigma: f64, a: f64, b: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
        }
        if !(a > 0.0 && a <= b) {
            return Err(Error::invalid(format!(
                "truncation bounds must satisfy 0 < a <= b, got a={a}, b={b}"
            )));
        }
        Ok(RunningTimeDist { mu, sigma, a, b })
    }

    /// Width of the truncation interval, `b - a`.
    pub fn range(&self) -> f64 {
        self.b - self.a
    }

    fn std_normal() -> Normal {
        Normal::standard()
    }

    /// Mass of the untruncated log-normal inside `[a, b]`.
    fn truncation_mass(&self) -> f64 {
        let n = Self::std_normal();
        n.cdf((self.b.ln() - self.mu) / self.sigma) - n.cdf((self.a.ln() - self.mu) / self.sigma)
    }

    /// Density of the truncated log-normal at `tau`; zero outside `[a, b]`.
    pub fn pdf(&self, tau: f64) -> f64 {
        if tau < self.a || tau > self.b || self.a == self.b {
            return 0.0;
        }
        let mass = self.truncation_mass();
        if mass <= 0.0 {
            return 0.0;
        }
        let z = (tau.ln() - self.mu) / self.sigma;
        let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        phi / (tau * self.sigma * mass)
    }

    /// Natural log of [`Self::pdf`]; `-inf` outside the support.
    pub fn ln_pdf(&self, tau: f64) -> f64 {
        if tau < self.a || tau > self.b || self.a == self.b {
            return f64::NEG_INFINITY;
        }
        let mass = self.truncation_mass();
        if mass <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let z = (tau.ln() - self.mu) / self.sigma;
        -0.5 * z * z
            - 0.5 * (2.0 * std::f64::consts::PI).ln()
            - tau.ln()
            - self.sigma.ln()
            - mass.ln()
    }

    /// CDF of the truncated distribution.
    pub fn cdf(&self, tau: f64) -> f64 {
        if tau <= self.a {
            return 0.0;
        }
        if tau >= self.b {
            return 1.0;
        }
        let n = Self::std_normal();
        let lo = n.cdf((self.a.ln() - self.mu) / self.sigma);
        let hi = n.cdf((self.b.ln() - self.mu) / self.sigma);
        ((n.cdf((tau.ln() - self.mu) / self.sigma) - lo) / (hi - lo)).clamp(0.0, 1.0)
    }

    /// Inverse CDF; `p` is clamped to `[0, 1]`.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        let n = Self::std_normal();
        let lo = n.cdf((self.a.ln() - self.mu) / self.sigma);
        let hi = n.cdf((self.b.ln() - self.mu) / self.sigma);
        let z = n.inverse_cdf(lo + p * (hi - lo));
        (self.mu + self.sigma * z).exp().clamp(self.a, self.b)
    }

    /// Draw a running time by inverse-CDF sampling.
    pub fn sample(&self, rng: &mut SplitMix64) -> f64 {
        self.quantile(rng.uniform())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mu: f64,
    pub sigma: f64,
}

impl MixtureComponent {
    /// Mean of the (untruncated) log-normal component.
    pub fn mean(&self) -> f64 {
        (self.mu + 0.5 * self.sigma * self.sigma).exp()
    }
}

/// Log-normal mixture fitted by EM on the log travel times.
#[derive(Debug, Clone)]
pub struct MixtureModel {
    pub components: Vec<MixtureComponent>,
    /// Per-sample responsibilities, indexed `[sample][component]`.
    pub responsibilities: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    pub bic: f64,
    /// Log-likelihood after each EM iteration of the selected fit.
    pub ll_trace: Vec<f64>,
}

impl MixtureModel {
    /// Index of the component with the largest responsibility for sample `i`.
    pub fn assignment(&self, i: usize) -> usize {
        let resp = &self.responsibilities[i];
        let mut best = 0;
        for k in 1..resp.len() {
            if resp[k] > resp[best] {
                best = k;
            }
        }
        best
    }
}

fn ln_normal_pdf(y: f64, mu: f64, sigma: f64) -> f64 {
    let z = (y - mu) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// k-means on scalars with k-means++ seeding; returns cluster centers.
fn kmeans_1d(values: &[f64], k: usize, rng: &mut SplitMix64) -> Vec<f64> {
    let n = values.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(values[rng.index(n)]);
    while centers.len() < k {
        let d2: Vec<f64> = values
            .iter()
            .map(|v| {
                centers
                    .iter()
                    .map(|c| (v - c) * (v - c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            // All points coincide with a center; duplicate it.
            centers.push(centers[0]);
            continue;
        }
        let mut target = rng.uniform() * total;
        let mut chosen = n - 1;
        for (i, d) in d2.iter().enumerate() {
            target -= d;
            if target <= 0.0 {
                chosen = i;
                break;
            }
        }
        centers.push(values[chosen]);
    }
    let mut assign = vec![0usize; n];
    for _ in 0..100 {
        let mut moved = false;
        for (i, v) in values.iter().enumerate() {
            let mut best = 0;
            for c in 1..k {
                if (v - centers[c]).abs() < (v - centers[best]).abs() {
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                moved = true;
            }
        }
        for c in 0..k {
            let members: Vec<f64> = values
                .iter()
                .zip(&assign)
                .filter(|(_, a)| **a == c)
                .map(|(v, _)| *v)
                .collect();
            if !members.is_empty() {
                centers[c] = members.iter().sum::<f64>() / members.len() as f64;
            }
        }
        if !moved {
            break;
        }
    }
    centers.sort_by(|x, y| x.partial_cmp(y).unwrap());
    centers
}

fn em_fit(log_times: &[f64], k: usize, rng: &mut SplitMix64) -> MixtureModel {
    let n = log_times.len();
    let spread = {
        let mean = log_times.iter().sum::<f64>() / n as f64;
        (log_times.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n as f64).sqrt()
    };

    let centers = kmeans_1d(log_times, k, rng);
    let mut comps: Vec<MixtureComponent> = centers
        .iter()
        .map(|&mu| MixtureComponent {
            weight: 1.0 / k as f64,
            mu,
            sigma: (spread / k as f64).max(SIGMA_FLOOR),
        })
        .collect();

    let mut resp = vec![vec![0.0; k]; n];
    let mut ll_trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;

    for _iter in 0..200 {
        // E step.
        let mut ll = 0.0;
        for (i, &y) in log_times.iter().enumerate() {
            let lps: Vec<f64> = comps
                .iter()
                .map(|c| c.weight.ln() + ln_normal_pdf(y, c.mu, c.sigma))
                .collect();
            let lse = log_sum_exp(&lps);
            ll += lse;
            for (r, lp) in resp[i].iter_mut().zip(&lps) {
                *r = (lp - lse).exp();
            }
        }
        debug_assert!(
            ll >= prev_ll - 1e-7 * (1.0 + prev_ll.abs()),
            "EM log-likelihood decreased: {prev_ll} -> {ll}"
        );
        ll_trace.push(ll);
        let converged = (ll - prev_ll).abs() < 1e-8 * (1.0 + ll.abs());
        prev_ll = ll;

        // M step.
        for (c, comp) in comps.iter_mut().enumerate() {
            let weight_sum: f64 = resp.iter().map(|r| r[c]).sum();
            if weight_sum <= 1e-300 {
                comp.weight = 1e-12;
                continue;
            }
            let mu = resp
                .iter()
                .zip(log_times)
                .map(|(r, y)| r[c] * y)
                .sum::<f64>()
                / weight_sum;
            let var = resp
                .iter()
                .zip(log_times)
                .map(|(r, y)| r[c] * (y - mu) * (y - mu))
                .sum::<f64>()
                / weight_sum;
            comp.weight = weight_sum / n as f64;
            comp.mu = mu;
            comp.sigma = var.sqrt().max(SIGMA_FLOOR);
        }
        let total_w: f64 = comps.iter().map(|c| c.weight).sum();
        for comp in &mut comps {
            comp.weight /= total_w;
        }

        if converged {
            break;
        }
    }

    let params = (3 * k - 1) as f64;
    let bic = -2.0 * prev_ll + params * (n as f64).ln();
    MixtureModel {
        components: comps,
        responsibilities: resp,
        log_likelihood: prev_ll,
        bic,
        ll_trace,
    }
}

/// Fit a log-normal mixture to positive travel times; the component count in
/// `1..=max_components` is chosen by BIC. Deterministic given `seed`.
pub fn fit_travel_time_mixture(
    travel_times: &[f64],
    max_components: usize,
    seed: u64,
) -> Result<MixtureModel> {
    if travel_times.len() < 30 {
        return Err(Error::TooFewSamples {
            context: "travel-time mixture fit (extend the study period)",
            need: 30,
            got: travel_times.len(),
        });
    }
    if let Some(bad) = travel_times.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::invalid(format!(
            "travel times must be positive, got {bad}"
        )));
    }
    let max_components = max_components.max(1);
    let log_times: Vec<f64> = travel_times.iter().map(|t| t.ln()).collect();

    let lo = log_times.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = log_times.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        // Degenerate sample: a single component at the sigma floor.
        let n = log_times.len();
        return Ok(MixtureModel {
            components: vec![MixtureComponent {
                weight: 1.0,
                mu: log_times[0],
                sigma: SIGMA_FLOOR,
            }],
            responsibilities: vec![vec![1.0]; n],
            log_likelihood: f64::NAN,
            bic: f64::NAN,
            ll_trace: Vec::new(),
        });
    }

    let mut best: Option<MixtureModel> = None;
    for k in 1..=max_components {
        let mut rng = SplitMix64::new(crate::rng::derive_seed(seed, &format!("em/k={k}")));
        let model = em_fit(&log_times, k, &mut rng);
        if best.as_ref().is_none_or(|b| model.bic < b.bic) {
            best = Some(model);
        }
    }
    Ok(best.expect("at least one component count is fitted"))
}

/// Select the running-time component: drop noise components, take the one with
/// the smallest mean, and truncate it to the range of its assigned samples.
pub fn select_running_component(
    model: &MixtureModel,
    travel_times: &[f64],
) -> Result<RunningTimeDist> {
    if model.components.is_empty() || travel_times.is_empty() {
        return Err(Error::invalid("empty mixture model or sample set"));
    }
    if model.responsibilities.len() != travel_times.len() {
        return Err(Error::invalid(
            "mixture model was not fitted on the given travel times",
        ));
    }

    let informative: Vec<usize> = (0..model.components.len())
        .filter(|&k| {
            let c = &model.components[k];
            c.weight >= NOISE_WEIGHT_FLOOR && c.sigma <= NOISE_SIGMA_CEIL
        })
        .collect();
    let candidates = if informative.is_empty() {
        log::warn!("all mixture components classified as noise; keeping all");
        (0..model.components.len()).collect()
    } else {
        informative
    };

    let chosen = *candidates
        .iter()
        .min_by(|&&x, &&y| {
            model.components[x]
                .mean()
                .partial_cmp(&model.components[y].mean())
                .unwrap()
        })
        .expect("candidates nonempty");

    let assigned: Vec<f64> = travel_times
        .iter()
        .enumerate()
        .filter(|(i, _)| model.assignment(*i) == chosen)
        .map(|(_, t)| *t)
        .collect();
    if assigned.is_empty() {
        return Err(Error::invalid(
            "no samples assigned to the selected running-time component",
        ));
    }
    let a = assigned.iter().cloned().fold(f64::INFINITY, f64::min);
    let b = assigned.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let comp = &model.components[chosen];
    if a == b {
        log::warn!("degenerate truncation interval [{a}, {b}]");
    }
    RunningTimeDist::new(comp.mu, comp.sigma, a, b)
}
