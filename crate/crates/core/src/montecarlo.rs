//! Simulation of liquid wealth and the illiquid asset up to the random
//! liquidation time, and estimation of the expected discounted utility of
//! consumption under a given policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check, Result};
use crate::model::{MarketParams, SurvivalModel};
use crate::reduction::{invariant_strategy_h4, z_h4};
use crate::solver::ValueSurface;
use crate::symmetry::Ctx;
use crate::utility::UtilitySpec;

/// A feedback rule `(l, h, t) → (π, c)`.
pub trait Policy: Sync {
    fn name(&self) -> String;
    fn control(&self, l: f64, h: f64, t: f64) -> (f64, f64);
}

/// Fixed `π` and `c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantPolicy {
    pub pi: f64,
    pub c: f64,
}

impl Policy for ConstantPolicy {
    fn name(&self) -> String {
        format!("constant(pi={}, c={})", self.pi, self.c)
    }

    fn control(&self, _: f64, _: f64, _: f64) -> (f64, f64) {
        (self.pi, self.c)
    }
}

/// Fixed stock holding and consumption `c = q·max(l, ε)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FractionPolicy {
    pub label: &'static str,
    pub pi: f64,
    pub q: f64,
    pub eps: f64,
}

impl FractionPolicy {
    /// No stock, consumption proportional to wealth.
    pub fn zero_investment(q: f64) -> Self {
        FractionPolicy { label: "zero-investment", pi: 0.0, q, eps: 1e-3 }
    }

    /// Merton holding `(α−r)/(σ²ar)` of the liquid-only exponential problem.
    pub fn merton(p: &MarketParams, q: f64) -> Self {
        FractionPolicy { label: "merton", pi: p.excess() / (p.sigma * p.sigma * p.ar()), q, eps: 1e-3 }
    }
}

impl Policy for FractionPolicy {
    fn name(&self) -> String {
        format!("{}(pi={:.4}, q={})", self.label, self.pi, self.q)
    }

    fn control(&self, l: f64, _: f64, _: f64) -> (f64, f64) {
        (self.pi, self.q * l.max(self.eps))
    }
}

/// The reconstructed solver policy. Outside the solved grid the separable
/// closure used for the boundary data supplies the strategy, with `h`
/// clamped to the profile's range.
#[derive(Clone, Debug)]
pub struct SolverPolicy<'a> {
    pub surface: &'a ValueSurface,
    ctx: Ctx,
}

impl<'a> SolverPolicy<'a> {
    pub fn new(surface: &'a ValueSurface) -> Self {
        SolverPolicy { surface, ctx: Ctx::new(surface.params, surface.survival) }
    }

    /// Strategy and whether the separable closure was used.
    pub fn control_with_source(&self, l: f64, h: f64, t: f64) -> ((f64, f64), bool) {
        let s = self.surface;
        let p = &s.params;
        let z = z_h4(&self.ctx, s.omega, l, t);
        if let Ok(jet) = s.jet(z, h) {
            if let Ok(st) = invariant_strategy_h4(p, &s.survival, s.omega, &jet, t) {
                return ((st.pi, st.c), false);
            }
        }
        let pr = &s.profile;
        let pi = (p.excess() + p.eta * p.rho * p.sigma * h * pr.dphi_at(h)) / (p.sigma * p.sigma * p.ar());
        let c = p.r * z + (p.a.ln() - pr.phi_at(h) + s.survival.ln_survival(t)) / p.a + p.r * t / (p.a * s.omega);
        ((pi, c), true)
    }
}

impl Policy for SolverPolicy<'_> {
    fn name(&self) -> String {
        format!("solver(omega={})", self.surface.omega)
    }

    fn control(&self, l: f64, h: f64, t: f64) -> (f64, f64) {
        self.control_with_source(l, h, t).0
    }
}

/// How the liquidation time enters the estimator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Integrates `Φ̄(t)·U(c_t)` to the horizon with exact survival weights.
    #[default]
    SurvivalWeighted,
    /// Draws `T` per path and integrates `U(c_t)` up to it.
    SampleT,
}

/// Simulation controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McOptions {
    pub n_paths: usize,
    pub dt: f64,
    /// Horizon; `None` uses the time where `Φ̄` falls below `1e−6`.
    pub t_max: Option<f64>,
    pub seed: u64,
    pub l0: f64,
    pub h0: f64,
    pub estimator: Estimator,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions { n_paths: 2000, dt: 0.05, t_max: None, seed: 1, l0: 1.0, h0: 1.0, estimator: Estimator::default() }
    }
}

impl McOptions {
    pub fn validate(&self) -> Result<()> {
        check(self.n_paths >= 2, "mc.n_paths", "needs at least 2 paths")?;
        check(self.dt > 0.0 && self.dt.is_finite(), "mc.dt", "must be positive")?;
        check(self.h0 > 0.0, "mc.h0", "must be positive")?;
        check(self.l0.is_finite(), "mc.l0", "must be finite")?;
        if let Some(t) = self.t_max {
            check(t > 0.0 && t.is_finite(), "mc.t_max", "must be positive")?;
        }
        Ok(())
    }

    fn horizon(&self, m: &SurvivalModel) -> f64 {
        self.t_max.unwrap_or_else(|| m.tail_time(1e-6))
    }
}

/// Objective estimate of one policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub policy: String,
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub t_max: f64,
    pub estimator: Estimator,
    /// Fraction of evaluated steps where `c < 0` was clamped to zero.
    pub clamp_fraction: f64,
    /// Fraction of paths on which liquid wealth went negative.
    pub negative_wealth_fraction: f64,
}

struct PathOutcome {
    value: f64,
    steps: u64,
    clamps: u64,
    negative: bool,
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Draws a liquidation time.
fn sample_t(m: &SurvivalModel, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    match *m {
        SurvivalModel::Exponential { kappa } => -u.ln() / kappa,
        SurvivalModel::Weibull { lambda, k } => lambda * (-u.ln()).powf(1.0 / k),
    }
}

fn simulate_path(
    p: &MarketParams,
    m: &SurvivalModel,
    u: &UtilitySpec,
    policy: &dyn Policy,
    opts: &McOptions,
    horizon: f64,
    path: usize,
) -> Result<PathOutcome> {
    let mut rng = path_rng(opts.seed, path);
    let end = match opts.estimator {
        Estimator::SurvivalWeighted => horizon,
        Estimator::SampleT => sample_t(m, &mut rng).min(horizon),
    };
    let steps = (horizon / opts.dt).ceil() as usize;
    let sq = opts.dt.sqrt();
    let rho_c = (1.0 - p.rho * p.rho).sqrt();
    let h_drift = (p.mu - p.delta - 0.5 * p.eta * p.eta) * opts.dt;
    let (mut l, mut h) = (opts.l0, opts.h0);
    let mut out = PathOutcome { value: 0.0, steps: 0, clamps: 0, negative: false };
    let mut f_prev = m.survival_integral(0.0);
    for n in 0..steps {
        let t0 = n as f64 * opts.dt;
        if t0 >= end {
            break;
        }
        let t1 = ((n + 1) as f64 * opts.dt).min(horizon);
        let (pi, c_raw) = policy.control(l, h, t0);
        let c = if c_raw < 0.0 {
            out.clamps += 1;
            0.0
        } else {
            c_raw
        };
        out.steps += 1;
        let weight = match opts.estimator {
            Estimator::SurvivalWeighted => {
                let f1 = m.survival_integral(t1);
                let w = f1 - f_prev;
                f_prev = f1;
                w
            }
            Estimator::SampleT => t1.min(end) - t0,
        };
        out.value += u.evaluate(c)? * weight;
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let dt = t1 - t0;
        let zh = p.rho * z1 + rho_c * z2;
        l += (p.r * l + p.delta * h + pi * p.excess() - c) * dt + pi * p.sigma * sq * z1;
        h *= (h_drift / opts.dt * dt + p.eta * dt.sqrt() * zh).exp();
        out.negative |= l < 0.0;
    }
    Ok(out)
}

fn run_paths(
    p: &MarketParams,
    m: &SurvivalModel,
    u: &UtilitySpec,
    policy: &dyn Policy,
    opts: &McOptions,
) -> Result<(Vec<PathOutcome>, f64)> {
    p.validate()?;
    m.validate()?;
    u.validate()?;
    opts.validate()?;
    let horizon = opts.horizon(m);
    let outs: Result<Vec<PathOutcome>> =
        (0..opts.n_paths).into_par_iter().map(|i| simulate_path(p, m, u, policy, opts, horizon, i)).collect();
    Ok((outs?, horizon))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn summarize(name: String, outs: &[PathOutcome], opts: &McOptions, horizon: f64) -> McReport {
    let values: Vec<f64> = outs.iter().map(|o| o.value).collect();
    let (estimate, std_error) = mean_se(&values);
    let steps: u64 = outs.iter().map(|o| o.steps).sum();
    let clamps: u64 = outs.iter().map(|o| o.clamps).sum();
    let neg = outs.iter().filter(|o| o.negative).count();
    McReport {
        policy: name,
        estimate,
        std_error,
        n_paths: opts.n_paths,
        dt: opts.dt,
        t_max: horizon,
        estimator: opts.estimator,
        clamp_fraction: if steps == 0 { 0.0 } else { clamps as f64 / steps as f64 },
        negative_wealth_fraction: neg as f64 / outs.len() as f64,
    }
}

/// Monte Carlo estimate of `E ∫₀^T U(c_t) dt` under `policy`.
///
/// Paths are seeded by `(seed, path index)` and summed in index order, so the
/// result does not depend on the number of threads.
pub fn simulate_objective(
    p: &MarketParams,
    m: &SurvivalModel,
    u: &UtilitySpec,
    policy: &dyn Policy,
    opts: &McOptions,
) -> Result<McReport> {
    let (outs, horizon) = run_paths(p, m, u, policy, opts)?;
    Ok(summarize(policy.name(), &outs, opts, horizon))
}

/// Difference between two policies on common random numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub first: String,
    pub second: String,
    /// Mean of `first − second` per path.
    pub difference: f64,
    pub std_error: f64,
}

/// Estimates of several policies and all paired differences against the first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub reports: Vec<McReport>,
    pub paired: Vec<PairedDifference>,
    /// Policies whose consumption was clamped at every step.
    pub invalid: Vec<String>,
}

impl Comparison {
    /// Whether the first policy is not worse than each other one by more than
    /// `k` paired standard errors.
    pub fn first_not_worse(&self, k: f64) -> bool {
        self.paired.iter().all(|d| d.difference >= -k * d.std_error)
    }
}

/// Runs every policy on the same seeds and compares each to `policies[0]`.
pub fn compare_policies(
    p: &MarketParams,
    m: &SurvivalModel,
    u: &UtilitySpec,
    policies: &[&dyn Policy],
    opts: &McOptions,
) -> Result<Comparison> {
    let mut runs = Vec::with_capacity(policies.len());
    for pol in policies {
        let (outs, horizon) = run_paths(p, m, u, *pol, opts)?;
        runs.push((summarize(pol.name(), &outs, opts, horizon), outs));
    }
    let mut paired = Vec::new();
    if let Some((base, base_outs)) = runs.first() {
        for (rep, outs) in runs.iter().skip(1) {
            let d: Vec<f64> = base_outs.iter().zip(outs).map(|(a, b)| a.value - b.value).collect();
            let (difference, std_error) = mean_se(&d);
            paired.push(PairedDifference { first: base.policy.clone(), second: rep.policy.clone(), difference, std_error });
        }
    }
    let invalid = runs.iter().filter(|(r, _)| r.clamp_fraction >= 1.0).map(|(r, _)| r.policy.clone()).collect();
    Ok(Comparison { reports: runs.into_iter().map(|r| r.0).collect(), paired, invalid })
}

/// `E[H_t]` from simulated paths against `H₀e^{(μ−δ)t}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub t: f64,
    pub mean: f64,
    pub std_error: f64,
    pub exact: f64,
}

/// Simulates `H` with the step used by [`simulate_objective`].
pub fn illiquid_moment(p: &MarketParams, h0: f64, t: f64, n_paths: usize, dt: f64, seed: u64) -> Result<MomentCheck> {
    p.validate()?;
    check(n_paths >= 2 && dt > 0.0 && t > 0.0, "mc", "needs n_paths >= 2, dt > 0, t > 0")?;
    let steps = (t / dt).round().max(1.0) as usize;
    let dt = t / steps as f64;
    let rho_c = (1.0 - p.rho * p.rho).sqrt();
    let finals: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut h = h0;
            for _ in 0..steps {
                let z1: f64 = rng.sample(StandardNormal);
                let z2: f64 = rng.sample(StandardNormal);
                let zh = p.rho * z1 + rho_c * z2;
                h *= ((p.mu - p.delta - 0.5 * p.eta * p.eta) * dt + p.eta * dt.sqrt() * zh).exp();
            }
            h
        })
        .collect();
    let (mean, std_error) = mean_se(&finals);
    Ok(MomentCheck { t, mean, std_error, exact: h0 * ((p.mu - p.delta) * t).exp() })
}

/// Sample correlation between the log-returns of the stock and of `H` over
/// one step of length `dt`, across `n` independent draws.
pub fn increment_correlation(p: &MarketParams, n: usize, dt: f64, seed: u64) -> f64 {
    let rho_c = (1.0 - p.rho * p.rho).sqrt();
    let pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let s = (p.alpha - 0.5 * p.sigma * p.sigma) * dt + p.sigma * dt.sqrt() * z1;
            let h = (p.mu - p.delta - 0.5 * p.eta * p.eta) * dt + p.eta * dt.sqrt() * (p.rho * z1 + rho_c * z2);
            (s, h)
        })
        .collect();
    let nf = n as f64;
    let (ms, mh) = (pairs.iter().map(|x| x.0).sum::<f64>() / nf, pairs.iter().map(|x| x.1).sum::<f64>() / nf);
    let cov: f64 = pairs.iter().map(|(s, h)| (s - ms) * (h - mh)).sum();
    let vs: f64 = pairs.iter().map(|(s, _)| (s - ms).powi(2)).sum();
    let vh: f64 = pairs.iter().map(|(_, h)| (h - mh).powi(2)).sum();
    cov / (vs * vh).sqrt()
}

/// `U(c̄)·(F(t_max) − F(0))`, the objective of a constant consumption rate.
pub fn constant_consumption_objective(m: &SurvivalModel, u: &UtilitySpec, c: f64, t_max: f64) -> Result<f64> {
    Ok(u.evaluate(c)? * (m.survival_integral(t_max) - m.survival_integral(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (MarketParams, SurvivalModel, UtilitySpec) {
        let p = MarketParams { delta: 0.0, ..MarketParams::default() };
        (p, SurvivalModel::Exponential { kappa: 0.2 }, UtilitySpec::EXPn { a: 1.0 })
    }

    #[test]
    fn weighted_constant_policy_is_exact() {
        let (p, m, u) = setup();
        let pol = ConstantPolicy { pi: 0.0, c: 0.7 };
        let opts = McOptions { n_paths: 8, dt: 0.01, ..McOptions::default() };
        let r = simulate_objective(&p, &m, &u, &pol, &opts).unwrap();
        let exact = -(-0.7f64).exp() * (1.0 - (-0.2 * r.t_max).exp()) / 0.2;
        assert!((r.estimate - exact).abs() <= 3.0 * r.std_error + 1e-12 * exact.abs());
    }

    #[test]
    fn sampled_t_matches_closed_form() {
        let (p, m, u) = setup();
        let pol = ConstantPolicy { pi: 0.0, c: 0.7 };
        let opts = McOptions { n_paths: 4000, dt: 0.01, estimator: Estimator::SampleT, ..McOptions::default() };
        let r = simulate_objective(&p, &m, &u, &pol, &opts).unwrap();
        let exact = constant_consumption_objective(&m, &u, 0.7, r.t_max).unwrap();
        assert!((r.estimate - exact).abs() <= 3.0 * r.std_error, "{} {} {}", r.estimate, exact, r.std_error);
    }

    #[test]
    fn reruns_are_identical_across_thread_counts() {
        let (p, m, u) = setup();
        let pol = FractionPolicy::merton(&p, 0.1);
        let opts = McOptions { n_paths: 64, dt: 0.1, ..McOptions::default() };
        let run = |k: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .unwrap()
                .install(|| simulate_objective(&p, &m, &u, &pol, &opts).unwrap())
        };
        let (a, b) = (run(1), run(3));
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn identical_policies_have_zero_paired_difference() {
        let (p, m, u) = setup();
        let a = FractionPolicy::zero_investment(0.1);
        let opts = McOptions { n_paths: 32, dt: 0.1, ..McOptions::default() };
        let c = compare_policies(&p, &m, &u, &[&a, &a], &opts).unwrap();
        assert_eq!(c.paired[0].difference, 0.0);
        assert_eq!(c.paired[0].std_error, 0.0);
    }

    #[test]
    fn always_clamped_policy_is_flagged() {
        let (p, m, u) = setup();
        let a = FractionPolicy::zero_investment(0.1);
        let b = ConstantPolicy { pi: 0.0, c: -1.0 };
        let opts = McOptions { n_paths: 8, dt: 0.1, ..McOptions::default() };
        let c = compare_policies(&p, &m, &u, &[&a, &b], &opts).unwrap();
        assert_eq!(c.invalid, vec![b.name()]);
    }

    #[test]
    fn independent_increments_when_uncorrelated() {
        let p = MarketParams { rho: 0.0, ..MarketParams::default() };
        let n = 20000;
        assert!(increment_correlation(&p, n, 0.01, 5).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn illiquid_mean_grows_at_net_drift() {
        let p = MarketParams::default();
        for t in [1.0, 5.0] {
            let mc = illiquid_moment(&p, 1.0, t, 20000, 0.01, 9).unwrap();
            assert!((mc.mean - mc.exact).abs() <= 3.0 * mc.std_error, "{mc:?}");
        }
    }
}
