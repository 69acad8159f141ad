//! Monte Carlo oracles for a covariate table and its DGPs.
//!
//! Every check draws from `Purpose::Verification` substreams in fixed-size
//! chunks, so results do not depend on the number of worker threads.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::covariates::CovariateTable;
use crate::dgp::{ErrorFamily, VarianceConvention, GROUP_OWN_WEIGHT, GROUP_SHARED_WEIGHT};
use crate::engine::{self, ChallengeLayout, DgpCode, DgpContext, SettingBits, ZPolicy};
use crate::error::{Error, Result};
use crate::nonadditive::{gaussian_cdf_mixture_mean, TransformParams, OUTCOME_INF, OUTCOME_SUP};
use crate::normal;
use crate::rng::{Purpose, Stream, StreamKey};

pub const MIN_MC_DRAWS: u64 = 100_000;
pub const DEFAULT_CDF_DRAWS: u64 = 1_000_000;
pub const DEFAULT_CATE_DRAWS: u64 = 10_000_000;

pub const CDF_GRID_M: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];
pub const CDF_GRID_S: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 5.0];

const CHUNK: u64 = 1 << 16;
const SE_MULTIPLE: f64 = 3.0;
/// Absolute slack for cells whose Monte Carlo standard error is zero.
const ZERO_SE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOptions {
    pub seed: u64,
    pub cdf_draws: u64,
    pub cate_draws: u64,
    pub cate_units: usize,
    pub cate_bits: SettingBits,
    pub noise_replicates: u32,
    pub group_replicates: u32,
    /// Minimum squared residuals in the heteroskedastic regression.
    pub hetero_draws: u64,
    pub range_replicates: u32,
    pub convention: VarianceConvention,
    /// Multiplies `b` in the closed-form side of the CATE oracle only.
    /// Anything but 1.0 is a deliberate corruption that the oracle must catch.
    pub b_scale: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            cdf_draws: DEFAULT_CDF_DRAWS,
            cate_draws: DEFAULT_CATE_DRAWS,
            cate_units: 20,
            cate_bits: "111".parse().expect("valid bits"),
            noise_replicates: 500,
            group_replicates: 10_000,
            hetero_draws: 1_000_000,
            range_replicates: 5,
            convention: VarianceConvention::default(),
            b_scale: 1.0,
        }
    }
}

impl VerifyOptions {
    pub fn validate(&self) -> Result<()> {
        if self.cdf_draws < MIN_MC_DRAWS || self.cate_draws < MIN_MC_DRAWS {
            return Err(Error::Config(format!(
                "Monte Carlo budget must be at least {MIN_MC_DRAWS} draws (got cdf {}, cate {})",
                self.cdf_draws, self.cate_draws
            )));
        }
        if self.cate_units == 0 {
            return Err(Error::Config("cate_units must be positive".into()));
        }
        if !(self.b_scale > 0.0 && self.b_scale.is_finite()) {
            return Err(Error::Config(format!("b_scale must be positive, got {}", self.b_scale)));
        }
        for (what, v) in [
            ("noise_replicates", self.noise_replicates),
            ("group_replicates", self.group_replicates),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{what} must be positive")));
            }
        }
        if self.hetero_draws == 0 {
            return Err(Error::Config("hetero_draws must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub observed: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub rule: String,
    pub detail: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<26} {:>6} {:>16} {:>16} {:>12}  rule\n",
            "check", "result", "observed", "expected", "tolerance"
        );
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<26} {:>6} {:>16.8} {:>16.8} {:>12.6}  {}",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.observed,
                c.expected,
                c.tolerance,
                c.rule
            );
            for d in &c.detail {
                let _ = writeln!(out, "    {d}");
            }
        }
        out
    }
}

/// Mean and standard error of a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub draws: u64,
}

impl McEstimate {
    /// `|mean − target| < k·SE`, or within a rounding slack when SE is zero.
    pub fn agrees_with(&self, target: f64, k: f64) -> bool {
        let diff = (self.mean - target).abs();
        diff < k * self.se || (self.se == 0.0 && diff <= ZERO_SE_SLACK)
    }
}

#[derive(Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if self.n == 0.0 {
            return o;
        }
        if o.n == 0.0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + d * o.n / n,
            m2: self.m2 + o.m2 + d * d * self.n * o.n / n,
        }
    }
}

/// Chunked, thread-count-independent Monte Carlo mean of `f(W)`, W ~ N(0, 1).
pub fn mc_mean<F>(seed: u64, label: &str, draws: u64, f: F) -> McEstimate
where
    F: Fn(f64) -> f64 + Sync,
{
    let chunks = draws.div_ceil(CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut stream: Stream = StreamKey {
                master_seed: seed,
                family: label,
                bits: "",
                replicate_id: c as u32,
                purpose: Purpose::Verification,
            }
            .stream();
            let len = CHUNK.min(draws - c * CHUNK);
            let mut m = Moments::default();
            for _ in 0..len {
                let w: f64 = stream.sample(StandardNormal);
                m.push(f(w));
            }
            m
        })
        .collect();
    let m = parts.into_iter().fold(Moments::default(), Moments::merge);
    let var = if m.n > 1.0 { m.m2 / (m.n - 1.0) } else { 0.0 };
    McEstimate {
        mean: m.mean,
        se: (var / m.n).sqrt(),
        draws,
    }
}

/// E Φ(m + sW) = Φ(m/√(1+s²)) on the standard 5×5 grid; passes when at
/// least 24 of 25 cells agree within three standard errors.
pub fn check_cdf_identity(seed: u64, draws: u64) -> CheckResult {
    let mut passing = 0usize;
    let mut detail = Vec::new();
    for &m in &CDF_GRID_M {
        for &s in &CDF_GRID_S {
            let est = mc_mean(seed, &format!("cdf-identity/{m}/{s}"), draws, |w| normal::cdf(m + s * w));
            let exact = gaussian_cdf_mixture_mean(m, s);
            let ok = est.agrees_with(exact, SE_MULTIPLE);
            passing += usize::from(ok);
            if !ok {
                detail.push(format!(
                    "cell m={m} s={s}: mc {:.8} se {:.2e} exact {exact:.8}",
                    est.mean, est.se
                ));
            }
        }
    }
    let cells = CDF_GRID_M.len() * CDF_GRID_S.len();
    CheckResult {
        name: "cdf_identity".into(),
        passed: passing + 1 >= cells,
        observed: passing as f64,
        expected: cells as f64,
        tolerance: 1.0,
        rule: format!("cells within {SE_MULTIPLE} SE at {draws} draws; at most 1 miss"),
        detail,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnitCateCheck {
    pub unit: usize,
    pub closed_form: f64,
    pub monte_carlo: McEstimate,
    pub passed: bool,
}

/// Closed-form CATE against a paired Monte Carlo contrast of the squashed
/// potential outcomes. The simulation always uses the calibrated transform;
/// `b_scale` perturbs only the closed form.
pub fn nonadditive_cate_oracle(
    context: &DgpContext,
    units: &[usize],
    seed: u64,
    draws: u64,
    b_scale: f64,
) -> Result<Vec<UnitCateCheck>> {
    let params = context
        .transform
        .as_ref()
        .ok_or_else(|| Error::Config(format!("{} is not a non-additive DGP", context.code)))?;
    let s = &context.surfaces;
    let closed = TransformParams::from_location_scale(&s.mu, &s.tau, params.a, params.b * b_scale, params.sigma_y);
    units
        .iter()
        .map(|&i| {
            let (cate, _) = closed.cate_nonadditive(i)?;
            let (lat1, lat0, sy) = (s.mu[i] + s.tau[i], s.mu[i], s.sigma_y);
            let est = mc_mean(seed, &format!("cate/{}/{i}", context.code), draws, |w| {
                params.squash_outcome(lat1 + sy * w) - params.squash_outcome(lat0 + sy * w)
            });
            Ok(UnitCateCheck {
                unit: i,
                closed_form: cate,
                monte_carlo: est,
                passed: est.agrees_with(cate, SE_MULTIPLE),
            })
        })
        .collect()
}

/// Sorted sample of `k` distinct unit indices.
pub fn sample_units(n: usize, k: usize, seed: u64, label: &str) -> Vec<usize> {
    let mut stream = StreamKey {
        master_seed: seed,
        family: label,
        bits: "",
        replicate_id: 0,
        purpose: Purpose::Verification,
    }
    .stream();
    let mut v = index::sample(&mut stream, n, k.min(n)).into_vec();
    v.sort_unstable();
    v
}

pub fn check_nonadditive_cate(table: &CovariateTable, opts: &VerifyOptions) -> Result<CheckResult> {
    let code = DgpCode {
        family: ErrorFamily::NonAdditive,
        bits: opts.cate_bits,
    };
    let ctx = DgpContext::new(table, code, opts.convention)?;
    let units = sample_units(ctx.n(), opts.cate_units, opts.seed, "cate-units");
    let rows = nonadditive_cate_oracle(&ctx, &units, opts.seed, opts.cate_draws, opts.b_scale)?;
    let passing = rows.iter().filter(|r| r.passed).count();
    let worst = rows
        .iter()
        .map(|r| (r.monte_carlo.mean - r.closed_form).abs() / r.monte_carlo.se.max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    let detail = rows
        .iter()
        .filter(|r| !r.passed)
        .map(|r| {
            format!(
                "unit {}: closed {:.8} mc {:.8} se {:.2e}",
                r.unit, r.closed_form, r.monte_carlo.mean, r.monte_carlo.se
            )
        })
        .collect();
    Ok(CheckResult {
        name: "nonadditive_cate".into(),
        passed: passing == rows.len(),
        observed: passing as f64,
        expected: rows.len() as f64,
        tolerance: 0.0,
        rule: format!(
            "{code}: every sampled unit within {SE_MULTIPLE} SE at {} draws (worst |z| = {worst:.2})",
            opts.cate_draws
        ),
        detail,
    })
}

fn residual_replicates(
    ctx: &DgpContext,
    seed: u64,
    replicates: u32,
) -> Result<Vec<Vec<f64>>> {
    (1..=replicates)
        .into_par_iter()
        .map(|r| {
            let data = ctx.generate(seed, r, ZPolicy::FixedPerDgp)?;
            let s = &ctx.surfaces;
            Ok((0..ctx.n())
                .map(|i| data.y[i] - (s.mu[i] + s.tau[i] * f64::from(data.z[i])))
                .collect())
        })
        .collect()
}

fn additive_context(table: &CovariateTable, family: ErrorFamily, opts: &VerifyOptions) -> Result<DgpContext> {
    DgpContext::new(
        table,
        DgpCode {
            family,
            bits: "010".parse().expect("valid bits"),
        },
        opts.convention,
    )
}

/// Pooled mean square of y − (μ + τz) against σ_y² for the iid family.
pub fn check_noise_calibration(table: &CovariateTable, opts: &VerifyOptions) -> Result<CheckResult> {
    let ctx = additive_context(table, ErrorFamily::Iid, opts)?;
    let res = residual_replicates(&ctx, opts.seed, opts.noise_replicates)?;
    let count = (res.len() * ctx.n()) as f64;
    let pooled = res.iter().map(|r| r.iter().map(|e| e * e).sum::<f64>()).sum::<f64>() / count;
    let target = ctx.surfaces.sigma_y.powi(2);
    let rel = (pooled / target - 1.0).abs();
    Ok(CheckResult {
        name: "iid_noise_calibration".into(),
        passed: rel <= 0.02,
        observed: pooled,
        expected: target,
        tolerance: 0.02,
        rule: format!("relative error {rel:.5} over {} replicates of {}", opts.noise_replicates, ctx.code),
        detail: vec![],
    })
}

/// Pooled within-group moments of standardized errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroupMoments {
    pub variance: f64,
    pub within_group_correlation: f64,
}

/// Pair-product estimator: Σ_g (S_g² − Q_g) / Σ_g n_g(n_g − 1) over
/// replicates, divided by the pooled variance.
pub fn group_moments(residuals: &[Vec<f64>], groups: &[u8], sigma_y: f64) -> GroupMoments {
    let mut cross = 0.0;
    let mut pairs = 0.0;
    let mut squares = 0.0;
    let mut count = 0.0;
    for rep in residuals {
        let mut sum = [0.0f64; 17];
        let mut sq = [0.0f64; 17];
        let mut n = [0.0f64; 17];
        for (e, &g) in rep.iter().zip(groups) {
            let e = e / sigma_y;
            sum[g as usize] += e;
            sq[g as usize] += e * e;
            n[g as usize] += 1.0;
        }
        for g in 1..17 {
            cross += sum[g] * sum[g] - sq[g];
            pairs += n[g] * (n[g] - 1.0);
            squares += sq[g];
            count += n[g];
        }
    }
    let variance = squares / count;
    GroupMoments {
        variance,
        within_group_correlation: cross / pairs / variance,
    }
}

pub fn group_correlation_target() -> (f64, f64) {
    let shared = GROUP_SHARED_WEIGHT * GROUP_SHARED_WEIGHT;
    let var = GROUP_OWN_WEIGHT * GROUP_OWN_WEIGHT + shared;
    (shared / var, var)
}

pub fn check_group_correlation(table: &CovariateTable, opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let ctx = additive_context(table, ErrorFamily::GroupCorrelated, opts)?;
    let res = residual_replicates(&ctx, opts.seed, opts.group_replicates)?;
    let moments = group_moments(&res, &table.x21_levels(), ctx.surfaces.sigma_y);
    let (corr, var) = group_correlation_target();
    let rel = (moments.variance / var - 1.0).abs();
    Ok(vec![
        CheckResult {
            name: "group_correlation".into(),
            passed: (moments.within_group_correlation - corr).abs() <= 0.004,
            observed: moments.within_group_correlation,
            expected: corr,
            tolerance: 0.004,
            rule: format!("absolute error over {} replicates of {}", opts.group_replicates, ctx.code),
            detail: vec![],
        },
        CheckResult {
            name: "group_error_variance".into(),
            passed: rel <= 0.02,
            observed: moments.variance,
            expected: var,
            tolerance: 0.02,
            rule: format!("relative error {rel:.5} in units of sigma_y^2"),
            detail: vec![],
        },
    ])
}

/// OLS of y on x with intercept; returns (intercept, slope).
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

pub fn check_heteroskedastic(table: &CovariateTable, opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    let ctx = additive_context(table, ErrorFamily::Heteroskedastic, opts)?;
    let replicates = opts.hetero_draws.div_ceil(ctx.n() as u64) as u32;
    let res = residual_replicates(&ctx, opts.seed, replicates)?;
    let s2: Vec<f64> = ctx.surfaces.sigma_x.iter().map(|s| s * s).collect();
    let x: Vec<f64> = res.iter().flat_map(|_| s2.iter().copied()).collect();
    let y: Vec<f64> = res.iter().flat_map(|r| r.iter().map(|e| e * e)).collect();
    let (_, slope) = ols(&x, &y);
    let target = ctx.surfaces.sigma_y.powi(2);
    let rel = (slope / target - 1.0).abs();

    let mut mismatched = 0usize;
    for bits in SettingBits::ALL {
        let truth = |family| -> Result<Vec<f64>> {
            Ok(DgpContext::new(table, DgpCode { family, bits }, opts.convention)?.truth.alpha)
        };
        let (het, iid) = (truth(ErrorFamily::Heteroskedastic)?, truth(ErrorFamily::Iid)?);
        if het.iter().zip(&iid).any(|(a, b)| a.to_bits() != b.to_bits()) || het.len() != iid.len() {
            mismatched += 1;
        }
    }
    Ok(vec![
        CheckResult {
            name: "hetero_slope".into(),
            passed: rel <= 0.05,
            observed: slope,
            expected: target,
            tolerance: 0.05,
            rule: format!("relative error {rel:.5} over {} draws", y.len()),
            detail: vec![],
        },
        CheckResult {
            name: "hetero_truth_is_additive".into(),
            passed: mismatched == 0,
            observed: mismatched as f64,
            expected: 0.0,
            tolerance: 0.0,
            rule: "alpha bit-identical to iid for all 8 settings".into(),
            detail: vec![],
        },
    ])
}

fn out_of_range(y: &[f64]) -> usize {
    y.iter().filter(|v| !(**v > OUTCOME_INF && **v < OUTCOME_SUP)).count()
}

/// Non-additive outcomes generated in memory for all eight settings.
pub fn check_nonadditive_range(table: &CovariateTable, opts: &VerifyOptions) -> Result<CheckResult> {
    let mut bad = 0usize;
    let mut total = 0usize;
    for bits in SettingBits::ALL {
        let ctx = DgpContext::new(table, DgpCode { family: ErrorFamily::NonAdditive, bits }, opts.convention)?;
        for r in 1..=opts.range_replicates {
            let y = ctx.generate(opts.seed, r, ZPolicy::FixedPerDgp)?.y;
            bad += out_of_range(&y);
            total += y.len();
        }
    }
    Ok(range_result("nonadditive_range", bad, total))
}

fn range_result(name: &str, bad: usize, total: usize) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed: bad == 0,
        observed: bad as f64,
        expected: 0.0,
        tolerance: 0.0,
        rule: format!("outcomes outside ({OUTCOME_INF}, {OUTCOME_SUP}) among {total}"),
        detail: vec![],
    }
}

/// Range check over the non-additive replicate files of a built tree.
pub fn check_tree_range(root: &Path, layout: &ChallengeLayout) -> Result<CheckResult> {
    let mut bad = 0usize;
    let mut total = 0usize;
    for code in layout.dgps().into_iter().filter(|c| c.family == ErrorFamily::NonAdditive) {
        for r in layout.replicate_ids() {
            let (_, y) = engine::read_replicate(&root.join(code.folder()).join(format!("{r}.csv")))?;
            bad += out_of_range(&y);
            total += y.len();
        }
    }
    Ok(range_result("tree_nonadditive_range", bad, total))
}

/// Sample variance of π under strong selection exceeds that under weak
/// selection for every (ξ, η) pair.
pub fn check_selection_ordering(table: &CovariateTable, opts: &VerifyOptions) -> Result<CheckResult> {
    let mut worst = f64::INFINITY;
    for hi_effect in [false, true] {
        for hi_noise in [false, true] {
            let var = |strong| -> Result<f64> {
                let bits = SettingBits::from_levels(hi_effect, hi_noise, strong);
                let ctx = DgpContext::new(table, DgpCode { family: ErrorFamily::Iid, bits }, opts.convention)?;
                Ok(VarianceConvention::Sample.variance(&ctx.surfaces.pi))
            };
            worst = worst.min(var(true)? - var(false)?);
        }
    }
    Ok(CheckResult {
        name: "selection_ordering".into(),
        passed: worst > 0.0,
        observed: worst,
        expected: 0.0,
        tolerance: 0.0,
        rule: "min over settings of var(pi | strong) - var(pi | weak) must be > 0".into(),
        detail: vec![],
    })
}

/// Runs the full oracle suite against `table`.
pub fn run_verification(table: &CovariateTable, opts: &VerifyOptions) -> Result<VerificationReport> {
    opts.validate()?;
    let mut checks = vec![
        check_cdf_identity(opts.seed, opts.cdf_draws),
        check_nonadditive_cate(table, opts)?,
        check_noise_calibration(table, opts)?,
    ];
    checks.extend(check_group_correlation(table, opts)?);
    checks.extend(check_heteroskedastic(table, opts)?);
    checks.push(check_nonadditive_range(table, opts)?);
    checks.push(check_selection_ordering(table, opts)?);
    Ok(VerificationReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::TARGET_CORRELATIONS;
    use crate::synth::{synthesize_covariates, SyntheticMargins};

    fn table(n: usize) -> CovariateTable {
        synthesize_covariates(n, 5, &TARGET_CORRELATIONS, &SyntheticMargins::default()).unwrap()
    }

    #[test]
    fn moments_merge_matches_direct() {
        let xs: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 * 0.1).collect();
        let mut whole = Moments::default();
        xs.iter().for_each(|&x| whole.push(x));
        let mut a = Moments::default();
        let mut b = Moments::default();
        xs[..313].iter().for_each(|&x| a.push(x));
        xs[313..].iter().for_each(|&x| b.push(x));
        let m = a.merge(b);
        assert!((m.mean - whole.mean).abs() < 1e-12);
        assert!((m.m2 - whole.m2).abs() < 1e-9 * whole.m2);
    }

    #[test]
    fn mc_mean_of_constant_has_zero_se() {
        let e = mc_mean(1, "const", 200_000, |_| 0.25);
        assert_eq!(e.mean, 0.25);
        assert_eq!(e.se, 0.0);
        assert!(e.agrees_with(0.25, 3.0));
        assert!(!e.agrees_with(0.2500001, 3.0));
    }

    #[test]
    fn mc_mean_of_w_squared_is_one() {
        let e = mc_mean(2, "square", 400_000, |w| w * w);
        assert!(e.agrees_with(1.0, 4.0), "{e:?}");
        assert!((e.se - (2.0f64 / 400_000.0).sqrt()).abs() < 1e-4);
    }

    #[test]
    fn budget_below_minimum_is_config_error() {
        let opts = VerifyOptions {
            cate_draws: 1000,
            ..Default::default()
        };
        let err = run_verification(&table(50), &opts).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn group_moments_on_constructed_residuals() {
        // two groups, residual = shared shock only: correlation one
        let groups = [1u8, 1, 2, 2];
        let reps: Vec<Vec<f64>> = (0..50)
            .map(|r| {
                let a = (r as f64 * 0.37).sin();
                let b = (r as f64 * 0.91).cos();
                vec![a, a, b, b]
            })
            .collect();
        let m = group_moments(&reps, &groups, 1.0);
        assert!((m.within_group_correlation - 1.0).abs() < 1e-12);
        let (corr, var) = group_correlation_target();
        assert!((var - 0.82).abs() < 1e-15);
        assert!((corr - 0.01 / 0.82).abs() < 1e-15);
    }

    #[test]
    fn ols_recovers_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 0.5 * v).collect();
        let (a, b) = ols(&x, &y);
        assert!((a - 2.0).abs() < 1e-12 && (b - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sampled_units_are_distinct_and_sorted() {
        let u = sample_units(100, 20, 3, "x");
        assert_eq!(u.len(), 20);
        assert!(u.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(u, sample_units(100, 20, 3, "x"));
    }

    #[test]
    fn cate_oracle_detects_scaled_b() {
        let t = table(300);
        let code = DgpCode {
            family: ErrorFamily::NonAdditive,
            bits: "111".parse().unwrap(),
        };
        let ctx = DgpContext::new(&t, code, VarianceConvention::default()).unwrap();
        let units = sample_units(ctx.n(), 5, 9, "u");
        let good = nonadditive_cate_oracle(&ctx, &units, 9, 200_000, 1.0).unwrap();
        assert!(good.iter().all(|r| r.passed), "{good:?}");
        let bad = nonadditive_cate_oracle(&ctx, &units, 9, 200_000, 1.1).unwrap();
        assert!(bad.iter().any(|r| !r.passed));
    }

    #[test]
    fn cheap_suite_passes() {
        let opts = VerifyOptions {
            cdf_draws: MIN_MC_DRAWS,
            cate_draws: MIN_MC_DRAWS,
            cate_units: 4,
            noise_replicates: 100,
            group_replicates: 2_000,
            hetero_draws: 200_000,
            range_replicates: 2,
            ..Default::default()
        };
        let report = run_verification(&table(1000), &opts).unwrap();
        assert!(report.all_passed(), "{}", report.render_table());
        assert!(report.render_table().contains("cdf_identity"));
    }
}
