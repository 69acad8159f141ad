//! Response surfaces, propensity, noise calibration and additive-error
//! outcome generation.
//!
//! With `f(x) = x1 + x43 + 0.3(x10 − 1)` the propensity is the logistic
//! `(1 + exp(κ1 f + κ2))⁻¹`, so treatment probability *falls* as `f` grows.
//! The untreated mean `μ = −sin(Φ(π)) + x43` is a function of the propensity,
//! which is what makes the selection targeted.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariates::{CovariateTable, Unit, X21_LEVELS};
use crate::error::{Error, Result};
use crate::normal;

pub const XI_LOW: f64 = 1.0 / 3.0;
pub const XI_HIGH: f64 = 2.0;
pub const ETA_LOW: f64 = 0.25;
pub const ETA_HIGH: f64 = 1.25;
pub const KAPPA_WEAK: Kappa = Kappa(0.5, 0.0);
pub const KAPPA_STRONG: Kappa = Kappa(3.0, -1.0);

/// Distance kept between a propensity and {0, 1}.
pub const PROPENSITY_CLAMP: f64 = 1e-12;

/// Share of each unit's error that is private in the group-correlated family;
/// the remainder is the birthplace-level shock.
pub const GROUP_OWN_WEIGHT: f64 = 0.9;
pub const GROUP_SHARED_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorFamily {
    #[serde(rename = "group_corr")]
    GroupCorrelated,
    #[serde(rename = "heteroskedastic")]
    Heteroskedastic,
    #[serde(rename = "iid")]
    Iid,
    #[serde(rename = "non-additive")]
    NonAdditive,
}

impl ErrorFamily {
    /// All families in folder order.
    pub const ALL: [ErrorFamily; 4] = [
        ErrorFamily::GroupCorrelated,
        ErrorFamily::Heteroskedastic,
        ErrorFamily::Iid,
        ErrorFamily::NonAdditive,
    ];

    pub fn folder_name(self) -> &'static str {
        match self {
            ErrorFamily::GroupCorrelated => "group_corr",
            ErrorFamily::Heteroskedastic => "heteroskedastic",
            ErrorFamily::Iid => "iid",
            ErrorFamily::NonAdditive => "non-additive",
        }
    }

    pub fn is_additive(self) -> bool {
        self != ErrorFamily::NonAdditive
    }
}

impl fmt::Display for ErrorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.folder_name())
    }
}

impl FromStr for ErrorFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "group_corr" | "group_correlated" | "group" => Ok(ErrorFamily::GroupCorrelated),
            "heteroskedastic" | "hetero" => Ok(ErrorFamily::Heteroskedastic),
            "iid" => Ok(ErrorFamily::Iid),
            "non-additive" | "non_additive" | "nonadditive" => Ok(ErrorFamily::NonAdditive),
            other => Err(Error::Config(format!("unknown error family {other:?}"))),
        }
    }
}

/// Propensity coefficients (κ1, κ2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa(pub f64, pub f64);

/// One DGP: error family plus (ξ, η, κ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub xi: f64,
    pub eta: f64,
    pub kappa: Kappa,
    pub family: ErrorFamily,
    /// Allows (ξ, η, κ) outside the eight tabled combinations.
    pub extended: bool,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1.0)
}

impl ScenarioConfig {
    /// A tabled configuration; errors when (ξ, η, κ) is not one of the eight cases.
    pub fn new(xi: f64, eta: f64, kappa: Kappa, family: ErrorFamily) -> Result<Self> {
        let cfg = Self {
            xi,
            eta,
            kappa,
            family,
            extended: false,
        };
        cfg.levels().ok_or_else(|| {
            Error::Config(format!(
                "(xi={xi}, eta={eta}, kappa=({}, {})) is not a tabled setting",
                kappa.0, kappa.1
            ))
        })?;
        Ok(cfg)
    }

    /// Any finite (ξ, η ≥ 0, κ); bypasses the table check.
    pub fn extended(xi: f64, eta: f64, kappa: Kappa, family: ErrorFamily) -> Result<Self> {
        if !(xi.is_finite() && eta.is_finite() && eta >= 0.0 && kappa.0.is_finite() && kappa.1.is_finite()) {
            return Err(Error::Config("extended scenario parameters must be finite with eta >= 0".into()));
        }
        Ok(Self {
            xi,
            eta,
            kappa,
            family,
            extended: true,
        })
    }

    /// Builds the tabled configuration from high/low flags.
    pub fn from_levels(high_effect: bool, high_noise: bool, strong_selection: bool, family: ErrorFamily) -> Self {
        Self {
            xi: if high_effect { XI_HIGH } else { XI_LOW },
            eta: if high_noise { ETA_HIGH } else { ETA_LOW },
            kappa: if strong_selection { KAPPA_STRONG } else { KAPPA_WEAK },
            family,
            extended: false,
        }
    }

    /// (high effect, high noise, strong selection) when the parameters match a tabled case.
    pub fn levels(&self) -> Option<(bool, bool, bool)> {
        let effect = if close(self.xi, XI_HIGH) {
            true
        } else if close(self.xi, XI_LOW) {
            false
        } else {
            return None;
        };
        let noise = if close(self.eta, ETA_HIGH) {
            true
        } else if close(self.eta, ETA_LOW) {
            false
        } else {
            return None;
        };
        let k = self.kappa;
        let selection = if close(k.0, KAPPA_STRONG.0) && close(k.1, KAPPA_STRONG.1) {
            true
        } else if close(k.0, KAPPA_WEAK.0) && close(k.1, KAPPA_WEAK.1) {
            false
        } else {
            return None;
        };
        Some((effect, noise, selection))
    }

    /// 1-based case number in the eight-row settings table.
    pub fn case_number(&self) -> Option<u8> {
        self.levels()
            .map(|(e, n, s)| 1 + ((e as u8) << 2) + ((n as u8) << 1) + s as u8)
    }
}

/// Variance denominator used by the σ_y and (a, b) calibrations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceConvention {
    /// Divide by n.
    #[default]
    Population,
    /// Divide by n − 1.
    Sample,
}

impl VarianceConvention {
    pub fn variance(self, values: &[f64]) -> f64 {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        match self {
            VarianceConvention::Population => ss / n,
            VarianceConvention::Sample => ss / (n - 1.0),
        }
    }
}

/// f(x) = x1 + x43 + 0.3(x10 − 1).
#[inline]
pub fn raw_score(x: &Unit) -> f64 {
    x.x1 + x.x43 + 0.3 * (x.x10 - 1.0)
}

/// π = (1 + exp(κ1 f + κ2))⁻¹, clamped to [1e-12, 1 − 1e-12].
#[inline]
pub fn propensity(f_value: f64, kappa: Kappa) -> f64 {
    let p = 1.0 / (1.0 + (kappa.0 * f_value + kappa.1).exp());
    p.clamp(PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP)
}

/// μ = −sin(Φ(π)) + x43.
#[inline]
pub fn mu_baseline(pi_value: f64, x43: f64) -> f64 {
    -normal::cdf(pi_value).sin() + x43
}

/// τ = ξ(x3·x24 + (x14 − 1) − (x15 − 1)).
#[inline]
pub fn tau_additive(x: &Unit, xi: f64) -> f64 {
    xi * (x.x3 * x.x24 + (x.x14 - 1.0) - (x.x15 - 1.0))
}

/// σ(x) = 0.4 + (x21 − 1)/15, written as (x21 + 5)/15 so every level is a
/// single correctly rounded quotient (level 1 gives 0.4 and level 16 gives
/// 1.4 exactly).
pub fn sigma_multiplier(x21: u8) -> Result<f64> {
    if !(1..=X21_LEVELS).contains(&x21) {
        return Err(Error::Validation(format!("x21 level {x21} outside 1..=16")));
    }
    Ok((x21 as f64 + 5.0) / 15.0)
}

/// σ_y = η·sqrt(Var(μ + π·τ)) with the variance taken over the sample.
pub fn calibrate_noise_scale(
    mu: &[f64],
    pi: &[f64],
    tau: &[f64],
    eta: f64,
    convention: VarianceConvention,
) -> Result<f64> {
    let n = mu.len();
    for (what, v) in [("pi", pi), ("tau", tau)] {
        if v.len() != n {
            return Err(Error::LengthMismatch {
                what,
                expected: n,
                found: v.len(),
            });
        }
    }
    if n < 2 {
        return Err(Error::Calibration("noise calibration needs at least 2 units".into()));
    }
    let combined: Vec<f64> = mu.iter().zip(pi).zip(tau).map(|((m, p), t)| m + p * t).collect();
    Ok(eta * convention.variance(&combined).sqrt())
}

/// Per-unit surfaces and the scalar noise scale for one covariate table and
/// scenario. For the non-additive family `mu` and `tau` hold the latent
/// (pre-squash) surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedSurfaces {
    pub f: Vec<f64>,
    pub pi: Vec<f64>,
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub sigma_y: f64,
    pub convention: VarianceConvention,
}

impl CalibratedSurfaces {
    pub fn compute(table: &CovariateTable, config: &ScenarioConfig, convention: VarianceConvention) -> Result<Self> {
        let n = table.n();
        let mut f = Vec::with_capacity(n);
        let mut pi = Vec::with_capacity(n);
        let mut mu = Vec::with_capacity(n);
        let mut tau = Vec::with_capacity(n);
        let mut sigma_x = Vec::with_capacity(n);
        for x in table.units() {
            let fi = raw_score(&x);
            let pii = propensity(fi, config.kappa);
            f.push(fi);
            pi.push(pii);
            mu.push(mu_baseline(pii, x.x43));
            tau.push(tau_additive(&x, config.xi));
            sigma_x.push(sigma_multiplier(x.x21)?);
        }
        let sigma_y = calibrate_noise_scale(&mu, &pi, &tau, config.eta, convention)?;
        Ok(Self {
            f,
            pi,
            mu,
            tau,
            sigma_x,
            sigma_y,
            convention,
        })
    }

    pub fn n(&self) -> usize {
        self.pi.len()
    }

    /// Recomputes σ_y from the stored surfaces and checks the range invariants.
    pub fn check_invariants(&self, eta: f64) -> Result<()> {
        if let Some(p) = self.pi.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return Err(Error::Validation(format!("propensity {p} outside (0, 1)")));
        }
        if let Some(s) = self.sigma_x.iter().find(|s| !(0.4..=1.4).contains(*s)) {
            return Err(Error::Validation(format!("sigma(x) = {s} outside [0.4, 1.4]")));
        }
        let again = calibrate_noise_scale(&self.mu, &self.pi, &self.tau, eta, self.convention)?;
        if (again - self.sigma_y).abs() > 1e-10 {
            return Err(Error::Validation(format!(
                "sigma_y {} does not match recomputed {again}",
                self.sigma_y
            )));
        }
        Ok(())
    }
}

/// Independent Bernoulli(πᵢ) draws by inversion: zᵢ = 1 iff uᵢ < πᵢ.
pub fn draw_treatment<R: Rng + ?Sized>(pi: &[f64], stream: &mut R) -> Vec<u8> {
    pi.iter()
        .map(|&p| {
            let u: f64 = stream.random();
            u8::from(u < p)
        })
        .collect()
}

/// y = μ + τ·z + noise for the three additive families.
///
/// `outcome` supplies the unit-level εᵢ; `group` supplies the sixteen
/// birthplace shocks (group-correlated family only, drawn before use).
pub fn generate_additive_outcome<R: Rng + ?Sized, G: Rng + ?Sized>(
    surfaces: &CalibratedSurfaces,
    z: &[u8],
    family: ErrorFamily,
    x21: &[u8],
    outcome: &mut R,
    group: &mut G,
) -> Result<Vec<f64>> {
    let n = surfaces.n();
    for (what, len) in [("z", z.len()), ("x21", x21.len())] {
        if len != n {
            return Err(Error::LengthMismatch {
                what,
                expected: n,
                found: len,
            });
        }
    }
    let sy = surfaces.sigma_y;
    let mean = |i: usize| surfaces.mu[i] + surfaces.tau[i] * f64::from(z[i]);
    let y = match family {
        ErrorFamily::Iid => (0..n)
            .map(|i| {
                let e: f64 = outcome.sample(StandardNormal);
                mean(i) + sy * e
            })
            .collect(),
        ErrorFamily::GroupCorrelated => {
            let shocks: Vec<f64> = (0..X21_LEVELS).map(|_| group.sample(StandardNormal)).collect();
            (0..n)
                .map(|i| {
                    let level = x21[i];
                    if !(1..=X21_LEVELS).contains(&level) {
                        return Err(Error::Validation(format!("x21 level {level} outside 1..=16")));
                    }
                    let e: f64 = outcome.sample(StandardNormal);
                    let shared = shocks[level as usize - 1];
                    Ok(mean(i) + sy * (GROUP_OWN_WEIGHT * e + GROUP_SHARED_WEIGHT * shared))
                })
                .collect::<Result<_>>()?
        }
        ErrorFamily::Heteroskedastic => (0..n)
            .map(|i| {
                let e: f64 = outcome.sample(StandardNormal);
                mean(i) + surfaces.sigma_x[i] * sy * e
            })
            .collect(),
        ErrorFamily::NonAdditive => {
            return Err(Error::Config(
                "non-additive outcomes are generated by the nonadditive module".into(),
            ))
        }
    };
    Ok(y)
}
