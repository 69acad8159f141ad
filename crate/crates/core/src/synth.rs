//! Synthetic stand-in for the restricted covariate file.
//!
//! Units are drawn from a Gaussian copula: a latent 8-dimensional normal
//! vector is pushed through one monotone margin per column (normal,
//! zero-inflated half-normal, threshold-to-binary, quantile bins). The latent
//! correlation of every pair is solved so that the *observed* correlation of
//! the transformed pair equals the target, using the Hermite expansion
//!
//! ```text
//! corr(g_i(Z_i), g_j(Z_j)) = Σ_k a_ik a_jk ρ^k / sqrt(V_i V_j),
//! a_k = E[g(Z) He_k(Z)] / sqrt(k!)
//! ```
//!
//! followed by a nearest-PSD repair of the latent matrix.

use nalgebra::{SMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covariates::{col, Corr8, CovariateTable, Provenance, NUM_COLUMNS, X21_LEVELS};
use crate::error::{Error, Result};
use crate::normal;
use crate::rng::{global_stream, Purpose};

type Mat8 = SMatrix<f64, NUM_COLUMNS, NUM_COLUMNS>;

const HERMITE_TERMS: usize = 80;
const MIN_EIGENVALUE: f64 = 1e-8;

/// Marginal shapes of the synthetic covariates. These are plumbing
/// constants, overridable from the `[synthetic]` table of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticMargins {
    /// Point mass at zero of X3 before z-scoring.
    pub x3_zero_fraction: f64,
    /// Fraction of units coded 2.
    pub x10_prevalence: f64,
    pub x14_prevalence: f64,
    pub x15_prevalence: f64,
    pub x24_prevalence: f64,
}

impl Default for SyntheticMargins {
    fn default() -> Self {
        Self {
            x3_zero_fraction: 0.60,
            x10_prevalence: 0.10,
            x14_prevalence: 0.05,
            x15_prevalence: 0.30,
            x24_prevalence: 0.50,
        }
    }
}

impl SyntheticMargins {
    fn validate(&self) -> Result<()> {
        let probs = [
            ("x3_zero_fraction", self.x3_zero_fraction),
            ("x10_prevalence", self.x10_prevalence),
            ("x14_prevalence", self.x14_prevalence),
            ("x15_prevalence", self.x15_prevalence),
            ("x24_prevalence", self.x24_prevalence),
        ];
        for (name, p) in probs {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {p}")));
            }
        }
        Ok(())
    }

    fn margins(&self) -> [Margin; NUM_COLUMNS] {
        [
            Margin::Normal,
            Margin::ZeroInflatedHalfNormal {
                zero_fraction: self.x3_zero_fraction,
            },
            Margin::binary(self.x10_prevalence),
            Margin::binary(self.x14_prevalence),
            Margin::binary(self.x15_prevalence),
            Margin::Levels { count: X21_LEVELS },
            Margin::binary(self.x24_prevalence),
            Margin::Normal,
        ]
    }
}

#[derive(Debug, Clone, Copy)]
enum Margin {
    Normal,
    ZeroInflatedHalfNormal { zero_fraction: f64 },
    /// Coded 2 above the threshold, 1 below.
    Threshold { cut: f64 },
    /// Equal-probability bins coded 1..=count.
    Levels { count: u8 },
}

impl Margin {
    fn binary(prevalence: f64) -> Self {
        Margin::Threshold {
            cut: normal::quantile(1.0 - prevalence),
        }
    }

    fn level_cuts(count: u8) -> impl Iterator<Item = f64> {
        (1..count).map(move |l| normal::quantile(l as f64 / count as f64))
    }

    fn transform(&self, z: f64) -> f64 {
        match *self {
            Margin::Normal => z,
            Margin::ZeroInflatedHalfNormal { zero_fraction } => zihn(z, zero_fraction),
            Margin::Threshold { cut } => {
                if z > cut {
                    2.0
                } else {
                    1.0
                }
            }
            Margin::Levels { count } => {
                1.0 + Self::level_cuts(count).filter(|&c| z > c).count() as f64
            }
        }
    }

    /// Normalized Hermite coefficients a_1..a_K and the exact variance.
    fn hermite_profile(&self) -> (Vec<f64>, f64) {
        match *self {
            Margin::Normal => {
                let mut a = vec![0.0; HERMITE_TERMS];
                a[0] = 1.0;
                (a, 1.0)
            }
            Margin::Threshold { cut } => {
                let p = 1.0 - normal::cdf(cut);
                (step_coefficients(&[cut]), p * (1.0 - p))
            }
            Margin::Levels { count } => {
                let cuts: Vec<f64> = Self::level_cuts(count).collect();
                let k = count as f64;
                (step_coefficients(&cuts), (k * k - 1.0) / 12.0)
            }
            Margin::ZeroInflatedHalfNormal { zero_fraction } => {
                // g vanishes below the cut and is smooth above it.
                let lo = normal::quantile(zero_fraction);
                let hi = 12.0;
                let steps = 40_000;
                let h = (hi - lo) / steps as f64;
                let mut a = vec![0.0; HERMITE_TERMS];
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                let mut herm = vec![0.0; HERMITE_TERMS + 1];
                for s in 0..=steps {
                    let z = lo + s as f64 * h;
                    let w = if s == 0 || s == steps {
                        1.0
                    } else if s % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    } * h
                        / 3.0;
                    let gw = zihn(z, zero_fraction) * normal::pdf(z) * w;
                    normalized_hermite(z, &mut herm);
                    for k in 0..HERMITE_TERMS {
                        a[k] += gw * herm[k + 1];
                    }
                    m1 += gw;
                    m2 += gw * zihn(z, zero_fraction);
                }
                (a, m2 - m1 * m1)
            }
        }
    }
}

fn zihn(z: f64, zero_fraction: f64) -> f64 {
    let upper = normal::cdf(-z);
    if upper >= 1.0 - zero_fraction {
        0.0
    } else {
        // half-normal quantile of the conditional rank, via the upper tail
        -normal::quantile(upper / (2.0 * (1.0 - zero_fraction)))
    }
}

/// h_k(x) = He_k(x)/sqrt(k!) for k = 0..out.len().
fn normalized_hermite(x: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 1..out.len() - 1 {
        let kf = k as f64;
        out[k + 1] = (x * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
    }
}

/// Coefficients of Σ_c 1{Z > c}: a_k = Σ_c φ(c)·h_{k−1}(c)/sqrt(k).
fn step_coefficients(cuts: &[f64]) -> Vec<f64> {
    let mut a = vec![0.0; HERMITE_TERMS];
    let mut herm = vec![0.0; HERMITE_TERMS];
    for &c in cuts {
        normalized_hermite(c, &mut herm);
        let phi = normal::pdf(c);
        for k in 0..HERMITE_TERMS {
            a[k] += phi * herm[k] / ((k + 1) as f64).sqrt();
        }
    }
    a
}

fn implied_correlation(a: &[f64], b: &[f64], scale: f64, rho: f64) -> f64 {
    let mut pow = rho;
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y * pow;
        pow *= rho;
    }
    s / scale
}

/// Latent correlation whose transformed pair has the requested correlation,
/// clamped to the attainable range.
fn solve_latent(a: &[f64], b: &[f64], scale: f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (-0.999_999, 0.999_999);
    if target <= implied_correlation(a, b, scale, lo) {
        return lo;
    }
    if target >= implied_correlation(a, b, scale, hi) {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if implied_correlation(a, b, scale, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn validate_target(target: &Corr8) -> Result<()> {
    for i in 0..NUM_COLUMNS {
        if target[i][i] != 1.0 {
            return Err(Error::Config(format!(
                "target correlation diagonal entry {i} is {}, expected 1",
                target[i][i]
            )));
        }
        for j in 0..NUM_COLUMNS {
            let v = target[i][j];
            if !v.is_finite() || v.abs() > 1.0 {
                return Err(Error::Config(format!("target correlation [{i}][{j}] = {v} is invalid")));
            }
            if (v - target[j][i]).abs() > 1e-12 {
                return Err(Error::Config(format!("target correlation is not symmetric at [{i}][{j}]")));
            }
        }
    }
    Ok(())
}

/// Clips eigenvalues from below and rescales to unit diagonal.
fn nearest_correlation(m: Mat8) -> Mat8 {
    let eig = SymmetricEigen::new(m);
    let clipped = eig.eigenvalues.map(|l| l.max(MIN_EIGENVALUE));
    let repaired = eig.eigenvectors * Mat8::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let d = repaired.diagonal().map(|v| 1.0 / v.sqrt());
    let mut out = Mat8::from_diagonal(&d) * repaired * Mat8::from_diagonal(&d);
    for i in 0..NUM_COLUMNS {
        out[(i, i)] = 1.0;
        for j in 0..i {
            let v = 0.5 * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Latent Gaussian correlation matrix that reproduces `target` after the
/// margins are applied.
pub fn latent_correlation(target: &Corr8, margins: &SyntheticMargins) -> Result<Corr8> {
    validate_target(target)?;
    margins.validate()?;
    let profiles: Vec<(Vec<f64>, f64)> = margins.margins().iter().map(Margin::hermite_profile).collect();
    let mut latent = Mat8::identity();
    for i in 0..NUM_COLUMNS {
        for j in (i + 1)..NUM_COLUMNS {
            let (a, va) = &profiles[i];
            let (b, vb) = &profiles[j];
            let rho = solve_latent(a, b, (va * vb).sqrt(), target[i][j]);
            latent[(i, j)] = rho;
            latent[(j, i)] = rho;
        }
    }
    let repaired = nearest_correlation(latent);
    let mut out = [[0.0; NUM_COLUMNS]; NUM_COLUMNS];
    for i in 0..NUM_COLUMNS {
        for j in 0..NUM_COLUMNS {
            out[i][j] = repaired[(i, j)];
        }
    }
    Ok(out)
}

/// Draws `n` units whose observed pairwise correlations match `target` in
/// expectation. Deterministic in `(n, seed, target, margins)`. Continuous
/// columns of the result are z-scored.
pub fn synthesize_covariates(
    n: usize,
    seed: u64,
    target: &Corr8,
    margins: &SyntheticMargins,
) -> Result<CovariateTable> {
    if n < 2 {
        return Err(Error::Config(format!("synthetic table needs n >= 2, got {n}")));
    }
    let latent = latent_correlation(target, margins)?;
    let chol = Mat8::from_fn(|i, j| latent[i][j])
        .cholesky()
        .ok_or_else(|| Error::Config("target correlation could not be repaired to PSD".into()))?;
    let l = chol.l();
    let kinds = margins.margins();

    let mut stream = global_stream(seed, Purpose::Covariates);
    let mut columns = vec![Vec::with_capacity(n); NUM_COLUMNS];
    let mut e = [0.0; NUM_COLUMNS];
    for _ in 0..n {
        for v in e.iter_mut() {
            *v = stream.sample(StandardNormal);
        }
        for (i, column) in columns.iter_mut().enumerate() {
            let mut w = 0.0;
            for (j, ej) in e.iter().enumerate().take(i + 1) {
                w += l[(i, j)] * ej;
            }
            column.push(kinds[i].transform(w));
        }
    }
    debug_assert!(columns[col::X21].iter().all(|&v| (1.0..=16.0).contains(&v)));
    CovariateTable::from_columns(columns, Provenance::Synthetic { n, seed })?.standardize_columns()
}
