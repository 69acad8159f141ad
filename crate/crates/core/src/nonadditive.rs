//! Non-additive error family.
//!
//! A latent additive outcome `Ỹ = μ̃ + τ̃z + σ_y ε` is squashed through
//! `Y = 13·Φ((Ỹ − a)/b) − 6`, with `a` the sample mean of `μ̃ + τ̃π` and
//! `b = 1.25·sqrt(σ_y² + Var(μ̃ + τ̃π))`. Because `E Φ(m + sW) = Φ(m/√(1+s²))`
//! for standard normal `W`, both potential-outcome means have closed forms:
//!
//! ```text
//! E(Y¹|x) = 13·Φ(m¹/√(1+s²)) − 6,   m¹ = (μ̃ + τ̃ − a)/b
//! E(Y⁰|x) = 13·Φ(m⁰/√(1+s²)) − 6,   m⁰ = (μ̃ − a)/b,   s = σ_y/b
//! ```

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dgp::{CalibratedSurfaces, VarianceConvention};
use crate::error::{Error, Result};
use crate::normal;

pub const SQUASH_SCALE: f64 = 13.0;
pub const SQUASH_SHIFT: f64 = -6.0;
pub const SPREAD_INFLATION: f64 = 1.25;

/// Lower and upper bounds of the squashed outcome (both excluded).
pub const OUTCOME_INF: f64 = SQUASH_SHIFT;
pub const OUTCOME_SUP: f64 = SQUASH_SCALE + SQUASH_SHIFT;

/// E(Φ(m + sW)) for W ~ N(0, 1), in closed form.
#[inline]
pub fn gaussian_cdf_mixture_mean(m: f64, s: f64) -> f64 {
    normal::cdf(m / (1.0 + s * s).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformParams {
    pub a: f64,
    pub b: f64,
    pub s: f64,
    pub sigma_y: f64,
    pub m1: Vec<f64>,
    pub m0: Vec<f64>,
    /// √(s² + 1), shared by both arms so the two CATE presentations agree bitwise.
    pub root: f64,
}

/// Location/scale of the squash for latent surfaces `mu_tilde`, `tau_tilde`.
pub fn compute_transform_params(
    mu_tilde: &[f64],
    tau_tilde: &[f64],
    pi: &[f64],
    sigma_y: f64,
    convention: VarianceConvention,
) -> Result<TransformParams> {
    let n = mu_tilde.len();
    for (what, v) in [("tau_tilde", tau_tilde), ("pi", pi)] {
        if v.len() != n {
            return Err(Error::LengthMismatch {
                what,
                expected: n,
                found: v.len(),
            });
        }
    }
    if n < 2 {
        return Err(Error::Calibration("transform calibration needs at least 2 units".into()));
    }
    if !(sigma_y >= 0.0) {
        return Err(Error::Calibration(format!("sigma_y must be nonnegative, got {sigma_y}")));
    }
    let expected: Vec<f64> = mu_tilde.iter().zip(tau_tilde).zip(pi).map(|((m, t), p)| m + t * p).collect();
    let a = expected.iter().sum::<f64>() / n as f64;
    let b = SPREAD_INFLATION * (sigma_y * sigma_y + convention.variance(&expected)).sqrt();
    if !(b > 0.0) {
        return Err(Error::DegenerateTransform);
    }
    Ok(TransformParams::from_location_scale(mu_tilde, tau_tilde, a, b, sigma_y))
}

impl TransformParams {
    /// Params for an explicit (a, b); used by calibration and by mutation checks.
    pub fn from_location_scale(mu_tilde: &[f64], tau_tilde: &[f64], a: f64, b: f64, sigma_y: f64) -> Self {
        let s = sigma_y / b;
        let m1 = mu_tilde.iter().zip(tau_tilde).map(|(m, t)| (m + t - a) / b).collect();
        let m0 = mu_tilde.iter().map(|m| (m - a) / b).collect();
        Self {
            a,
            b,
            s,
            sigma_y,
            m1,
            m0,
            root: (s * s + 1.0).sqrt(),
        }
    }

    pub fn n(&self) -> usize {
        self.m0.len()
    }

    /// 13·Φ((ỹ − a)/b) − 6, kept strictly inside (−6, 7) even where Φ
    /// rounds to 0 or 1.
    pub fn squash_outcome(&self, y_tilde: f64) -> f64 {
        let y = SQUASH_SCALE * normal::cdf((y_tilde - self.a) / self.b) + SQUASH_SHIFT;
        y.clamp(OUTCOME_INF.next_up(), OUTCOME_SUP.next_down())
    }

    /// E(Y¹ | xᵢ) in closed form.
    pub fn treated_mean(&self, i: usize) -> Result<f64> {
        self.check_index(i)?;
        Ok(SQUASH_SCALE * normal::cdf(self.m1[i] / self.root) + SQUASH_SHIFT)
    }

    /// E(Y⁰ | xᵢ) in closed form; this is the ground-truth μ for the family.
    pub fn untreated_mean(&self, i: usize) -> Result<f64> {
        self.check_index(i)?;
        Ok(SQUASH_SCALE * normal::cdf(self.m0[i] / self.root) + SQUASH_SHIFT)
    }

    /// Closed-form CATE and E(Y⁰|xᵢ) for unit `i`.
    pub fn cate_nonadditive(&self, i: usize) -> Result<(f64, f64)> {
        let treated = self.treated_mean(i)?;
        let untreated = self.untreated_mean(i)?;
        Ok((treated - untreated, untreated))
    }

    /// Per-unit (CATE, E(Y⁰|x)) columns.
    pub fn ground_truth(&self) -> (Vec<f64>, Vec<f64>) {
        (0..self.n()).map(|i| self.cate_nonadditive(i).expect("index in range")).unzip()
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::IndexOutOfRange { index: i, len: self.n() });
        }
        Ok(())
    }
}

/// Latent iid-error draw followed by the squash.
pub fn generate_nonadditive_outcome<R: Rng + ?Sized>(
    surfaces: &CalibratedSurfaces,
    z: &[u8],
    params: &TransformParams,
    stream: &mut R,
) -> Result<Vec<f64>> {
    let n = surfaces.n();
    for (what, len) in [("z", z.len()), ("transform params", params.n())] {
        if len != n {
            return Err(Error::LengthMismatch {
                what,
                expected: n,
                found: len,
            });
        }
    }
    Ok((0..n)
        .map(|i| {
            let e: f64 = stream.sample(StandardNormal);
            let latent = surfaces.mu[i] + surfaces.tau[i] * f64::from(z[i]) + surfaces.sigma_y * e;
            params.squash_outcome(latent)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariates::TARGET_CORRELATIONS;
    use crate::dgp::{ErrorFamily, ScenarioConfig};
    use crate::rng::{global_stream, Purpose};
    use crate::synth::{synthesize_covariates, SyntheticMargins};

    const POP: VarianceConvention = VarianceConvention::Population;

    #[test]
    fn mixture_mean_special_cases() {
        for s in [0.0, 0.5, 3.0, 100.0] {
            assert_eq!(gaussian_cdf_mixture_mean(0.0, s), 0.5);
        }
        let mut m = -8.0;
        while m <= 8.0 {
            assert!((gaussian_cdf_mixture_mean(m, 0.0) - normal::cdf(m)).abs() <= 1e-12);
            m += 0.125;
        }
        assert!((gaussian_cdf_mixture_mean(1.0, 1.0) - 0.760_250).abs() < 1e-6);
    }

    #[test]
    fn mixture_mean_matches_monte_carlo() {
        let mut r = global_stream(11, Purpose::Verification);
        let draws = 1_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..draws {
            let w: f64 = r.sample(StandardNormal);
            let v = normal::cdf(1.0 + w);
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / draws as f64;
        let se = ((s2 / draws as f64 - mean * mean) / draws as f64).sqrt();
        assert!((mean - gaussian_cdf_mixture_mean(1.0, 1.0)).abs() < 3.0 * se);
    }

    #[test]
    fn params_constant_surface() {
        let p = compute_transform_params(&[2.5; 4], &[0.0; 4], &[0.3; 4], 1.0, POP).unwrap();
        assert_eq!(p.a, 2.5);
        assert_eq!(p.b, 1.25);
        assert_eq!(p.s, 0.8);
        assert!(p.m0.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn params_hand_example() {
        let p = compute_transform_params(&[0.0, 2.0], &[0.0, 0.0], &[0.5, 0.5], 0.0, POP).unwrap();
        assert_eq!(p.a, 1.0);
        assert_eq!(p.b, 1.25);
        assert_eq!(p.s, 0.0);
    }

    #[test]
    fn params_degenerate() {
        let err = compute_transform_params(&[1.0, 1.0], &[0.0, 0.0], &[0.5, 0.5], 0.0, POP).unwrap_err();
        assert!(matches!(err, Error::DegenerateTransform));
        assert!(compute_transform_params(&[1.0, 1.0], &[0.0], &[0.5, 0.5], 1.0, POP).is_err());
    }

    #[test]
    fn squash_examples() {
        let p = compute_transform_params(&[0.0, 2.0], &[0.0, 0.0], &[0.5, 0.5], 1.0, POP).unwrap();
        assert_eq!(p.squash_outcome(p.a), 0.5);
        let hi = p.squash_outcome(1e300);
        let lo = p.squash_outcome(-1e300);
        assert!(hi < 7.0 && hi > 7.0 - 1e-14);
        assert!(lo > -6.0 && lo < -6.0 + 1e-14);
    }

    #[test]
    fn cate_zero_when_latent_effect_zero_and_monotone_otherwise() {
        let mu = [0.1, -0.4, 1.3, 0.0];
        let tau = [0.0, 0.5, -0.7, 2.0];
        let p = compute_transform_params(&mu, &tau, &[0.4; 4], 0.9, POP).unwrap();
        assert_eq!(p.cate_nonadditive(0).unwrap().0, 0.0);
        assert!(p.cate_nonadditive(1).unwrap().0 > 0.0);
        assert!(p.cate_nonadditive(2).unwrap().0 < 0.0);
        assert!(p.cate_nonadditive(3).unwrap().0 > 0.0);
        assert!(matches!(p.cate_nonadditive(4), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn per_arm_difference_is_bitwise_cate() {
        let mu = [0.1, -0.4, 1.3, 0.0, 0.77];
        let tau = [0.3, 0.5, -0.7, 2.0, 1.0 / 3.0];
        let p = compute_transform_params(&mu, &tau, &[0.4; 5], 0.9, POP).unwrap();
        for i in 0..5 {
            let diff = p.treated_mean(i).unwrap() - p.untreated_mean(i).unwrap();
            assert_eq!(diff.to_bits(), p.cate_nonadditive(i).unwrap().0.to_bits());
            // the displayed form with √(σ_y²/b² + 1)
            let r = (p.sigma_y * p.sigma_y / (p.b * p.b) + 1.0).sqrt();
            let displayed = 13.0 * normal::cdf(p.m1[i] / r) - 13.0 * normal::cdf(p.m0[i] / r);
            assert!((displayed - diff).abs() < 1e-12);
        }
    }

    #[test]
    fn generated_outcomes_stay_in_range_and_noise_free_limit() {
        let t = synthesize_covariates(300, 8, &TARGET_CORRELATIONS, &SyntheticMargins::default()).unwrap();
        let cfg = ScenarioConfig::from_levels(true, true, true, ErrorFamily::NonAdditive);
        let mut s = CalibratedSurfaces::compute(&t, &cfg, POP).unwrap();
        let p = compute_transform_params(&s.mu, &s.tau, &s.pi, s.sigma_y, POP).unwrap();
        let z: Vec<u8> = (0..t.n()).map(|i| (i % 3 == 0) as u8).collect();
        let y = generate_nonadditive_outcome(&s, &z, &p, &mut global_stream(1, Purpose::Outcome)).unwrap();
        assert!(y.iter().all(|&v| v > -6.0 && v < 7.0));

        s.sigma_y = 0.0;
        let y = generate_nonadditive_outcome(&s, &z, &p, &mut global_stream(1, Purpose::Outcome)).unwrap();
        for i in 0..t.n() {
            assert_eq!(y[i], p.squash_outcome(s.mu[i] + s.tau[i] * f64::from(z[i])));
        }
        assert!(generate_nonadditive_outcome(&s, &z[1..], &p, &mut global_stream(1, Purpose::Outcome)).is_err());
    }
}
