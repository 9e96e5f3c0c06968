//! Gradient checks for the perturbed ranking estimator.
//!
//! Two checks: with two frames the smoothed ranking has a closed form, so
//! the estimated derivative can be compared with the exact one; for any
//! frame count the estimate is compared with central finite differences of
//! an independently re-estimated objective.

use crate::error::Result;
use crate::numerics::{RandomStream, Tensor};
use crate::ranking::{perturbed_inner_product, perturbed_rank_vjp_with_error, PerturbConfig, SaliencyScores};

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Exact `d P(a + sigma z1 > b + sigma z2) / da`.
pub fn two_frame_derivative(a: f64, b: f64, sigma: f64) -> f64 {
    let w = sigma * std::f64::consts::SQRT_2;
    normal_pdf((a - b) / w) / w
}

#[derive(Clone, Debug)]
pub struct ClosedFormTrial {
    pub a: f32,
    pub b: f32,
    pub estimate: f64,
    pub estimate_other: f64,
    pub expected: f64,
    pub relative_error: f64,
    pub passed: bool,
}

pub const CLOSED_FORM_TOLERANCE: f64 = 0.05;

/// `trials` random pairs with `|a - b| <= 3 sigma`; the cotangent selects
/// entry (0, 0). Passes when `ds[0]` is within 5% of the exact derivative and
/// `ds[1]` mirrors it within the same tolerance.
pub fn closed_form_check(sigma: f32, n: usize, seed: u64, trials: usize) -> Result<Vec<ClosedFormTrial>> {
    PerturbConfig::new(sigma, n, seed)?;
    let mut rng = RandomStream::new(seed);
    let g = Tensor::matrix(&[&[1.0, 0.0], &[0.0, 0.0]])?;
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let b = rng.uniform(-1.0, 1.0);
        let a = b + rng.uniform(-3.0 * sigma, 3.0 * sigma);
        let cfg = PerturbConfig::new(sigma, n, rng.next_u64())?;
        let ds = perturbed_rank_vjp_with_error(&SaliencyScores::from_slice(&[a, b])?, &cfg, &g)?.value;
        let (e0, e1) = (ds.data()[0] as f64, ds.data()[1] as f64);
        let expected = two_frame_derivative(a as f64, b as f64, sigma as f64);
        let relative_error = (e0 - expected).abs() / expected;
        let mirrored = (e1 + expected).abs() / expected;
        out.push(ClosedFormTrial {
            a,
            b,
            estimate: e0,
            estimate_other: e1,
            expected,
            relative_error,
            passed: relative_error <= CLOSED_FORM_TOLERANCE && mirrored <= CLOSED_FORM_TOLERANCE,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FiniteDifferenceSettings {
    pub frames: usize,
    pub sigma: f32,
    pub vjp_samples: usize,
    pub fd_samples: usize,
    pub step: f32,
    pub tolerance_se: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for FiniteDifferenceSettings {
    fn default() -> Self {
        FiniteDifferenceSettings {
            frames: 4,
            sigma: 0.05,
            vjp_samples: 100_000,
            fd_samples: 1_000_000,
            step: 0.02,
            tolerance_se: 3.0,
            trials: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FiniteDifferenceTrial {
    pub scores: Vec<f32>,
    pub vjp: Vec<f64>,
    pub finite_difference: Vec<f64>,
    pub combined_se: Vec<f64>,
    pub passed: bool,
}

impl FiniteDifferenceTrial {
    /// Largest `|vjp - fd| / combined_se` over coordinates.
    pub fn worst_z(&self) -> f64 {
        self.vjp
            .iter()
            .zip(&self.finite_difference)
            .zip(&self.combined_se)
            .map(|((v, f), s)| (v - f).abs() / s)
            .fold(0.0, f64::max)
    }
}

/// Scores are drawn as `N(0, (2 sigma)^2)` and the cotangent as standard
/// normal. Each finite-difference evaluation point gets fresh noise.
pub fn finite_difference_check(s: &FiniteDifferenceSettings) -> Result<Vec<FiniteDifferenceTrial>> {
    PerturbConfig::new(s.sigma, s.vjp_samples, s.seed)?;
    PerturbConfig::new(s.sigma, s.fd_samples, s.seed)?;
    let t = s.frames;
    let mut rng = RandomStream::new(s.seed);
    let mut out = Vec::with_capacity(s.trials);
    for _ in 0..s.trials {
        let scores: Vec<f32> = (0..t).map(|_| 2.0 * s.sigma * rng.normal()).collect();
        let g = rng.gaussian(&[t, t]);
        let cfg = PerturbConfig::new(s.sigma, s.vjp_samples, rng.next_u64())?;
        let est = perturbed_rank_vjp_with_error(&SaliencyScores::from_slice(&scores)?, &cfg, &g)?;
        let mut vjp = Vec::with_capacity(t);
        let mut fd = Vec::with_capacity(t);
        let mut se = Vec::with_capacity(t);
        for i in 0..t {
            let mut eval = |delta: f32| -> Result<(f64, f64, f64)> {
                let mut x = scores.clone();
                x[i] += delta;
                let at = x[i] as f64;
                let c = PerturbConfig::new(s.sigma, s.fd_samples, rng.next_u64())?;
                let e = perturbed_inner_product(&SaliencyScores::from_slice(&x)?, &c, &g)?;
                Ok((e.value, e.std_error, at))
            };
            let (hi, hi_se, hi_at) = eval(s.step)?;
            let (lo, lo_se, lo_at) = eval(-s.step)?;
            let width = hi_at - lo_at;
            let d = (hi - lo) / width;
            let d_se = (hi_se * hi_se + lo_se * lo_se).sqrt() / width;
            let v = est.value.data()[i] as f64;
            let v_se = est.std_error.data()[i] as f64;
            vjp.push(v);
            fd.push(d);
            se.push((v_se * v_se + d_se * d_se).sqrt());
        }
        let passed = vjp.iter().zip(&fd).zip(&se).all(|((v, f), e)| (v - f).abs() <= s.tolerance_se * e);
        out.push(FiniteDifferenceTrial { scores, vjp, finite_difference: fd, combined_se: se, passed });
    }
    Ok(out)
}
