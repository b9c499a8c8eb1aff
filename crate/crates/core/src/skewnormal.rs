//! Skew-normal densities, distribution functions and maximum-likelihood fitting.
//!
//! The direct parametrisation (location ξ, scale ω, shape α) has density
//! `2/ω · φ(z) · Φ(αz)` with `z = (x-ξ)/ω`. Fitting is carried out in the
//! centred parametrisation (mean, standard deviation, skewness γ₁), where the
//! likelihood has no stationary ridge at α = 0, and mapped back afterwards.
//! Skewness is kept inside its admissible interval `(-γmax, γmax)` through
//! `γ₁ = γmax · tanh(t)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{self, Objective, Tolerance};
use crate::special::{
    log_norm_cdf, norm_cdf, norm_pdf, norm_pdf_over_cdf, norm_sf, owen_t,
};

const LN_2: f64 = std::f64::consts::LN_2;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
/// √(2/π), the mean of a standard half-normal.
const B: f64 = 0.797_884_560_802_865_4;

/// Largest attainable |skewness| of the skew-normal family (the half-normal limit).
pub fn max_skewness() -> f64 {
    let r = B / (1.0 - B * B).sqrt();
    0.5 * (4.0 - std::f64::consts::PI) * r * r * r
}

/// Direct parameters of a skew-normal law together with fit diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnParams {
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
    /// Number of observations the parameters were estimated from (0 if not fitted).
    pub n_fit: usize,
    pub converged: bool,
    pub loglik: f64,
    /// The fit was replaced by a normal fit (shape 0) because the shape
    /// estimate diverged or added nothing over the normal law.
    pub fallback: bool,
}

impl SnParams {
    pub fn new(location: f64, scale: f64, shape: f64) -> Self {
        Self {
            location,
            scale,
            shape,
            n_fit: 0,
            converged: true,
            loglik: f64::NAN,
            fallback: false,
        }
    }

    pub fn with_n_fit(mut self, n_fit: usize) -> Self {
        self.n_fit = n_fit;
        self
    }

    pub fn is_valid(&self) -> bool {
        self.location.is_finite() && self.scale.is_finite() && self.scale > 0.0 && self.shape.is_finite()
    }

    #[inline]
    fn standardize(&self, x: f64) -> f64 {
        (x - self.location) / self.scale
    }

    pub fn delta(&self) -> f64 {
        self.shape / (1.0 + self.shape * self.shape).sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.location + self.scale * B * self.delta()
    }

    pub fn sd(&self) -> f64 {
        let mz = B * self.delta();
        self.scale * (1.0 - mz * mz).sqrt()
    }

    pub fn skewness(&self) -> f64 {
        let mz = B * self.delta();
        0.5 * (4.0 - std::f64::consts::PI) * mz.powi(3) / (1.0 - mz * mz).powf(1.5)
    }
}

/// Extended skew-normal parameters; `threshold_param` is the extension τ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsnParams {
    pub location: f64,
    pub scale: f64,
    pub shape: f64,
    pub threshold_param: f64,
}

#[inline]
pub fn sn_pdf(x: f64, p: &SnParams) -> f64 {
    let z = p.standardize(x);
    2.0 / p.scale * norm_pdf(z) * norm_cdf(p.shape * z)
}

pub fn sn_logpdf(x: f64, p: &SnParams) -> f64 {
    let z = p.standardize(x);
    LN_2 - p.scale.ln() - LN_SQRT_2PI - 0.5 * z * z + log_norm_cdf(p.shape * z)
}

/// `Φ(z) − 2·T(z, α)`.
pub fn sn_cdf(x: f64, p: &SnParams) -> f64 {
    let z = p.standardize(x);
    if z == f64::INFINITY {
        return 1.0;
    }
    if z == f64::NEG_INFINITY {
        return 0.0;
    }
    (norm_cdf(z) - 2.0 * owen_t(z, p.shape)).clamp(0.0, 1.0)
}

/// Upper tail `1 − F(x)`, computed without cancellation in the right tail.
pub fn sn_sf(x: f64, p: &SnParams) -> f64 {
    let z = p.standardize(x);
    if z == f64::INFINITY {
        return 0.0;
    }
    if z == f64::NEG_INFINITY {
        return 1.0;
    }
    (norm_sf(z) + 2.0 * owen_t(z, p.shape)).clamp(0.0, 1.0)
}

pub fn esn_pdf(x: f64, p: &EsnParams) -> f64 {
    let z = (x - p.location) / p.scale;
    let tau = p.threshold_param;
    let arg = tau * (1.0 + p.shape * p.shape).sqrt() + p.shape * z;
    // Ratio of normal CDFs on the log scale keeps far-negative τ finite.
    let log_ratio = log_norm_cdf(arg) - log_norm_cdf(tau);
    norm_pdf(z) / p.scale * log_ratio.exp()
}

pub fn sn_loglik(values: &[f64], p: &SnParams) -> f64 {
    values.iter().map(|&x| sn_logpdf(x, p)).sum()
}

/// Centred → direct parameters. `None` when γ₁ lies outside the admissible range.
pub fn centered_to_direct(mean: f64, sd: f64, skewness: f64) -> Option<(f64, f64, f64)> {
    let d = centered_to_direct_detail(mean, sd, skewness)?;
    Some((d.location, d.scale, d.shape))
}

#[derive(Debug, Clone, Copy)]
struct DirectDetail {
    location: f64,
    scale: f64,
    shape: f64,
    mu_z: f64,
}

fn centered_to_direct_detail(mean: f64, sd: f64, skewness: f64) -> Option<DirectDetail> {
    let c = (2.0 * skewness.abs() / (4.0 - std::f64::consts::PI)).cbrt() * skewness.signum();
    let c = if skewness == 0.0 { 0.0 } else { c };
    let mu_z = c / (1.0 + c * c).sqrt();
    let delta = mu_z / B;
    if !(delta.abs() < 1.0) {
        return None;
    }
    let shape = delta / (1.0 - delta * delta).sqrt();
    let scale = sd / (1.0 - mu_z * mu_z).sqrt();
    let location = mean - scale * mu_z;
    if !(shape.is_finite() && scale.is_finite() && scale > 0.0) {
        return None;
    }
    Some(DirectDetail {
        location,
        scale,
        shape,
        mu_z,
    })
}

/// Options for [`fit_sn`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Relative tolerance on the log-likelihood.
    pub ftol: f64,
    pub max_iter: usize,
    /// Fits with |shape| above this are treated as diverged.
    pub shape_cap: f64,
    pub start: StartStrategy,
    /// Compute the observed information for delta-method standard errors.
    pub compute_information: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            ftol: 1e-10,
            max_iter: 500,
            shape_cap: 40.0,
            start: StartStrategy::MultiStart,
            compute_information: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StartStrategy {
    /// Method-of-moments, normal, and shape-flipped starts; best log-likelihood wins.
    MultiStart,
    /// A single start at the given parameters.
    Warm(SnParams),
}

/// Coordinates in which an observed information matrix is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfoCoords {
    /// (location, scale, shape).
    Direct,
    /// (location, scale) with shape held at 0.
    DirectNormal,
    /// (mean, ln sd, t) with skewness `γmax·tanh(t)`.
    Centered,
}

impl InfoCoords {
    pub fn dim(self) -> usize {
        match self {
            InfoCoords::DirectNormal => 2,
            _ => 3,
        }
    }
}

/// Negative Hessian of the log-likelihood at a parameter point.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedInformation {
    pub coords: InfoCoords,
    pub matrix: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnFit {
    pub params: SnParams,
    pub information: Option<ObservedInformation>,
}

/// Per-interval survival factor `P(Y > cutpoint)` with its standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceEstimate {
    pub prob: f64,
    /// Closed-form delta SE scaled by `1/√n_fit`; `None` when `n_fit` is 0.
    pub se_paper: Option<f64>,
    /// Delta-method SE from the observed information; `None` if unavailable.
    pub se_delta: Option<f64>,
    pub cutpoint: f64,
    pub params: SnParams,
}

/// Sample statistics on which fitting starts are built.
struct Moments {
    mean: f64,
    sd: f64,
    skewness: f64,
}

fn moments(values: &[f64]) -> Moments {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m3) = values.iter().fold((0.0, 0.0), |(m2, m3), &x| {
        let d = x - mean;
        (m2 + d * d, m3 + d * d * d)
    });
    let m2 = m2 / n;
    let m3 = m3 / n;
    let sd = m2.sqrt();
    let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    Moments { mean, sd, skewness }
}

/// Negative mean log-likelihood over standardised data in centred coordinates.
struct CenteredObjective<'a> {
    x: &'a [f64],
}

impl CenteredObjective<'_> {
    fn direct(theta: &[f64]) -> Option<DirectDetail> {
        let skew = max_skewness() * theta[2].tanh();
        centered_to_direct_detail(theta[0], theta[1].exp(), skew)
    }

    fn loglik(&self, d: &DirectDetail) -> f64 {
        let n = self.x.len() as f64;
        let mut acc = 0.0;
        for &x in self.x {
            let z = (x - d.location) / d.scale;
            acc += -0.5 * z * z + log_norm_cdf(d.shape * z);
        }
        acc + n * (LN_2 - d.scale.ln() - LN_SQRT_2PI)
    }

    /// Log-likelihood and its gradient in direct coordinates.
    fn score(&self, d: &DirectDetail) -> (f64, [f64; 3]) {
        let n = self.x.len() as f64;
        let (mut ll, mut s_z, mut s_zz, mut s_r, mut s_rz) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &x in self.x {
            let z = (x - d.location) / d.scale;
            let u = d.shape * z;
            let r = norm_pdf_over_cdf(u);
            ll += -0.5 * z * z + log_norm_cdf(u);
            s_z += z;
            s_zz += z * z;
            s_r += r;
            s_rz += r * z;
        }
        ll += n * (LN_2 - d.scale.ln() - LN_SQRT_2PI);
        let w = d.scale;
        let a = d.shape;
        let d_loc = (s_z - a * s_r) / w;
        let d_scale = (-n + s_zz - a * s_rz) / w;
        let d_shape = s_rz;
        (ll, [d_loc, d_scale, d_shape])
    }
}

impl Objective for CenteredObjective<'_> {
    fn value(&mut self, theta: &[f64]) -> f64 {
        match Self::direct(theta) {
            Some(d) => -self.loglik(&d) / self.x.len() as f64,
            None => f64::INFINITY,
        }
    }

    fn gradient(&mut self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let Some(d) = Self::direct(theta) else {
            grad.fill(f64::NAN);
            return f64::INFINITY;
        };
        let n = self.x.len() as f64;
        let (ll, [g_loc, g_scale, g_shape]) = self.score(&d);
        let sd = theta[1].exp();
        let mu_z = d.mu_z;

        grad[0] = -g_loc / n;
        grad[1] = -(g_scale * d.scale - g_loc * d.scale * mu_z) / n;

        let th = theta[2].tanh();
        let skew = max_skewness() * th;
        if skew.abs() > 1e-7 {
            let c = mu_z / (1.0 - mu_z * mu_z).sqrt();
            let dskew_dt = max_skewness() * (1.0 - th * th);
            let dc_dskew = c / (3.0 * skew);
            let dmu_dc = (1.0 + c * c).powf(-1.5);
            let dmu_dt = dmu_dc * dc_dskew * dskew_dt;
            let delta = mu_z / B;
            let k = (1.0 - mu_z * mu_z).powf(-1.5);
            let dloc_dmu = -sd * k;
            let dscale_dmu = sd * mu_z * k;
            let dshape_dmu = (1.0 - delta * delta).powf(-1.5) / B;
            grad[2] = -(g_loc * dloc_dmu + g_scale * dscale_dmu + g_shape * dshape_dmu) * dmu_dt / n;
        } else {
            // The cube-root map from skewness to shape is singular at 0.
            let h = 1e-5;
            let mut tp = [theta[0], theta[1], theta[2] + h];
            let fp = self.value(&tp);
            tp[2] = theta[2] - h;
            let fm = self.value(&tp);
            grad[2] = (fp - fm) / (2.0 * h);
        }
        -ll / n
    }
}

fn to_theta(mean: f64, sd: f64, skewness: f64) -> [f64; 3] {
    let gmax = max_skewness();
    let ratio = (skewness / gmax).clamp(-0.995, 0.995);
    [mean, sd.ln(), ratio.atanh()]
}

/// Maximum-likelihood skew-normal fit.
///
/// Falls back to the normal fit (shape 0, `fallback = true`) when the shape
/// estimate exceeds `options.shape_cap` or the skew-normal optimum is no
/// better than the normal one.
pub fn fit_sn(values: &[f64], options: &FitOptions) -> Result<SnFit> {
    if values.len() < 3 {
        return Err(Error::TooFewObservations(values.len()));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(i));
    }
    let m = moments(values);
    if !(m.sd > 0.0) || m.sd <= 1e-14 * m.mean.abs() {
        return Err(Error::DegenerateSample);
    }

    let n = values.len();
    let standardized: Vec<f64> = values.iter().map(|&x| (x - m.mean) / m.sd).collect();
    let mut objective = CenteredObjective { x: &standardized };
    let tol = Tolerance {
        ftol: options.ftol,
        gtol: 1e-9,
        max_iter: options.max_iter,
    };

    let starts: Vec<[f64; 3]> = match options.start {
        StartStrategy::MultiStart => {
            let mom = to_theta(0.0, 1.0, m.skewness);
            let mut starts = vec![mom, [0.0, 0.0, 0.0], [0.0, 0.0, -mom[2]]];
            starts.dedup_by(|a, b| a == b);
            if starts.len() == 3 && starts[0] == starts[2] {
                starts.pop();
            }
            starts
        }
        StartStrategy::Warm(p) => {
            let st = if p.is_valid() {
                to_theta((p.mean() - m.mean) / m.sd, p.sd() / m.sd, p.skewness())
            } else {
                to_theta(0.0, 1.0, m.skewness)
            };
            vec![st]
        }
    };

    let mut best: Option<(optim::Minimum, DirectDetail)> = None;
    for start in &starts {
        let mut result = optim::bfgs(&mut objective, start, tol);
        if !result.converged || !result.value.is_finite() {
            let polished = optim::nelder_mead(
                |x| objective.value(x),
                &result.x,
                &[0.1, 0.1, 0.2],
                tol,
            );
            if polished.value <= result.value || !result.value.is_finite() {
                result = polished;
            }
        }
        let Some(d) = CenteredObjective::direct(&result.x) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some((b, bd)) => {
                let scale = b.value.abs().max(1.0);
                if (result.value - b.value).abs() <= options.ftol * scale {
                    d.shape.abs() < bd.shape.abs()
                } else {
                    result.value < b.value
                }
            }
        };
        if better {
            best = Some((result, d));
        }
    }

    let normal = normal_fit(values, &m);
    let normal_ll = normal.loglik;

    let Some((min, d)) = best else {
        return Ok(finish_normal(values, normal, options));
    };
    let loglik = -min.value * n as f64 - n as f64 * m.sd.ln();
    let diverged = d.shape.abs() > options.shape_cap;
    let no_gain = loglik - normal_ll <= options.ftol * normal_ll.abs().max(1.0);
    if diverged || no_gain || !loglik.is_finite() {
        return Ok(finish_normal(values, normal, options));
    }

    let params = SnParams {
        location: m.mean + m.sd * d.location,
        scale: m.sd * d.scale,
        shape: d.shape,
        n_fit: n,
        converged: min.converged,
        loglik,
        fallback: false,
    };
    let information = if options.compute_information {
        observed_information(values, &params, InfoCoords::Centered).ok()
    } else {
        None
    };
    Ok(SnFit {
        params,
        information,
    })
}

fn normal_fit(values: &[f64], m: &Moments) -> SnParams {
    let n = values.len();
    let p = SnParams {
        location: m.mean,
        scale: m.sd,
        shape: 0.0,
        n_fit: n,
        converged: true,
        loglik: 0.0,
        fallback: true,
    };
    SnParams {
        loglik: sn_loglik(values, &p),
        ..p
    }
}

fn finish_normal(values: &[f64], params: SnParams, options: &FitOptions) -> SnFit {
    let information = if options.compute_information {
        observed_information(values, &params, InfoCoords::DirectNormal).ok()
    } else {
        None
    };
    SnFit {
        params,
        information,
    }
}

/// Parameter vector of `p` in the given coordinates.
fn coords_of(p: &SnParams, coords: InfoCoords) -> Vec<f64> {
    match coords {
        InfoCoords::Direct => vec![p.location, p.scale, p.shape],
        InfoCoords::DirectNormal => vec![p.location, p.scale],
        InfoCoords::Centered => {
            let t = to_theta(p.mean(), p.sd(), p.skewness());
            // Recover t without the clamp used for starting values.
            let ratio = p.skewness() / max_skewness();
            vec![t[0], t[1], ratio.atanh()]
        }
    }
}

fn params_from(coords: InfoCoords, v: &[f64], template: &SnParams) -> Option<SnParams> {
    let (location, scale, shape) = match coords {
        InfoCoords::Direct => (v[0], v[1], v[2]),
        InfoCoords::DirectNormal => (v[0], v[1], 0.0),
        InfoCoords::Centered => {
            centered_to_direct(v[0], v[1].exp(), max_skewness() * v[2].tanh())?
        }
    };
    let p = SnParams {
        location,
        scale,
        shape,
        ..*template
    };
    p.is_valid().then_some(p)
}

fn step_sizes(p: &SnParams, coords: InfoCoords, rel: f64) -> Vec<f64> {
    match coords {
        InfoCoords::Direct => vec![rel * p.scale, rel * p.scale, rel * (1.0 + p.shape.abs())],
        InfoCoords::DirectNormal => vec![rel * p.scale, rel * p.scale],
        InfoCoords::Centered => vec![rel * p.sd(), rel, rel],
    }
}

/// Observed information (negative Hessian of the log-likelihood) at `p`.
///
/// Closed form for [`InfoCoords::DirectNormal`]; otherwise central second
/// differences of the log-likelihood with relative step 1e-4.
pub fn observed_information(
    values: &[f64],
    p: &SnParams,
    coords: InfoCoords,
) -> Result<ObservedInformation> {
    if !p.is_valid() {
        return Err(Error::SingularInformation);
    }
    if coords == InfoCoords::DirectNormal {
        let n = values.len() as f64;
        let s = p.scale;
        let (s1, s2) = values.iter().fold((0.0, 0.0), |(a, b), &x| {
            let d = x - p.location;
            (a + d, b + d * d)
        });
        let i_mm = n / (s * s);
        let i_ms = 2.0 * s1 / s.powi(3);
        let i_ss = -n / (s * s) + 3.0 * s2 / s.powi(4);
        return Ok(ObservedInformation {
            coords,
            matrix: DMatrix::from_row_slice(2, 2, &[i_mm, i_ms, i_ms, i_ss]),
        });
    }

    let center = coords_of(p, coords);
    let h = step_sizes(p, coords, 1e-4);
    let dim = center.len();
    let ll = |v: &[f64]| -> f64 {
        match params_from(coords, v, p) {
            Some(q) => sn_loglik(values, &q),
            None => f64::NAN,
        }
    };
    let f0 = ll(&center);
    let mut m = DMatrix::zeros(dim, dim);
    let mut probe = center.clone();
    for i in 0..dim {
        probe[i] = center[i] + h[i];
        let fp = ll(&probe);
        probe[i] = center[i] - h[i];
        let fm = ll(&probe);
        probe[i] = center[i];
        m[(i, i)] = -(fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                probe[i] = center[i] + si * h[i];
                probe[j] = center[j] + sj * h[j];
                let v = ll(&probe);
                probe[i] = center[i];
                probe[j] = center[j];
                v
            };
            let fpp = corner(1.0, 1.0);
            let fpm = corner(1.0, -1.0);
            let fmp = corner(-1.0, 1.0);
            let fmm = corner(-1.0, -1.0);
            let v = -(fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularInformation);
    }
    Ok(ObservedInformation { coords, matrix: m })
}

/// `P(Y > cutpoint)` under the fitted law, with both standard errors.
pub fn exceedance(fit: &SnFit, cutpoint: f64) -> ExceedanceEstimate {
    let p = &fit.params;
    let se_delta = fit
        .information
        .as_ref()
        .and_then(|info| se_full_delta(p, cutpoint, info).ok());
    ExceedanceEstimate {
        prob: sn_sf(cutpoint, p),
        se_paper: se_paper_delta(p, cutpoint).ok(),
        se_delta,
        cutpoint,
        params: *p,
    }
}

/// The closed-form expression `(2/√π)·φ(z₀)·Φ(α z₀)` as printed, with no
/// dependence on sample size.
pub fn se_paper_delta_verbatim(p: &SnParams, cutpoint: f64) -> f64 {
    let z = p.standardize(cutpoint);
    2.0 / std::f64::consts::PI.sqrt() * norm_pdf(z) * norm_cdf(p.shape * z)
}

/// Closed-form delta standard error of the exceedance probability, scaled by `1/√n_fit`.
pub fn se_paper_delta(p: &SnParams, cutpoint: f64) -> Result<f64> {
    if p.n_fit == 0 {
        return Err(Error::MissingSampleSize);
    }
    Ok(se_paper_delta_verbatim(p, cutpoint) / (p.n_fit as f64).sqrt())
}

/// Delta-method standard error `√(gᵀ I⁻¹ g)` of `P(Y > cutpoint)`.
///
/// `g` is the gradient of the exceedance probability in the coordinates of
/// `info`, by central differences with relative step 1e-6 (closed form for
/// [`InfoCoords::DirectNormal`]).
pub fn se_full_delta(p: &SnParams, cutpoint: f64, info: &ObservedInformation) -> Result<f64> {
    let coords = info.coords;
    let dim = coords.dim();
    if info.matrix.nrows() != dim || info.matrix.ncols() != dim {
        return Err(Error::SingularInformation);
    }
    let grad: Vec<f64> = if coords == InfoCoords::DirectNormal {
        let z = p.standardize(cutpoint);
        let dens = norm_pdf(z);
        vec![dens / p.scale, dens * z / p.scale]
    } else {
        let center = coords_of(p, coords);
        let h = step_sizes(p, coords, 1e-6);
        let prob = |v: &[f64]| params_from(coords, v, p).map(|q| sn_sf(cutpoint, &q));
        let mut g = Vec::with_capacity(dim);
        let mut probe = center.clone();
        for i in 0..dim {
            probe[i] = center[i] + h[i];
            let fp = prob(&probe).ok_or(Error::SingularInformation)?;
            probe[i] = center[i] - h[i];
            let fm = prob(&probe).ok_or(Error::SingularInformation)?;
            probe[i] = center[i];
            g.push((fp - fm) / (2.0 * h[i]));
        }
        g
    };
    let g = DVector::from_vec(grad);
    let chol = info
        .matrix
        .clone()
        .cholesky()
        .ok_or(Error::SingularInformation)?;
    let v = chol.solve(&g);
    let var = g.dot(&v);
    if !(var >= 0.0) || !var.is_finite() {
        return Err(Error::SingularInformation);
    }
    Ok(var.sqrt())
}
