//! Risk sets, the distributional product-limit estimator, classical
//! Kaplan-Meier, and their standard errors.
//!
//! An event at time `t` is an observed value above the cut-point. A subject is
//! at risk at `t` while observed without interruption since entry and with
//! every earlier value at or below the cut-point.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::LongDataset;
use crate::error::{Error, Result};
use crate::seeds::{derive_seed, rng_from, TAG_BOOTSTRAP};
use crate::skewnormal::{self, FitOptions, SnParams, StartStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSet {
    pub time_index: u32,
    pub values: Vec<f64>,
    pub subject_ids: Vec<String>,
}

impl RiskSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_events(&self, cutpoint: f64) -> usize {
        self.values.iter().filter(|&&v| v > cutpoint).count()
    }
}

/// The `(time, value)` pairs during which a subject is at risk: the first
/// uninterrupted run of observations, up to and including the first event.
fn at_risk_window(obs: &[(u32, f64)], cutpoint: f64) -> &[(u32, f64)] {
    let Some(&(first, _)) = obs.first() else {
        return obs;
    };
    let mut end = 0;
    for (i, &(t, v)) in obs.iter().enumerate() {
        if t != first + i as u32 {
            break;
        }
        end = i + 1;
        if v > cutpoint {
            break;
        }
    }
    &obs[..end]
}

/// One risk set per time index from 1 to the last observed time.
pub fn build_risk_sets(data: &LongDataset, cutpoint: f64) -> Result<Vec<RiskSet>> {
    let max_time = data.max_time().ok_or(Error::EmptyDataset)?;
    let mut sets: Vec<RiskSet> = (1..=max_time)
        .map(|t| RiskSet {
            time_index: t,
            values: Vec::new(),
            subject_ids: Vec::new(),
        })
        .collect();
    for s in &data.subjects {
        for &(t, v) in at_risk_window(&s.observations, cutpoint) {
            let set = &mut sets[t as usize - 1];
            set.values.push(v);
            set.subject_ids.push(s.id.clone());
        }
    }
    Ok(sets)
}

/// How the per-interval survival factor is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalModel {
    /// Probability of not exceeding the cut-point under a skew-normal fit to the risk set.
    #[default]
    SkewNormal,
    /// Observed proportion without an event; reproduces Kaplan-Meier.
    Empirical,
}

/// Which standard errors to compute.
///
/// `se_dist` uses the closed-form per-interval SE under `PaperDelta` and the
/// observed-information delta SE otherwise. `se_dist_paper` is always filled;
/// `se_boot` only under `Bootstrap` and `All`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeMode {
    PaperDelta,
    FullDelta,
    Bootstrap,
    #[default]
    All,
}

impl SeMode {
    pub fn wants_bootstrap(self) -> bool {
        matches!(self, SeMode::Bootstrap | SeMode::All)
    }

    fn wants_information(self) -> bool {
        self != SeMode::PaperDelta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub cutpoint: f64,
    pub min_n_fit: usize,
    pub bootstrap_reps: usize,
    pub se_mode: SeMode,
    pub seed: u64,
    pub interval_model: IntervalModel,
    /// Start estimation at time 2; used after excluding baseline events.
    pub skip_baseline: bool,
    pub fit: FitOptions,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            cutpoint: 0.0,
            min_n_fit: 20,
            bootstrap_reps: 500,
            se_mode: SeMode::All,
            seed: 0,
            interval_model: IntervalModel::SkewNormal,
            skip_baseline: false,
            fit: FitOptions::default(),
        }
    }
}

impl EstimatorOptions {
    pub fn validate(&self) -> Result<()> {
        if !self.cutpoint.is_finite() {
            return Err(Error::config("cutpoint", "must be finite"));
        }
        let floor = match self.interval_model {
            IntervalModel::SkewNormal => 3,
            IntervalModel::Empirical => 1,
        };
        if self.min_n_fit < floor {
            return Err(Error::config(
                "min_n_fit",
                format!("must be at least {floor}, got {}", self.min_n_fit),
            ));
        }
        if self.bootstrap_reps < 1 && self.se_mode.wants_bootstrap() {
            return Err(Error::config("bootstrap_reps", "must be at least 1"));
        }
        Ok(())
    }

    fn first_time(&self) -> u32 {
        if self.skip_baseline {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Distributional,
    KaplanMeier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub time: u32,
    pub n_risk: usize,
    pub n_event: usize,
    /// Observations used to estimate the survival factor.
    pub n_est: usize,
    /// Distributional curves: the factor was estimated. Kaplan-Meier curves:
    /// at least one event occurred, so the estimate changes here.
    pub estimable: bool,
    pub p_hat: Option<f64>,
    pub s_hat: Option<f64>,
    pub se_p: Option<f64>,
    /// Greenwood-type standard error of `s_hat` (the classical one for Kaplan-Meier).
    pub se_dist: Option<f64>,
    pub se_dist_paper: Option<f64>,
    pub se_boot: Option<f64>,
    /// Bootstrap replicates that produced an estimate here.
    pub n_boot: usize,
    pub fit: Option<SnParams>,
}

impl CurvePoint {
    fn empty(time: u32, n_risk: usize, n_event: usize) -> Self {
        Self {
            time,
            n_risk,
            n_event,
            n_est: n_risk,
            estimable: false,
            p_hat: None,
            s_hat: None,
            se_p: None,
            se_dist: None,
            se_dist_paper: None,
            se_boot: None,
            n_boot: 0,
            fit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub estimator: Estimator,
    pub cutpoint: f64,
    pub points: Vec<CurvePoint>,
}

impl SurvivalCurve {
    pub fn point(&self, time: u32) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.time == time)
    }

    /// Number of points with an emitted estimate.
    pub fn n_estimated(&self) -> usize {
        self.points.iter().filter(|p| p.estimable).count()
    }
}

/// `SE(Ŝ(tᵢ)) = Ŝ(tᵢ)·√(Σ_{j≤i} se_j² / p_j²)` for survival factors `p`.
///
/// Factors equal to 1 contribute nothing. A zero factor, or a missing or
/// non-finite SE, leaves the result undefined from that point on.
pub fn greenwood_dist(p_hats: &[f64], se_p_hats: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut s = 1.0;
    let mut sum = Some(0.0);
    p_hats
        .iter()
        .zip(se_p_hats)
        .map(|(&p, &se)| {
            s *= p;
            sum = match (sum, se) {
                (Some(acc), Some(se)) if se.is_finite() && p > 0.0 => {
                    if p >= 1.0 {
                        Some(acc)
                    } else {
                        Some(acc + (se / p).powi(2))
                    }
                }
                _ => None,
            };
            sum.map(|acc| s * acc.sqrt())
        })
        .collect()
}

/// One estimated factor with its standard errors.
struct Factor {
    p: f64,
    se_full: Option<f64>,
    se_paper: Option<f64>,
    fit: Option<SnParams>,
}

fn estimate_factor(
    values: &[f64],
    opts: &EstimatorOptions,
    fit_options: &FitOptions,
) -> Option<Factor> {
    match opts.interval_model {
        IntervalModel::Empirical => {
            let n = values.len() as f64;
            let d = values.iter().filter(|&&v| v > opts.cutpoint).count() as f64;
            let p = 1.0 - d / n;
            let se = (p * (1.0 - p) / n).sqrt();
            Some(Factor {
                p,
                se_full: Some(se),
                se_paper: Some(se),
                fit: None,
            })
        }
        IntervalModel::SkewNormal => {
            let fit = skewnormal::fit_sn(values, fit_options).ok()?;
            // The survival factor is the probability of staying at or below the
            // cut-point; it shares its standard errors with the exceedance probability.
            let e = skewnormal::exceedance(&fit, opts.cutpoint);
            Some(Factor {
                p: skewnormal::sn_cdf(opts.cutpoint, &fit.params),
                se_full: e.se_delta,
                se_paper: e.se_paper,
                fit: Some(fit.params),
            })
        }
    }
}

/// Distributional product-limit estimate of the survival function.
///
/// The chain stops at the first time whose risk set is smaller than
/// `min_n_fit` or whose fit fails; later points are reported as not estimable.
pub fn dkm_curve(data: &LongDataset, opts: &EstimatorOptions) -> Result<SurvivalCurve> {
    opts.validate()?;
    let sets = build_risk_sets(data, opts.cutpoint)?;
    let mut curve = dkm_from_risk_sets(&sets, opts)?;
    if opts.se_mode.wants_bootstrap() {
        let boot = bootstrap_points(data, opts, &curve)?;
        for (point, b) in curve.points.iter_mut().zip(boot) {
            if point.estimable {
                point.se_boot = b.se;
                point.n_boot = b.n_ok;
            }
        }
    }
    Ok(curve)
}

/// [`dkm_curve`] on precomputed risk sets, without bootstrap.
pub fn dkm_from_risk_sets(sets: &[RiskSet], opts: &EstimatorOptions) -> Result<SurvivalCurve> {
    let fit_options = FitOptions {
        compute_information: opts.se_mode.wants_information(),
        ..opts.fit
    };
    let mut points = Vec::new();
    let mut factors = Vec::new();
    let mut running = true;
    for set in sets.iter().filter(|s| s.time_index >= opts.first_time()) {
        let mut point = CurvePoint::empty(set.time_index, set.len(), set.n_events(opts.cutpoint));
        if running && set.len() >= opts.min_n_fit {
            if let Some(f) = estimate_factor(&set.values, opts, &fit_options) {
                point.estimable = true;
                point.p_hat = Some(f.p);
                point.fit = f.fit;
                point.se_p = match opts.se_mode {
                    SeMode::PaperDelta => f.se_paper,
                    _ => f.se_full,
                };
                factors.push(f);
            }
        }
        running = point.estimable;
        points.push(point);
    }
    if factors.is_empty() {
        return Err(Error::NoEstimableTimePoints {
            min_n: opts.min_n_fit,
        });
    }

    let p: Vec<f64> = factors.iter().map(|f| f.p).collect();
    let chosen: Vec<Option<f64>> = points.iter().filter(|p| p.estimable).map(|p| p.se_p).collect();
    let paper: Vec<Option<f64>> = factors.iter().map(|f| f.se_paper).collect();
    let se_dist = greenwood_dist(&p, &chosen);
    let se_paper = greenwood_dist(&p, &paper);
    let mut s = 1.0;
    for (i, point) in points.iter_mut().filter(|p| p.estimable).enumerate() {
        s *= p[i];
        point.s_hat = Some(s);
        point.se_dist = se_dist[i];
        point.se_dist_paper = se_paper[i];
    }
    Ok(SurvivalCurve {
        estimator: Estimator::Distributional,
        cutpoint: opts.cutpoint,
        points,
    })
}

/// Classical Kaplan-Meier estimate with Greenwood standard errors, from time 1.
pub fn km_classic(data: &LongDataset, cutpoint: f64) -> Result<SurvivalCurve> {
    let sets = build_risk_sets(data, cutpoint)?;
    Ok(km_from_risk_sets(&sets, cutpoint, 1))
}

/// Kaplan-Meier on precomputed risk sets starting at `first_time`.
///
/// `s_hat` is carried flat through event-free times and undefined once the
/// risk set is empty.
pub fn km_from_risk_sets(sets: &[RiskSet], cutpoint: f64, first_time: u32) -> SurvivalCurve {
    let mut s = 1.0;
    let mut sum = 0.0;
    let mut alive = true;
    let points = sets
        .iter()
        .filter(|set| set.time_index >= first_time)
        .map(|set| {
            let n = set.len();
            let d = set.n_events(cutpoint);
            let mut point = CurvePoint::empty(set.time_index, n, d);
            if n == 0 {
                alive = false;
            }
            if alive {
                let p = 1.0 - d as f64 / n as f64;
                s *= p;
                if d < n {
                    sum += d as f64 / (n as f64 * (n - d) as f64);
                }
                point.estimable = d > 0;
                point.p_hat = Some(p);
                point.s_hat = Some(s);
                point.se_p = Some((p * (1.0 - p) / n as f64).sqrt());
                point.se_dist = if s > 0.0 { Some(s * sum.sqrt()) } else { None };
            }
            point
        })
        .collect();
    SurvivalCurve {
        estimator: Estimator::KaplanMeier,
        cutpoint,
        points,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPoint {
    pub time: u32,
    /// Standard deviation of replicate estimates (divisor `n_ok − 1`; 0 when `n_ok` is 1).
    pub se: Option<f64>,
    pub n_ok: usize,
}

/// Subject-level bootstrap standard errors of the distributional estimate.
///
/// Replicate `b` resamples whole subjects with a stream seeded from
/// `(opts.seed, b)`, so the result does not depend on how replicates are
/// scheduled across threads.
pub fn bootstrap_se(data: &LongDataset, opts: &EstimatorOptions) -> Result<Vec<BootstrapPoint>> {
    opts.validate()?;
    if opts.bootstrap_reps < 1 {
        return Err(Error::config("bootstrap_reps", "must be at least 1"));
    }
    let sets = build_risk_sets(data, opts.cutpoint)?;
    let template = dkm_from_risk_sets(&sets, &EstimatorOptions { se_mode: SeMode::PaperDelta, ..*opts }).ok();
    let points = run_bootstrap(data, opts, template.as_ref())?;
    if points.iter().all(|p| p.n_ok == 0) {
        return Err(Error::AllReplicatesFailed {
            time: points.first().map_or(opts.first_time(), |p| p.time),
        });
    }
    Ok(points)
}

fn bootstrap_points(
    data: &LongDataset,
    opts: &EstimatorOptions,
    curve: &SurvivalCurve,
) -> Result<Vec<BootstrapPoint>> {
    run_bootstrap(data, opts, Some(curve))
}

fn run_bootstrap(
    data: &LongDataset,
    opts: &EstimatorOptions,
    template: Option<&SurvivalCurve>,
) -> Result<Vec<BootstrapPoint>> {
    let max_time = data.max_time().ok_or(Error::EmptyDataset)?;
    let first = opts.first_time();
    let times: Vec<u32> = (first..=max_time).collect();
    let windows: Vec<&[(u32, f64)]> = data
        .subjects
        .iter()
        .map(|s| at_risk_window(&s.observations, opts.cutpoint))
        .collect();
    let n = windows.len();
    // Replicates refit from the original estimates and skip the information matrix.
    let warm: Vec<Option<SnParams>> = times
        .iter()
        .map(|&t| template.and_then(|c| c.point(t)).and_then(|p| p.fit))
        .collect();
    let rep_opts = EstimatorOptions {
        se_mode: SeMode::PaperDelta,
        ..*opts
    };

    let replicates: Vec<Vec<Option<f64>>> = (0..opts.bootstrap_reps as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = rng_from(derive_seed(opts.seed, &[TAG_BOOTSTRAP, b]));
            let mut per_time: Vec<Vec<f64>> = vec![Vec::new(); times.len()];
            for _ in 0..n {
                for &(t, v) in windows[rng.random_range(0..n)] {
                    if t >= first {
                        per_time[(t - first) as usize].push(v);
                    }
                }
            }
            let mut s = 1.0;
            let mut out = vec![None; times.len()];
            for (k, values) in per_time.iter().enumerate() {
                if values.len() < opts.min_n_fit {
                    break;
                }
                let fit_options = FitOptions {
                    compute_information: false,
                    start: warm[k].map_or(StartStrategy::MultiStart, StartStrategy::Warm),
                    ..opts.fit
                };
                let Some(f) = estimate_factor(values, &rep_opts, &fit_options) else {
                    break;
                };
                s *= f.p;
                out[k] = Some(s);
            }
            out
        })
        .collect();

    Ok(times
        .iter()
        .enumerate()
        .map(|(k, &time)| {
            let xs: Vec<f64> = replicates.iter().filter_map(|r| r[k]).collect();
            BootstrapPoint {
                time,
                se: sample_sd(&xs),
                n_ok: xs.len(),
            }
        })
        .collect())
}

/// Sample standard deviation with divisor `n − 1`; 0 for a single value.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    match xs.len() {
        0 => None,
        1 => Some(0.0),
        n => {
            let mean = xs.iter().sum::<f64>() / n as f64;
            let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
            Some((ss / (n - 1) as f64).sqrt())
        }
    }
}
