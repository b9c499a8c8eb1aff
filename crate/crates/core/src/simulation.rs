//! Monte Carlo comparison of the distributional and Kaplan-Meier estimators
//! on repeat-truncated multivariate normal series.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{LongDataset, SubjectSeries};
use crate::error::{Error, Result};
use crate::seeds::{derive_seed, fingerprint, rng_from, TAG_BOOTSTRAP, TAG_REFERENCE, TAG_SIMULATION};
use crate::survival::{self, EstimatorOptions, SurvivalCurve};

pub const N_TIMES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanProfile {
    NoChange,
    ConstantIncrease,
    Custom(Vec<f64>),
}

impl MeanProfile {
    pub fn values(&self) -> Vec<f64> {
        match self {
            MeanProfile::NoChange => vec![0.0; N_TIMES],
            MeanProfile::ConstantIncrease => (0..N_TIMES).map(|i| i as f64 / 10.0).collect(),
            MeanProfile::Custom(v) => v.clone(),
        }
    }

    pub fn label(&self) -> &str {
        match self {
            MeanProfile::NoChange => "no_change",
            MeanProfile::ConstantIncrease => "constant_increase",
            MeanProfile::Custom(_) => "custom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrStructure {
    /// Every pair of time points has the same correlation.
    #[default]
    Exchangeable,
    /// Correlation `ρ^|i−j|`.
    Ar1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub means: MeanProfile,
    pub correlation: f64,
    #[serde(default)]
    pub corr_structure: CorrStructure,
    pub n: usize,
    pub cutpoint: f64,
    pub n_datasets: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let means = self.means.values();
        if means.is_empty() || means.iter().any(|m| !m.is_finite()) {
            return Err(Error::config("means", "need at least one finite mean"));
        }
        if !(self.correlation > -1.0 && self.correlation < 1.0) {
            return Err(Error::config(
                "correlation",
                format!("must lie in (-1, 1), got {}", self.correlation),
            ));
        }
        if self.n < 2 {
            return Err(Error::config("n", format!("must be at least 2, got {}", self.n)));
        }
        if !self.cutpoint.is_finite() {
            return Err(Error::config("cutpoint", "must be finite"));
        }
        if self.n_datasets < 1 {
            return Err(Error::config("n_datasets", "must be at least 1"));
        }
        Ok(())
    }

    pub fn n_times(&self) -> usize {
        self.means.values().len()
    }

    /// Stable identifier of the data-generating law and sample size.
    pub fn id(&self) -> u64 {
        let mut words = vec![self.n as u64, self.correlation.to_bits(), self.cutpoint.to_bits()];
        words.push(self.corr_structure as u64);
        words.extend(self.means.values().iter().map(|m| m.to_bits()));
        fingerprint(words)
    }

    /// Identifier of the law alone; scenarios differing only in `n` share references.
    fn reference_id(&self) -> u64 {
        Scenario { n: 0, ..self.clone() }.id()
    }
}

pub fn correlation_matrix(k: usize, rho: f64, structure: CorrStructure) -> DMatrix<f64> {
    DMatrix::from_fn(k, k, |i, j| match (i == j, structure) {
        (true, _) => 1.0,
        (false, CorrStructure::Exchangeable) => rho,
        (false, CorrStructure::Ar1) => rho.powi(i.abs_diff(j) as i32),
    })
}

/// Lower Cholesky factor of the scenario's correlation matrix.
pub fn correlation_factor(scenario: &Scenario) -> Result<DMatrix<f64>> {
    let sigma = correlation_matrix(scenario.n_times(), scenario.correlation, scenario.corr_structure);
    sigma
        .cholesky()
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite)
}

/// `n × k` draws (row-major) from `N(means, Σ)`.
fn draw_mvn<R: Rng>(rng: &mut R, means: &[f64], l: &DMatrix<f64>, n: usize) -> Vec<f64> {
    let k = means.len();
    let mut z = vec![0.0; k];
    let mut out = Vec::with_capacity(n * k);
    for _ in 0..n {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        for i in 0..k {
            let mut x = means[i];
            for j in 0..=i {
                x += l[(i, j)] * z[j];
            }
            out.push(x);
        }
    }
    out
}

/// Row-major `n × k` matrix of one simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesMatrix {
    pub n: usize,
    pub k: usize,
    pub data: Vec<f64>,
}

impl SeriesMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }
}

/// Dataset `dataset_index` of the scenario; a pure function of the seed and index.
pub fn sample_mvn_series(scenario: &Scenario, dataset_index: u64) -> Result<SeriesMatrix> {
    scenario.validate()?;
    let l = correlation_factor(scenario)?;
    Ok(sample_with_factor(scenario, &l, dataset_index))
}

fn sample_with_factor(scenario: &Scenario, l: &DMatrix<f64>, dataset_index: u64) -> SeriesMatrix {
    let means = scenario.means.values();
    let seed = derive_seed(scenario.seed, &[TAG_SIMULATION, scenario.id(), dataset_index]);
    let mut rng = rng_from(seed);
    SeriesMatrix {
        n: scenario.n,
        k: means.len(),
        data: draw_mvn(&mut rng, &means, l, scenario.n),
    }
}

/// Drop every value after a subject's first exceedance; the exceeding value is kept.
pub fn apply_repeat_truncation(series: &SeriesMatrix, cutpoint: f64) -> LongDataset {
    let subjects = (0..series.n)
        .map(|i| {
            let mut observations = Vec::new();
            for (t, &v) in series.row(i).iter().enumerate() {
                observations.push((t as u32 + 1, v));
                if v > cutpoint {
                    break;
                }
            }
            SubjectSeries {
                id: (i + 1).to_string(),
                observations,
            }
        })
        .collect();
    LongDataset {
        subjects,
        n_missing: 0,
        units: None,
        cutpoint_hint: Some(cutpoint),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptions {
    pub big_n: usize,
    pub reps: usize,
}

impl ReferenceOptions {
    /// Desk-scale default.
    pub const DESK: Self = Self {
        big_n: 80_000,
        reps: 50,
    };
    /// The full-size reference protocol.
    pub const PAPER: Self = Self {
        big_n: 80_000,
        reps: 500,
    };

    pub fn validate(&self) -> Result<()> {
        if self.reps < 1 {
            return Err(Error::config("reps", "must be at least 1"));
        }
        if self.big_n < 1 {
            return Err(Error::config("big_n", "must be at least 1"));
        }
        Ok(())
    }
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self::DESK
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub time: u32,
    pub s_ref: Option<f64>,
    /// Replicates with a nonempty risk set at this time.
    pub n_used: usize,
    pub mean_n_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceCurve {
    pub big_n: usize,
    pub reps: usize,
    pub points: Vec<ReferencePoint>,
}

impl ReferenceCurve {
    pub fn s_ref(&self, time: u32) -> Option<f64> {
        self.points
            .get(time as usize - 1)
            .and_then(|p| p.s_ref)
    }
}

/// Kaplan-Meier counts for fully followed series: the number at risk and
/// with an event at each time.
fn truncated_counts(series: &SeriesMatrix, cutpoint: f64) -> (Vec<usize>, Vec<usize>) {
    let mut at_risk = vec![0; series.k];
    let mut events = vec![0; series.k];
    for i in 0..series.n {
        for (t, &v) in series.row(i).iter().enumerate() {
            at_risk[t] += 1;
            if v > cutpoint {
                events[t] += 1;
                break;
            }
        }
    }
    (at_risk, events)
}

/// Mean Kaplan-Meier curve over `reps` large samples.
pub fn reference_curve(scenario: &Scenario, options: ReferenceOptions) -> Result<ReferenceCurve> {
    scenario.validate()?;
    options.validate()?;
    let l = correlation_factor(scenario)?;
    let means = scenario.means.values();
    let k = means.len();
    let key = scenario.reference_id();
    let per_rep: Vec<(Vec<Option<f64>>, Vec<usize>)> = (0..options.reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from(derive_seed(scenario.seed, &[TAG_REFERENCE, key, r]));
            let series = SeriesMatrix {
                n: options.big_n,
                k,
                data: draw_mvn(&mut rng, &means, &l, options.big_n),
            };
            let (at_risk, events) = truncated_counts(&series, scenario.cutpoint);
            let mut s = 1.0;
            let curve = at_risk
                .iter()
                .zip(&events)
                .map(|(&n, &d)| {
                    (n > 0).then(|| {
                        s *= 1.0 - d as f64 / n as f64;
                        s
                    })
                })
                .collect();
            (curve, at_risk)
        })
        .collect();

    let points = (0..k)
        .map(|t| {
            let vals: Vec<f64> = per_rep.iter().filter_map(|(c, _)| c[t]).collect();
            let risk: f64 = per_rep.iter().map(|(_, n)| n[t] as f64).sum();
            ReferencePoint {
                time: t as u32 + 1,
                s_ref: (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64),
                n_used: vals.len(),
                mean_n_risk: risk / per_rep.len() as f64,
            }
        })
        .collect();
    Ok(ReferenceCurve {
        big_n: options.big_n,
        reps: options.reps,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    /// The cut-point is taken from each scenario.
    pub estimator: EstimatorOptions,
    pub reference: ReferenceOptions,
    pub keep_replicates: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            estimator: EstimatorOptions::default(),
            reference: ReferenceOptions::default(),
            keep_replicates: true,
        }
    }
}

/// One estimator's output for one simulated dataset and time point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub scenario_id: u64,
    pub dataset: u64,
    pub time: u32,
    pub estimator: survival::Estimator,
    pub n_risk: usize,
    pub n_event: usize,
    pub n_est: usize,
    pub estimable: bool,
    pub s_hat: Option<f64>,
    pub se: Option<f64>,
    pub se_boot: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario_id: u64,
    pub means: String,
    pub correlation: f64,
    pub n: usize,
    pub cutpoint: f64,
    pub time: u32,
    pub s_ref: Option<f64>,
    pub n_datasets: usize,
    pub bias: Option<f64>,
    pub mse: Option<f64>,
    pub sd_est: Option<f64>,
    pub mean_se_dist: Option<f64>,
    pub mean_se_boot: Option<f64>,
    pub ratio_se_dist: Option<f64>,
    pub ratio_se_boot: Option<f64>,
    pub coverage_dist: Option<f64>,
    pub coverage_boot: Option<f64>,
    pub n_missing_dist: usize,
    pub n_missing_km: usize,
    pub sd_km: Option<f64>,
    pub ratio_sd_dist_km: Option<f64>,
    pub mean_n_est: Option<f64>,
    /// Smallest sample behind any emitted distributional estimate.
    pub min_n_est: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: Scenario,
    pub reference: ReferenceCurve,
    pub metrics: Vec<MetricsRow>,
    pub replicates: Vec<ReplicateRow>,
    /// Datasets on which the distributional estimator produced nothing.
    pub n_failed: usize,
}

const Z95: f64 = 1.959_963_984_540_054;

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Normal-theory 95% interval clipped to [0, 1].
fn covers(s: f64, se: f64, target: f64) -> bool {
    let lo = (s - Z95 * se).max(0.0);
    let hi = (s + Z95 * se).min(1.0);
    lo <= target && target <= hi
}

/// Both curves for one dataset, or `None` for the distributional one if nothing was estimable.
fn estimate_dataset(
    scenario: &Scenario,
    l: &DMatrix<f64>,
    d: u64,
    opts: &EstimatorOptions,
) -> (Option<SurvivalCurve>, SurvivalCurve) {
    let series = sample_with_factor(scenario, l, d);
    let data = apply_repeat_truncation(&series, scenario.cutpoint);
    let est = EstimatorOptions {
        cutpoint: scenario.cutpoint,
        seed: derive_seed(scenario.seed, &[TAG_BOOTSTRAP, scenario.id(), d]),
        ..*opts
    };
    let dkm = survival::dkm_curve(&data, &est).ok();
    let sets = survival::build_risk_sets(&data, scenario.cutpoint).expect("simulated data is nonempty");
    let km = survival::km_from_risk_sets(&sets, scenario.cutpoint, 1);
    (dkm, km)
}

fn aggregate(
    scenario: &Scenario,
    reference: &ReferenceCurve,
    curves: &[(Option<SurvivalCurve>, SurvivalCurve)],
) -> Vec<MetricsRow> {
    let k = scenario.n_times();
    (1..=k as u32)
        .map(|t| {
            let s_ref = reference.s_ref(t);
            let mut est = Vec::new();
            let mut se_d = Vec::new();
            let mut se_b = Vec::new();
            let mut n_est = Vec::new();
            let mut km_vals = Vec::new();
            let mut cov_d = (0usize, 0usize);
            let mut cov_b = (0usize, 0usize);
            let mut n_missing_km = 0;
            for (dkm, km) in curves {
                let kp = km.point(t);
                if kp.is_none_or(|p| !p.estimable) {
                    n_missing_km += 1;
                }
                if let Some(s) = kp.and_then(|p| p.s_hat) {
                    km_vals.push(s);
                }
                let Some(p) = dkm.as_ref().and_then(|c| c.point(t)).filter(|p| p.estimable) else {
                    continue;
                };
                let s = p.s_hat.expect("estimable points carry an estimate");
                est.push(s);
                n_est.push(p.n_est);
                if let Some(se) = p.se_dist {
                    se_d.push(se);
                    if let Some(r) = s_ref {
                        cov_d.1 += 1;
                        cov_d.0 += covers(s, se, r) as usize;
                    }
                }
                if let Some(se) = p.se_boot {
                    se_b.push(se);
                    if let Some(r) = s_ref {
                        cov_b.1 += 1;
                        cov_b.0 += covers(s, se, r) as usize;
                    }
                }
            }
            let sd_est = survival::sample_sd(&est).filter(|_| est.len() > 1);
            let sd_km = survival::sample_sd(&km_vals).filter(|_| km_vals.len() > 1);
            let mean_se_dist = mean(&se_d);
            let mean_se_boot = mean(&se_b);
            let ratio = |num: Option<f64>, den: Option<f64>| match (num, den) {
                (Some(a), Some(b)) if b > 0.0 => Some(a / b),
                _ => None,
            };
            let frac = |(hit, tot): (usize, usize)| (tot > 0).then(|| hit as f64 / tot as f64);
            MetricsRow {
                scenario_id: scenario.id(),
                means: scenario.means.label().to_string(),
                correlation: scenario.correlation,
                n: scenario.n,
                cutpoint: scenario.cutpoint,
                time: t,
                s_ref,
                n_datasets: curves.len(),
                bias: s_ref.and_then(|r| mean(&est).map(|m| m - r)),
                mse: s_ref.and_then(|r| {
                    let sq: Vec<f64> = est.iter().map(|s| (s - r).powi(2)).collect();
                    mean(&sq)
                }),
                sd_est,
                mean_se_dist,
                mean_se_boot,
                ratio_se_dist: ratio(mean_se_dist, sd_est),
                ratio_se_boot: ratio(mean_se_boot, sd_est),
                coverage_dist: frac(cov_d),
                coverage_boot: frac(cov_b),
                n_missing_dist: curves.len() - est.len(),
                n_missing_km,
                sd_km,
                ratio_sd_dist_km: ratio(sd_est, sd_km),
                mean_n_est: mean(&n_est.iter().map(|&n| n as f64).collect::<Vec<_>>()),
                min_n_est: n_est.iter().copied().min(),
            }
        })
        .collect()
}

fn replicate_rows(scenario_id: u64, d: u64, curves: &(Option<SurvivalCurve>, SurvivalCurve)) -> Vec<ReplicateRow> {
    let (dkm, km) = curves;
    dkm.iter()
        .chain(std::iter::once(km))
        .flat_map(|c| {
            c.points.iter().map(move |p| ReplicateRow {
                scenario_id,
                dataset: d,
                time: p.time,
                estimator: c.estimator,
                n_risk: p.n_risk,
                n_event: p.n_event,
                n_est: p.n_est,
                estimable: p.estimable,
                s_hat: p.s_hat,
                se: p.se_dist,
                se_boot: p.se_boot,
            })
        })
        .collect()
}

/// Metrics from saved per-replicate rows; `scenario.n_datasets` is ignored.
pub fn metrics_from_replicates(
    scenario: &Scenario,
    reference: &ReferenceCurve,
    rows: &[ReplicateRow],
) -> Vec<MetricsRow> {
    let mut datasets: Vec<u64> = rows.iter().map(|r| r.dataset).collect();
    datasets.sort_unstable();
    datasets.dedup();
    let curve_of = |d: u64, estimator: survival::Estimator| -> Option<SurvivalCurve> {
        let points: Vec<survival::CurvePoint> = rows
            .iter()
            .filter(|r| r.dataset == d && r.estimator == estimator)
            .map(|r| survival::CurvePoint {
                time: r.time,
                n_risk: r.n_risk,
                n_event: r.n_event,
                n_est: r.n_est,
                estimable: r.estimable,
                p_hat: None,
                s_hat: r.s_hat,
                se_p: None,
                se_dist: r.se,
                se_dist_paper: None,
                se_boot: r.se_boot,
                n_boot: 0,
                fit: None,
            })
            .collect();
        (!points.is_empty()).then_some(SurvivalCurve {
            estimator,
            cutpoint: scenario.cutpoint,
            points,
        })
    };
    let curves: Vec<(Option<SurvivalCurve>, SurvivalCurve)> = datasets
        .iter()
        .map(|&d| {
            let km = curve_of(d, survival::Estimator::KaplanMeier).unwrap_or(SurvivalCurve {
                estimator: survival::Estimator::KaplanMeier,
                cutpoint: scenario.cutpoint,
                points: Vec::new(),
            });
            (curve_of(d, survival::Estimator::Distributional), km)
        })
        .collect();
    let mut metrics = aggregate(scenario, reference, &curves);
    let id = rows.first().map_or(scenario.id(), |r| r.scenario_id);
    for m in &mut metrics {
        m.scenario_id = id;
    }
    metrics
}

/// Simulate, estimate and score one scenario against a precomputed reference.
pub fn run_scenario(
    scenario: &Scenario,
    reference: &ReferenceCurve,
    opts: &SimulationOptions,
) -> Result<ScenarioResult> {
    let mut results = run_cells(std::slice::from_ref(scenario), std::slice::from_ref(reference), opts)?;
    Ok(results.remove(0))
}

fn run_cells(
    scenarios: &[Scenario],
    references: &[ReferenceCurve],
    opts: &SimulationOptions,
) -> Result<Vec<ScenarioResult>> {
    let mut factors = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        s.validate()?;
        factors.push(correlation_factor(s)?);
    }
    EstimatorOptions {
        cutpoint: 0.0,
        ..opts.estimator
    }
    .validate()?;
    let work: Vec<(usize, u64)> = scenarios
        .iter()
        .enumerate()
        .flat_map(|(c, s)| (0..s.n_datasets as u64).map(move |d| (c, d)))
        .collect();
    let mut curves = work
        .par_iter()
        .map(|&(c, d)| estimate_dataset(&scenarios[c], &factors[c], d, &opts.estimator))
        .collect::<Vec<_>>()
        .into_iter();

    Ok(scenarios
        .iter()
        .zip(references)
        .map(|(s, reference)| {
            let cell: Vec<_> = curves.by_ref().take(s.n_datasets).collect();
            let id = s.id();
            let replicates = if opts.keep_replicates {
                cell.iter()
                    .enumerate()
                    .flat_map(|(d, c)| replicate_rows(id, d as u64, c))
                    .collect()
            } else {
                Vec::new()
            };
            ScenarioResult {
                scenario: s.clone(),
                reference: reference.clone(),
                metrics: aggregate(s, reference, &cell),
                replicates,
                n_failed: cell.iter().filter(|(d, _)| d.is_none()).count(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Margin {
    Cutpoint,
    Correlation,
}

/// Means of per-time-point metrics over all cells sharing one level of a factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow {
    pub margin: Margin,
    pub level: f64,
    pub n_rows: usize,
    pub mse: Option<f64>,
    pub coverage_dist: Option<f64>,
    pub coverage_boot: Option<f64>,
    pub ratio_se_dist: Option<f64>,
    pub ratio_se_boot: Option<f64>,
    pub median_ratio_sd_dist_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub scenarios: Vec<ScenarioResult>,
    pub marginals: Vec<MarginalRow>,
}

impl GridResult {
    pub fn metrics(&self) -> impl Iterator<Item = &MetricsRow> + '_ {
        self.scenarios.iter().flat_map(|s| s.metrics.iter())
    }

    pub fn marginal(&self, margin: Margin, level: f64) -> Option<&MarginalRow> {
        self.marginals
            .iter()
            .find(|m| m.margin == margin && m.level == level)
    }
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

pub fn marginals(rows: &[&MetricsRow]) -> Vec<MarginalRow> {
    let mut out = Vec::new();
    for margin in [Margin::Cutpoint, Margin::Correlation] {
        let level_of = |r: &MetricsRow| match margin {
            Margin::Cutpoint => r.cutpoint,
            Margin::Correlation => r.correlation,
        };
        let mut levels: Vec<f64> = rows.iter().map(|r| level_of(r)).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        for level in levels {
            let group: Vec<&&MetricsRow> = rows.iter().filter(|r| level_of(r) == level).collect();
            let avg = |f: fn(&MetricsRow) -> Option<f64>| {
                mean(&group.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            out.push(MarginalRow {
                margin,
                level,
                n_rows: group.len(),
                mse: avg(|r| r.mse),
                coverage_dist: avg(|r| r.coverage_dist),
                coverage_boot: avg(|r| r.coverage_boot),
                ratio_se_dist: avg(|r| r.ratio_se_dist),
                ratio_se_boot: avg(|r| r.ratio_se_boot),
                median_ratio_sd_dist_km: median(
                    &group.iter().filter_map(|r| r.ratio_sd_dist_km).collect::<Vec<_>>(),
                ),
            });
        }
    }
    out
}

/// References for every distinct law in `grid`, computed once each.
pub fn reference_curves(grid: &[Scenario], options: ReferenceOptions) -> Result<Vec<ReferenceCurve>> {
    let mut cache: HashMap<(u64, u64), ReferenceCurve> = HashMap::new();
    let mut out = Vec::with_capacity(grid.len());
    for s in grid {
        let key = (s.reference_id(), s.seed);
        let curve = match cache.entry(key) {
            Entry::Occupied(e) => e.into_mut(),
            Entry::Vacant(e) => e.insert(reference_curve(s, options)?),
        };
        out.push(curve.clone());
    }
    Ok(out)
}

/// Run every scenario of the grid and summarise by cut-point and correlation.
pub fn run_grid(grid: &[Scenario], opts: &SimulationOptions) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(Error::config("grid", "no scenarios"));
    }
    for s in grid {
        s.validate()?;
    }
    let references = reference_curves(grid, opts.reference)?;
    run_grid_with_references(grid, &references, opts)
}

pub fn run_grid_with_references(
    grid: &[Scenario],
    references: &[ReferenceCurve],
    opts: &SimulationOptions,
) -> Result<GridResult> {
    if grid.len() != references.len() {
        return Err(Error::config("references", "one reference per scenario is required"));
    }
    let scenarios = run_cells(grid, references, opts)?;
    let rows: Vec<&MetricsRow> = scenarios.iter().flat_map(|s| s.metrics.iter()).collect();
    let marginals = marginals(&rows);
    Ok(GridResult {
        scenarios,
        marginals,
    })
}

/// Factorial grid specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub means: Vec<MeanProfile>,
    pub sample_sizes: Vec<usize>,
    pub correlations: Vec<f64>,
    pub cutpoints: Vec<f64>,
    pub corr_structure: CorrStructure,
    pub n_datasets: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    /// The full factorial design: 2 mean profiles, 3 sizes, 4 correlations, 4 cut-points.
    fn default() -> Self {
        Self {
            means: vec![MeanProfile::NoChange, MeanProfile::ConstantIncrease],
            sample_sizes: vec![100, 500, 1000],
            correlations: vec![0.95, 0.75, 0.5, 0.2],
            cutpoints: vec![0.0, 0.5, 1.0, 1.5],
            corr_structure: CorrStructure::Exchangeable,
            n_datasets: 500,
            seed: 1,
        }
    }
}

impl GridSpec {
    pub fn expand(&self) -> Result<Vec<Scenario>> {
        let mut grid = Vec::new();
        for means in &self.means {
            for &n in &self.sample_sizes {
                for &correlation in &self.correlations {
                    for &cutpoint in &self.cutpoints {
                        let s = Scenario {
                            means: means.clone(),
                            correlation,
                            corr_structure: self.corr_structure,
                            n,
                            cutpoint,
                            n_datasets: self.n_datasets,
                            seed: self.seed,
                        };
                        s.validate()?;
                        grid.push(s);
                    }
                }
            }
        }
        if grid.is_empty() {
            return Err(Error::config("grid", "no scenarios"));
        }
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(correlation: f64, structure: CorrStructure) -> Scenario {
        Scenario {
            means: MeanProfile::NoChange,
            correlation,
            corr_structure: structure,
            n: 50,
            cutpoint: 1.0,
            n_datasets: 2,
            seed: 3,
        }
    }

    #[test]
    fn truncation_rule() {
        let m = SeriesMatrix {
            n: 2,
            k: 4,
            data: vec![0.2, 1.4, 0.1, 0.9, 0.0, 0.5, 0.9, 1.0],
        };
        let d = apply_repeat_truncation(&m, 1.0);
        assert_eq!(d.subjects[0].observations, vec![(1, 0.2), (2, 1.4)]);
        assert_eq!(d.subjects[1].observations.len(), 4);
    }

    #[test]
    fn invalid_correlation_names_field() {
        match scenario(1.5, CorrStructure::Exchangeable).validate() {
            Err(Error::Config { field, .. }) => assert_eq!(field, "correlation"),
            other => panic!("unexpected {other:?}"),
        }
        let s = scenario(-0.5, CorrStructure::Exchangeable);
        assert!(matches!(correlation_factor(&s), Err(Error::NotPositiveDefinite)));
        assert!(correlation_factor(&scenario(-0.5, CorrStructure::Ar1)).is_ok());
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = scenario(0.5, CorrStructure::Ar1);
        assert_eq!(sample_mvn_series(&s, 4).unwrap(), sample_mvn_series(&s, 4).unwrap());
        assert_ne!(sample_mvn_series(&s, 4).unwrap(), sample_mvn_series(&s, 5).unwrap());
    }

    #[test]
    fn default_grid_size() {
        assert_eq!(GridSpec::default().expand().unwrap().len(), 96);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
