//! Numerical observability study: Part I maximizes the posterior for the single
//! representative design observation vector, Part II for `K` design vectors, and
//! the verdict and estimator statistics are derived from the checked maxima.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dirac::{self, DiracError, LcdConfig, SampleCache};
use crate::model::{ModelFile, ModelSpec};
use crate::optimizer::{check_maximum, maximize, CheckReport, OptConfig, OptConfigError};
use crate::posterior::PosteriorContext;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("invalid study configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Opt(#[from] OptConfigError),
    #[error("sample generation failed: {0}")]
    Samples(#[from] DiracError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, StudyError>;

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub model: Arc<ModelSpec>,
    pub t_list: Vec<usize>,
    /// Number of design observation vectors per horizon.
    pub k: usize,
    pub lcd: LcdConfig,
    pub opt: OptConfig,
    /// Added to every coordinate of the true values to form the start point.
    pub init_perturbation: f64,
    /// Directory for generated sample sets; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
    /// Also run `K` maximizations on seeded random disturbances for comparison.
    pub random_baseline: bool,
}

impl StudyConfig {
    pub fn new(model: ModelSpec) -> Self {
        Self {
            model: Arc::new(model),
            t_list: vec![4, 12, 20],
            k: 2000,
            lcd: LcdConfig::default(),
            opt: OptConfig::default(),
            init_perturbation: 0.0,
            cache_dir: None,
            random_baseline: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_list.is_empty() {
            return Err(StudyError::Config("T list is empty".into()));
        }
        if self.t_list.contains(&0) {
            return Err(StudyError::Config("horizons must be positive".into()));
        }
        if self.k < 2 {
            return Err(StudyError::Config(format!(
                "K must be at least 2, got {}",
                self.k
            )));
        }
        if let Some(&t) = self.t_list.iter().find(|&&t| self.k / 2 < t) {
            return Err(StudyError::Config(format!(
                "K = {} is too small for T = {t}: need K >= {}",
                self.k,
                2 * t
            )));
        }
        if !self.init_perturbation.is_finite() {
            return Err(StudyError::Config(
                "init perturbation must be finite".into(),
            ));
        }
        self.lcd.validate()?;
        self.opt.validate()?;
        Ok(())
    }

    /// `Omega* + init_perturbation`.
    pub fn start_point(&self) -> Vec<f64> {
        self.model
            .true_values()
            .iter()
            .map(|v| v + self.init_perturbation)
            .collect()
    }

    fn mixture(&self, dim: usize, count: usize) -> Result<dirac::DiracMixture> {
        Ok(match &self.cache_dir {
            Some(dir) => SampleCache::new(dir).load_or_generate(dim, count, &self.lcd)?,
            None => dirac::optimize_mixture(dim, count, &self.lcd)?,
        })
    }

    fn representative(&self, t: usize) -> Result<Vec<f64>> {
        let mut v: Vec<f64> = self
            .mixture(1, t)?
            .points()
            .into_iter()
            .map(|p| p[0])
            .collect();
        v.sort_by(f64::total_cmp);
        Ok(v)
    }

    fn design_matrix(&self, t: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self.mixture(t, self.k)?.points())
    }
}

/// `z_t = m(Omega*) + s(Omega*) e_t` for one disturbance vector.
pub fn make_design_observation(model: &ModelSpec, disturbances: &[f64]) -> Vec<f64> {
    let (m, s) = model
        .location_scale(&model.true_values())
        .expect("model is feasible at its true values");
    disturbances.iter().map(|e| m + s * e).collect()
}

/// Applies [`make_design_observation`] to every row.
pub fn make_design_observations(model: &ModelSpec, disturbances: &[Vec<f64>]) -> Vec<Vec<f64>> {
    disturbances
        .iter()
        .map(|row| make_design_observation(model, row))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartIResult {
    pub t: usize,
    #[serde(with = "crate::floats::vec")]
    pub z_rep: Vec<f64>,
    pub max_result: crate::optimizer::MaxResult,
    pub check: CheckReport,
}

impl PartIResult {
    pub fn passed(&self) -> bool {
        self.check.passed
    }

    pub fn local_variances(&self) -> Option<&[f64]> {
        self.check.local_variances.as_deref()
    }
}

/// One Part II maximization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub k: usize,
    #[serde(with = "crate::floats::vec")]
    pub omega_hat: Vec<f64>,
    pub passed: bool,
    /// First failing check, or the optimizer's reason when it could not start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(with = "crate::floats")]
    pub grad_norm: f64,
    #[serde(with = "crate::floats::opt")]
    pub eig_ratio: Option<f64>,
    #[serde(with = "crate::floats::opt_vec")]
    pub local_variances: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartIIResult {
    pub t: usize,
    pub k: usize,
    pub n_passed: usize,
    pub n_failed: usize,
    /// Failed runs by reason.
    pub failures: BTreeMap<String, usize>,
    /// Statistics over passing runs only.
    #[serde(with = "crate::floats::opt_vec")]
    pub empirical_mean: Option<Vec<f64>>,
    /// Sample variance with denominator `n_passed - 1`.
    #[serde(with = "crate::floats::opt_vec")]
    pub empirical_variance: Option<Vec<f64>>,
    #[serde(with = "crate::floats::opt_vec")]
    pub mean_local_variance: Option<Vec<f64>>,
    pub runs: Vec<RunRecord>,
}

fn solve(
    ctx: &PosteriorContext,
    x0: &[f64],
    opt: &OptConfig,
) -> (crate::optimizer::MaxResult, CheckReport) {
    let res = maximize(ctx, x0, opt);
    let check = if res.omega_hat.iter().all(|v| v.is_finite()) {
        check_maximum(ctx, &res, opt)
    } else {
        CheckReport {
            grad_ok: false,
            hessian_pd: false,
            eig_ratio_ok: false,
            lvar_finite: false,
            passed: false,
            ridge: false,
            grad_norm: f64::NAN,
            eigenvalues: Vec::new(),
            eig_ratio: None,
            local_variances: None,
            diagnostic: Some("no candidate".into()),
        }
    };
    (res, check)
}

/// Part I on a given representative disturbance vector.
pub fn run_part1_on(
    model: &Arc<ModelSpec>,
    disturbances: &[f64],
    x0: &[f64],
    opt: &OptConfig,
) -> PartIResult {
    let z = make_design_observation(model, disturbances);
    let ctx = PosteriorContext::new(model.clone(), z.clone()).expect("finite observations");
    let (max_result, check) = solve(&ctx, x0, opt);
    PartIResult {
        t: disturbances.len(),
        z_rep: z,
        max_result,
        check,
    }
}

pub fn run_part1(cfg: &StudyConfig, t: usize) -> Result<PartIResult> {
    let eps = cfg.representative(t)?;
    Ok(run_part1_on(&cfg.model, &eps, &cfg.start_point(), &cfg.opt))
}

/// Part II over the rows of a disturbance matrix. Runs are independent and may
/// execute in parallel; aggregation is in row order.
pub fn run_part2_on(
    model: &Arc<ModelSpec>,
    disturbances: &[Vec<f64>],
    x0: &[f64],
    opt: &OptConfig,
) -> PartIIResult {
    let t = disturbances.first().map_or(0, Vec::len);
    let runs: Vec<RunRecord> = disturbances
        .par_iter()
        .enumerate()
        .map(|(k, eps)| {
            let z = make_design_observation(model, eps);
            let ctx = PosteriorContext::new(model.clone(), z).expect("finite observations");
            let (res, check) = solve(&ctx, x0, opt);
            let failure = if check.passed {
                None
            } else if res.neg2l.is_nan() {
                Some("infeasible_start".to_string())
            } else {
                check.first_failure().map(str::to_string)
            };
            RunRecord {
                k,
                omega_hat: res.omega_hat,
                passed: check.passed,
                failure,
                grad_norm: check.grad_norm,
                eig_ratio: check.eig_ratio,
                local_variances: check.local_variances,
            }
        })
        .collect();
    summarize(t, runs)
}

pub fn run_part2(cfg: &StudyConfig, t: usize) -> Result<PartIIResult> {
    let eps = cfg.design_matrix(t)?;
    Ok(run_part2_on(&cfg.model, &eps, &cfg.start_point(), &cfg.opt))
}

/// Part II on `K` seeded i.i.d. standard-normal disturbance vectors.
pub fn run_random_baseline(cfg: &StudyConfig, t: usize) -> PartIIResult {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.lcd.seed ^ (t as u64).rotate_left(32));
    let eps: Vec<Vec<f64>> = (0..cfg.k)
        .map(|_| (0..t).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    run_part2_on(&cfg.model, &eps, &cfg.start_point(), &cfg.opt)
}

fn summarize(t: usize, runs: Vec<RunRecord>) -> PartIIResult {
    let passing: Vec<&RunRecord> = runs.iter().filter(|r| r.passed).collect();
    let n = passing.len();
    let mut failures = BTreeMap::new();
    for r in runs.iter().filter(|r| !r.passed) {
        let reason = r.failure.clone().unwrap_or_else(|| "unknown".into());
        *failures.entry(reason).or_insert(0) += 1;
    }
    let mean_of = |get: &dyn Fn(&RunRecord) -> &[f64]| -> Option<Vec<f64>> {
        let first = passing.first()?;
        let dim = get(first).len();
        let mut acc = vec![0.0; dim];
        for r in &passing {
            for (a, v) in acc.iter_mut().zip(get(r)) {
                *a += v;
            }
        }
        Some(acc.into_iter().map(|a| a / n as f64).collect())
    };
    let empirical_mean = mean_of(&|r| &r.omega_hat);
    let empirical_variance = match (&empirical_mean, n) {
        (Some(mean), n) if n >= 2 => {
            let mut acc = vec![0.0; mean.len()];
            for r in &passing {
                for ((a, v), m) in acc.iter_mut().zip(&r.omega_hat).zip(mean) {
                    *a += (v - m) * (v - m);
                }
            }
            Some(acc.into_iter().map(|a| a / (n - 1) as f64).collect())
        }
        _ => None,
    };
    let mean_local_variance = mean_of(&|r| {
        r.local_variances
            .as_deref()
            .expect("passing runs have variances")
    });
    PartIIResult {
        t,
        k: runs.len(),
        n_passed: n,
        n_failed: runs.len() - n,
        failures,
        empirical_mean,
        empirical_variance,
        mean_local_variance,
        runs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictKind {
    Observable,
    NotObservable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub verdict: VerdictKind,
    pub part1_passed: usize,
    pub part1_total: usize,
    pub part2_passed: usize,
    pub part2_total: usize,
}

impl Verdict {
    /// Observable as soon as any maximum anywhere passes all checks.
    pub fn from_counts(part1: (usize, usize), part2: (usize, usize)) -> Self {
        let verdict = if part1.0 + part2.0 > 0 {
            VerdictKind::Observable
        } else {
            VerdictKind::NotObservable
        };
        Self {
            verdict,
            part1_passed: part1.0,
            part1_total: part1.1,
            part2_passed: part2.0,
            part2_total: part2.1,
        }
    }

    pub fn is_observable(&self) -> bool {
        self.verdict == VerdictKind::Observable
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub t: usize,
    pub verdict: Verdict,
    pub part1: PartIResult,
    pub part2: PartIIResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_baseline: Option<PartIIResult>,
}

/// Whether estimator variance and mean local variance shrink with `T`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyTrend {
    /// `None` when fewer than two horizons have statistics.
    pub variance_non_increasing: Option<bool>,
    pub local_variance_non_increasing: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySettings {
    pub t_list: Vec<usize>,
    pub k: usize,
    pub lcd: LcdConfig,
    pub opt: OptConfig,
    pub init_perturbation: f64,
    #[serde(with = "crate::floats::vec")]
    pub start_point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub model: ModelFile,
    pub settings: StudySettings,
    pub verdict: Verdict,
    pub consistency: ConsistencyTrend,
    pub horizons: Vec<HorizonReport>,
}

impl StudyReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// CSV rows `T,k,param,estimate,passed` for every Part II run.
    pub fn plot_csv(&self) -> String {
        let mut out = String::from("T,k,param,estimate,passed\n");
        for h in &self.horizons {
            for r in &h.part2.runs {
                for (name, v) in self.model.parameters.iter().zip(&r.omega_hat) {
                    out.push_str(&format!(
                        "{},{},{},{:e},{}\n",
                        h.t, r.k, name.name, v, r.passed
                    ));
                }
            }
        }
        out
    }
}

fn non_increasing(series: &[Vec<f64>]) -> Option<bool> {
    if series.len() < 2 {
        return None;
    }
    Some(
        series
            .windows(2)
            .all(|w| w[0].iter().zip(&w[1]).all(|(a, b)| b <= a)),
    )
}

/// Runs Part I and Part II for every horizon.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let mut t_list = cfg.t_list.clone();
    t_list.sort_unstable();
    t_list.dedup();
    let mut horizons = Vec::with_capacity(t_list.len());
    for &t in &t_list {
        let part1 = run_part1(cfg, t)?;
        let part2 = run_part2(cfg, t)?;
        let random_baseline = cfg.random_baseline.then(|| run_random_baseline(cfg, t));
        let verdict =
            Verdict::from_counts((usize::from(part1.passed()), 1), (part2.n_passed, part2.k));
        horizons.push(HorizonReport {
            t,
            verdict,
            part1,
            part2,
            random_baseline,
        });
    }
    let verdict = Verdict::from_counts(
        (
            horizons.iter().filter(|h| h.part1.passed()).count(),
            horizons.len(),
        ),
        (
            horizons.iter().map(|h| h.part2.n_passed).sum(),
            horizons.iter().map(|h| h.part2.k).sum(),
        ),
    );
    let variances: Vec<Vec<f64>> = horizons
        .iter()
        .filter_map(|h| h.part2.empirical_variance.clone())
        .collect();
    let lvars: Vec<Vec<f64>> = horizons
        .iter()
        .filter_map(|h| h.part2.mean_local_variance.clone())
        .collect();
    Ok(StudyReport {
        model: cfg.model.to_file(),
        settings: StudySettings {
            t_list,
            k: cfg.k,
            lcd: cfg.lcd.clone(),
            opt: cfg.opt.clone(),
            init_perturbation: cfg.init_perturbation,
            start_point: cfg.start_point(),
        },
        verdict,
        consistency: ConsistencyTrend {
            variance_non_increasing: non_increasing(&variances),
            local_variance_non_increasing: non_increasing(&lvars),
        },
        horizons,
    })
}

/// Writes `contents` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let io = |source| StudyError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile_in(dir, path).map_err(io)?;
    tmp.1.write_all(contents).map_err(io)?;
    tmp.1.sync_all().map_err(io)?;
    drop(tmp.1);
    std::fs::rename(&tmp.0, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp.0);
        io(e)
    })
}

fn tempfile_in(dir: &Path, target: &Path) -> std::io::Result<(PathBuf, std::fs::File)> {
    let stem = target
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = dir.join(format!(".{stem}.{}.tmp", std::process::id()));
    let f = std::fs::File::create(&tmp)?;
    Ok((tmp, f))
}
