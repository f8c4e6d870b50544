//! Monte-Carlo experiments: simulate, fit, test and score many seeded
//! replications of a scenario.
//!
//! Replications run on a rayon pool, each with its own seed derived from the
//! base seed and the replication index, and results are collected in
//! replication order so the output does not depend on the thread count.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bspline::{BSplineBasis, GridFunction};
use crate::cprsm::{fit_design, CprsmConfig};
use crate::error::{ensure, HdfpError, Result};
use crate::glm::DesignMatrix;
use crate::inference::{ci_alpha, wald_test_with, Hypothesis, MiddleMatrix, SandwichCorrection, SandwichCovariance, DEFAULT_LEVELS};
use crate::penalty::ScadPenalty;
use crate::simgen::{build_scenario, fourier_profile, replication_seed, ScenarioConfig};
use crate::tuning::{best_point, cv_select, CvOutcome, CvPlan, CvPoint};

/// Right-hand side `t(s)` of the tested hypothesis.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    #[default]
    Zero,
    /// Row `r` of `t` is `scales[r]` times the Fourier coefficient profile.
    Fourier { scales: Vec<f64> },
}

impl TargetSpec {
    /// `t(s)` with `rows` channels on `grid`; `None` for the zero target.
    pub fn sample(&self, grid: &[f64], rows: usize) -> Result<Option<GridFunction>> {
        match self {
            TargetSpec::Zero => Ok(None),
            TargetSpec::Fourier { scales } => {
                ensure!(scales.len() == rows, Config, "target has {} scales for {rows} contrast rows", scales.len());
                let values = DMatrix::from_fn(rows, grid.len(), |r, g| scales[r] * fourier_profile(grid[g]));
                GridFunction::new(grid.to_vec(), values).map(Some)
            }
        }
    }
}

/// How `(N, lambda)` are chosen in each replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TuningMode {
    /// The same pair for every replication.
    Fixed { n_basis: usize, lambda: f64 },
    /// Cross-validation inside every replication, seeded by the replication seed.
    PerReplication(CvPlan),
    /// One selection per scenario: CV tables of `pilots` extra data sets,
    /// drawn with seeds disjoint from the replications, are averaged and the
    /// minimizer is used for every replication.
    Pilot { plan: CvPlan, pilots: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    /// Tested groups `M` (0-based); empty when only the baseline effects are scored.
    pub test_set: Vec<usize>,
    /// Rows of `C`; identity when absent.
    pub contrast: Option<Vec<Vec<f64>>>,
    pub target: TargetSpec,
    pub tuning: TuningMode,
    pub order: usize,
    pub penalty_a: f64,
    pub solver: CprsmConfig,
    pub middle: MiddleMatrix,
    pub correction: SandwichCorrection,
    pub levels: Vec<f64>,
    /// Level of the baseline-effect intervals.
    pub ci_level: f64,
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioConfig, test_set: Vec<usize>, tuning: TuningMode) -> Self {
        Self {
            scenario,
            test_set,
            contrast: None,
            target: TargetSpec::Zero,
            tuning,
            order: 4,
            penalty_a: ScadPenalty::DEFAULT_A,
            solver: CprsmConfig::default(),
            middle: MiddleMatrix::Wald,
            correction: SandwichCorrection::default(),
            levels: DEFAULT_LEVELS.to_vec(),
            ci_level: 0.95,
        }
    }

    pub fn hypothesis(&self, grid: &[f64]) -> Result<Option<Hypothesis>> {
        if self.test_set.is_empty() {
            ensure!(self.contrast.is_none(), Config, "a contrast was given without tested groups");
            return Ok(None);
        }
        let m = self.test_set.len();
        let c = match &self.contrast {
            None => DMatrix::identity(m, m),
            Some(rows) => {
                ensure!(!rows.is_empty(), Config, "contrast has no rows");
                ensure!(
                    rows.iter().all(|r| r.len() == m),
                    Config,
                    "every contrast row needs {m} entries, one per tested group"
                );
                DMatrix::from_fn(rows.len(), m, |i, k| rows[i][k])
            }
        };
        let target = self.target.sample(grid, c.nrows())?;
        Hypothesis::new(self.test_set.clone(), c, target).map(Some)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        for &j in &self.test_set {
            ensure!(j < self.scenario.d, Config, "tested group {} outside 1..={}", j + 1, self.scenario.d);
        }
        self.hypothesis(&[0.0, 1.0]).map_err(|e| HdfpError::Config(e.to_string()))?;
        ensure!(self.ci_level > 0.0 && self.ci_level < 1.0, Config, "ci_level must lie in (0, 1)");
        for &l in &self.levels {
            ensure!(l > 0.0 && l < 1.0, Config, "significance levels must lie in (0, 1), got {l}");
        }
        match &self.tuning {
            TuningMode::Fixed { n_basis, lambda } => {
                ensure!(*n_basis >= self.order, Config, "basis size {n_basis} is below the spline order");
                self.solver.validate(&ScadPenalty::new(*lambda, self.penalty_a)?)?;
            }
            TuningMode::PerReplication(plan) | TuningMode::Pilot { plan, .. } => {
                plan.validate()?;
                ensure!(plan.order == self.order, Config, "the CV plan and the experiment use different spline orders");
                ensure!(plan.folds <= self.scenario.n, Config, "{} folds for n = {}", plan.folds, self.scenario.n);
            }
        }
        if let TuningMode::Pilot { pilots, .. } = self.tuning {
            ensure!(pilots >= 1, Config, "pilot tuning needs at least one pilot data set");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub seed: u64,
    pub n_basis: usize,
    pub lambda: f64,
    pub converged: bool,
    pub iterations: usize,
    pub active_size: usize,
    pub statistic: Option<f64>,
    pub df: Option<usize>,
    pub p_value: Option<f64>,
    /// One flag per configured level.
    pub reject: Vec<bool>,
    pub alpha_error: Option<f64>,
    /// One flag per baseline coefficient.
    pub alpha_covered: Vec<bool>,
    pub error: Option<String>,
}

impl ReplicationRecord {
    fn failed(rep: usize, seed: u64, err: HdfpError) -> Self {
        Self {
            rep,
            seed,
            n_basis: 0,
            lambda: f64::NAN,
            converged: false,
            iterations: 0,
            active_size: 0,
            statistic: None,
            df: None,
            p_value: None,
            reject: Vec::new(),
            alpha_error: None,
            alpha_covered: Vec::new(),
            error: Some(err.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub reps: usize,
    /// Replications with a recorded error.
    pub failures: usize,
    /// `(level, rejection rate)` over replications that produced a test.
    pub rejection_rate: Vec<(f64, f64)>,
    pub tests: usize,
    pub mean_alpha_error: Option<f64>,
    /// Coverage of each baseline coefficient's interval.
    pub alpha_coverage: Vec<f64>,
    pub converged_rate: f64,
}

impl ExperimentSummary {
    pub fn rate_at(&self, level: f64) -> Option<f64> {
        self.rejection_rate.iter().find(|(l, _)| (*l - level).abs() < 1e-12).map(|&(_, r)| r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub records: Vec<ReplicationRecord>,
    pub summary: ExperimentSummary,
}

fn run_one(config: &ExperimentConfig, rep: usize, seed: u64) -> Result<ReplicationRecord> {
    let mut sc = config.scenario.clone();
    sc.seed = seed;
    let scenario = build_scenario(&sc)?;
    let data = &scenario.dataset;
    let family = sc.noise.family();
    let (n_basis, lambda) = match &config.tuning {
        TuningMode::Fixed { n_basis, lambda } => (*n_basis, *lambda),
        TuningMode::Pilot { .. } => unreachable!("pilot tuning is resolved before the replications"),
        TuningMode::PerReplication(plan) => {
            let plan = CvPlan { seed, ..plan.clone() };
            let cv = cv_select(data, family, config.penalty_a, &config.test_set, &plan, &config.solver)?;
            (cv.n_basis, cv.lambda)
        }
    };
    let basis = BSplineBasis::with_size(config.order, n_basis)?;
    let design = DesignMatrix::build(data, &basis)?;
    let penalty = ScadPenalty::new(lambda, config.penalty_a)?;
    let fit = fit_design(&design, data.y(), family, &penalty, &config.test_set, &config.solver, None)?;

    let alpha_error = (!scenario.alpha0.is_empty()).then(|| {
        fit.alpha().iter().zip(&scenario.alpha0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    });
    let mut record = ReplicationRecord {
        rep,
        seed,
        n_basis,
        lambda,
        converged: fit.converged,
        iterations: fit.iterations,
        active_size: fit.active_set.len(),
        statistic: None,
        df: None,
        p_value: None,
        reject: Vec::new(),
        alpha_error,
        alpha_covered: Vec::new(),
        error: None,
    };

    let mut inference = || -> Result<()> {
        let cov = SandwichCovariance::assemble_with(&design, data.y(), family, &fit.theta_hat, &config.test_set, config.correction)?;
        if let Some(h) = config.hypothesis(data.grid())? {
            let t = wald_test_with(&fit, &cov, &h, &basis, config.middle, &config.levels)?;
            record.statistic = Some(t.statistic);
            record.df = Some(t.df);
            record.p_value = Some(t.p_value);
            record.reject = t.reject_at.iter().map(|&(_, r)| r).collect();
        }
        let ci = ci_alpha(&fit, &cov, config.ci_level)?;
        record.alpha_covered = ci.iter().zip(&scenario.alpha0).map(|(iv, &a)| iv.contains(a)).collect();
        Ok(())
    };
    if let Err(e) = inference() {
        record.error = Some(e.to_string());
    }
    Ok(record)
}

fn summarize(records: &[ReplicationRecord], levels: &[f64]) -> ExperimentSummary {
    let tested: Vec<&ReplicationRecord> = records.iter().filter(|r| r.statistic.is_some()).collect();
    let rejection_rate = if tested.is_empty() {
        Vec::new()
    } else {
        levels
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, tested.iter().filter(|r| r.reject[i]).count() as f64 / tested.len() as f64))
            .collect()
    };
    let errors: Vec<f64> = records.iter().filter_map(|r| r.alpha_error).collect();
    let mean_alpha_error = (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64);
    let covered: Vec<&ReplicationRecord> = records.iter().filter(|r| !r.alpha_covered.is_empty()).collect();
    let q = covered.first().map_or(0, |r| r.alpha_covered.len());
    let alpha_coverage = (0..q)
        .map(|k| covered.iter().filter(|r| r.alpha_covered[k]).count() as f64 / covered.len() as f64)
        .collect();
    let converged_rate = if records.is_empty() {
        0.0
    } else {
        records.iter().filter(|r| r.converged).count() as f64 / records.len() as f64
    };
    ExperimentSummary {
        reps: records.len(),
        failures: records.iter().filter(|r| r.error.is_some()).count(),
        rejection_rate,
        tests: tested.len(),
        mean_alpha_error,
        alpha_coverage,
        converged_rate,
    }
}

const PILOT_SALT: u64 = 0x5EED_0F_B11075;

/// Averaged CV table over `pilots` simulated data sets of the experiment's scenario.
pub fn pilot_select(config: &ExperimentConfig, plan: &CvPlan, pilots: usize, base_seed: u64) -> Result<CvOutcome> {
    ensure!(pilots >= 1, Config, "pilot tuning needs at least one pilot data set");
    let mut table: Option<Vec<CvPoint>> = None;
    let mut warnings = Vec::new();
    for i in 0..pilots {
        let seed = replication_seed(base_seed ^ PILOT_SALT, i as u64);
        let mut sc = config.scenario.clone();
        sc.seed = seed;
        let scenario = build_scenario(&sc)?;
        let plan = CvPlan { seed, ..plan.clone() };
        let cv = cv_select(&scenario.dataset, sc.noise.family(), config.penalty_a, &config.test_set, &plan, &config.solver)?;
        warnings.extend(cv.warnings);
        match table.as_mut() {
            None => table = Some(cv.table),
            Some(t) => t.iter_mut().zip(&cv.table).for_each(|(a, b)| {
                a.score += b.score;
                a.failed_folds += b.failed_folds;
            }),
        }
    }
    let mut table = table.expect("at least one pilot");
    table.iter_mut().for_each(|p| p.score /= pilots as f64);
    let best = best_point(&table)?;
    Ok(CvOutcome {
        n_basis: best.n_basis,
        lambda: best.lambda,
        table,
        warnings,
    })
}

/// Runs `reps` replications; `threads = None` uses the global rayon pool.
pub fn run_experiment(config: &ExperimentConfig, reps: usize, base_seed: u64, threads: Option<usize>) -> Result<ExperimentResult> {
    config.validate()?;
    let pool = match threads {
        None => None,
        Some(t) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| HdfpError::Config(format!("cannot start {t} worker threads: {e}")))?,
        ),
    };
    let install = |f: &(dyn Fn() -> Result<ExperimentResult> + Sync)| match &pool {
        None => f(),
        Some(p) => p.install(f),
    };
    install(&|| run_in_pool(config, reps, base_seed))
}

fn run_in_pool(config: &ExperimentConfig, reps: usize, base_seed: u64) -> Result<ExperimentResult> {
    use rayon::prelude::*;
    let resolved;
    let config = match &config.tuning {
        TuningMode::Pilot { plan, pilots } => {
            let cv = pilot_select(config, plan, *pilots, base_seed)?;
            resolved = ExperimentConfig {
                tuning: TuningMode::Fixed {
                    n_basis: cv.n_basis,
                    lambda: cv.lambda,
                },
                ..config.clone()
            };
            &resolved
        }
        _ => config,
    };
    let work = || -> Vec<ReplicationRecord> {
        (0..reps)
            .into_par_iter()
            .map(|rep| {
                let seed = replication_seed(base_seed, rep as u64);
                run_one(config, rep, seed).unwrap_or_else(|e| ReplicationRecord::failed(rep, seed, e))
            })
            .collect()
    };
    let records = work();
    let summary = summarize(&records, &config.levels);
    Ok(ExperimentResult { records, summary })
}
