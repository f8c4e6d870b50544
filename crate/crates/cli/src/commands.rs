//! The `fit`, `test`, `cv` and `simulate` commands.

use std::path::{Path, PathBuf};

use hdfp::bspline::uniform_grid;
use hdfp::cprsm::fit_design;
use hdfp::inference::{ci_alpha, wald_test_with};
use hdfp::montecarlo::ReplicationRecord;
use hdfp::{
    cv_select, run_experiment, BSplineBasis, DesignMatrix, ExperimentConfig, ExperimentResult, Family, FitResult,
    FunctionalDataset, GridFunction, Hypothesis, SandwichCovariance, ScadPenalty, TuningMode,
};
use nalgebra::DMatrix;

use crate::config::{LoadedConfig, RunConfig, TargetSection, TuningChoice};
use crate::error::{usage, CliResult};
use crate::ingest::ingest_csv;
use crate::output::{ensure_dir, num, opt_num, Provenance, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Test,
    Cv,
    Simulate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Test => "test",
            Command::Cv => "cv",
            Command::Simulate => "simulate",
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub reps: Option<usize>,
    /// From `--threads` or `HDFP_THREADS`.
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
}

struct Run {
    loaded: LoadedConfig,
    seed: u64,
    out: PathBuf,
    prov: Provenance,
}

impl Run {
    fn cfg(&self) -> &RunConfig {
        &self.loaded.config
    }

    fn write(&self, table: &Table, name: &str) -> CliResult<PathBuf> {
        table.write(&self.out, name, &self.prov)
    }
}

/// Runs `command` and returns the files written.
pub fn run(command: Command, config_path: &Path, overrides: &Overrides) -> CliResult<Vec<PathBuf>> {
    let loaded = LoadedConfig::load(config_path)?;
    let cfg = &loaded.config;
    let seed = overrides.seed.or(cfg.seed).unwrap_or(0);
    let threads = overrides.threads.or(cfg.threads);
    if threads == Some(0) {
        return Err(usage!("thread count must be at least 1"));
    }
    let out = match (&overrides.out, &cfg.output) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => loaded.resolve(p),
        (None, None) => PathBuf::from("hdfp-out"),
    };
    let prov = Provenance {
        command: command.name(),
        seed,
        config_hash: loaded.hash.clone(),
    };
    let run = Run { loaded, seed, out, prov };
    let reps = overrides.reps.or(run.cfg().reps);

    let body = || match command {
        Command::Fit => cmd_fit(&run),
        Command::Test => cmd_test(&run),
        Command::Cv => cmd_cv(&run),
        Command::Simulate => cmd_simulate(&run, reps),
    };
    match threads {
        None => body(),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| usage!("cannot start {t} worker threads: {e}"))?
            .install(body),
    }
}

fn load_data(run: &Run) -> CliResult<FunctionalDataset> {
    let data = run.cfg().data.as_ref().ok_or_else(|| usage!("this command needs a [data] section"))?;
    let ingested = ingest_csv(&run.loaded.resolve(&data.subjects), &run.loaded.resolve(&data.functional))?;
    Ok(ingested.dataset)
}

fn check_groups(cfg: &RunConfig, d: usize) -> CliResult<()> {
    let listed = cfg.test_set().into_iter().chain(cfg.report.curves.iter().flatten().map(|g| g - 1));
    for j in listed {
        if j >= d {
            return Err(usage!("group {} is outside 1..={d}", j + 1));
        }
    }
    Ok(())
}

struct Fitted {
    data: FunctionalDataset,
    family: Family,
    basis: BSplineBasis,
    design: DesignMatrix,
    fit: FitResult,
    lambda: f64,
    tuned_by_cv: bool,
}

fn fit_data(run: &Run) -> CliResult<Fitted> {
    let cfg = run.cfg();
    let family = cfg.family()?;
    let data = load_data(run)?;
    check_groups(cfg, data.d())?;
    let test_set = cfg.test_set();
    let ((n_basis, lambda), tuned_by_cv) = match cfg.fixed_tuning() {
        Some(pair) => (pair, false),
        None => {
            let cv = cv_select(&data, family, cfg.penalty.a, &test_set, &cfg.cv_plan(family, run.seed), &cfg.solver)?;
            ((cv.n_basis, cv.lambda), true)
        }
    };
    let basis = BSplineBasis::with_size(cfg.basis.order, n_basis)?;
    let design = DesignMatrix::build(&data, &basis)?;
    let penalty = ScadPenalty::new(lambda, cfg.penalty.a)?;
    let fit = fit_design(&design, data.y(), family, &penalty, &test_set, &cfg.solver, None)?;
    Ok(Fitted {
        data,
        family,
        basis,
        design,
        fit,
        lambda,
        tuned_by_cv,
    })
}

fn cmd_fit(run: &Run) -> CliResult<Vec<PathBuf>> {
    let f = fit_data(run)?;
    let cfg = run.cfg();
    ensure_dir(&run.out)?;
    let mut files = Vec::new();

    let mut alpha = Table::new(&["coefficient", "estimate"]);
    for (k, a) in f.fit.alpha().iter().enumerate() {
        alpha.push(vec![(k + 1).to_string(), num(*a)]);
    }
    files.push(run.write(&alpha, "fit_alpha.csv")?);

    let test_set = cfg.test_set();
    let norms = f.fit.group_norms();
    let mut groups = Table::new(&["group", "norm", "active", "tested"]);
    for (j, nrm) in norms.iter().enumerate() {
        groups.push(vec![
            (j + 1).to_string(),
            num(*nrm),
            f.fit.active_set.contains(&j).to_string(),
            test_set.contains(&j).to_string(),
        ]);
    }
    files.push(run.write(&groups, "fit_groups.csv")?);

    let active: Vec<String> = f.fit.active_set.iter().map(|j| (j + 1).to_string()).collect();
    let mut diag = Table::new(&["key", "value"]);
    for (k, v) in [
        ("family", f.family.to_string()),
        ("n", f.data.n().to_string()),
        ("q", f.data.q().to_string()),
        ("d", f.data.d().to_string()),
        ("n_basis", f.basis.size().to_string()),
        ("lambda", num(f.lambda)),
        ("tuned_by_cv", f.tuned_by_cv.to_string()),
        ("converged", f.fit.converged.to_string()),
        ("iterations", f.fit.iterations.to_string()),
        ("final_delta", num(f.fit.final_delta)),
        ("objective", num(f.fit.objective)),
        ("primal_residual", num(f.fit.primal_residual)),
        ("active_set", active.join(" ")),
    ] {
        diag.push(vec![k.to_string(), v]);
    }
    files.push(run.write(&diag, "fit_diagnostics.csv")?);

    let requested: Vec<usize> = match &cfg.report.curves {
        Some(c) => c.iter().map(|g| g - 1).collect(),
        None => {
            let mut g = test_set.clone();
            g.extend(f.fit.active_set.iter().filter(|j| !test_set.contains(j)));
            g.sort_unstable();
            g
        }
    };
    let grid = uniform_grid(cfg.report.curve_points);
    let mut curves = Table::new(&["group", "s", "beta"]);
    if !requested.is_empty() {
        let coeffs = DMatrix::from_fn(f.basis.size(), requested.len(), |k, c| f.fit.gamma_hat[(requested[c], k)]);
        let values = f.basis.synthesize(&coeffs, &grid)?;
        for (c, j) in requested.iter().enumerate() {
            for (g, s) in grid.iter().enumerate() {
                curves.push(vec![(j + 1).to_string(), num(*s), num(values.values()[(c, g)])]);
            }
        }
    }
    files.push(run.write(&curves, "fit_curves.csv")?);
    Ok(files)
}

fn load_target(path: &Path, rows: usize) -> CliResult<GridFunction> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| usage!("cannot open {}: {e}", path.display()))?;
    let width = rdr.headers().map_err(|e| usage!("{}: {e}", path.display()))?.len();
    if width != rows + 1 {
        return Err(usage!("{}: expected columns s,t1..t{rows}, found {width} columns", path.display()));
    }
    let mut grid = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); rows];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| usage!("{}: {e}", path.display()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse = |k: usize| {
            rec.get(k)
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| usage!("{}:{line}: field {} is not a finite number", path.display(), k + 1))
        };
        grid.push(parse(0)?);
        for (r, col) in values.iter_mut().enumerate() {
            col.push(parse(r + 1)?);
        }
    }
    let m = DMatrix::from_fn(rows, grid.len(), |r, g| values[r][g]);
    GridFunction::new(grid, m).map_err(|e| usage!("{}: {e}", path.display()))
}

fn hypothesis(run: &Run, grid: &[f64]) -> CliResult<Hypothesis> {
    let cfg = run.cfg();
    let h = cfg.hypothesis.as_ref().ok_or_else(|| usage!("test needs a [hypothesis] section"))?;
    let m = h.groups.len();
    let c = match &h.contrast {
        None => DMatrix::identity(m, m),
        Some(rows) => {
            if rows.is_empty() || rows.iter().any(|r| r.len() != m) {
                return Err(usage!("hypothesis.contrast needs rows of {m} entries, one per tested group"));
            }
            DMatrix::from_fn(rows.len(), m, |i, k| rows[i][k])
        }
    };
    let target = match &h.target {
        None | Some(TargetSection::Named(_)) => None,
        Some(TargetSection::File { file }) => Some(load_target(&run.loaded.resolve(file), c.nrows())?),
        Some(TargetSection::Fourier { .. }) => cfg.target_spec()?.sample(grid, c.nrows())?,
    };
    Ok(Hypothesis::new(cfg.test_set(), c, target)?)
}

fn cmd_test(run: &Run) -> CliResult<Vec<PathBuf>> {
    let cfg = run.cfg();
    if cfg.hypothesis.is_none() {
        return Err(usage!("test needs a [hypothesis] section"));
    }
    let f = fit_data(run)?;
    let h = hypothesis(run, f.data.grid())?;
    let inf = &cfg.inference;
    let cov = SandwichCovariance::assemble_with(&f.design, f.data.y(), f.family, &f.fit.theta_hat, h.test_set(), inf.correction)?;
    let t = wald_test_with(&f.fit, &cov, &h, &f.basis, inf.middle, &inf.levels)?;
    ensure_dir(&run.out)?;

    let mut header: Vec<String> = ["statistic", "df", "p_value", "n_basis", "lambda", "converged"].map(String::from).to_vec();
    header.extend(inf.levels.iter().map(|l| format!("reject_{l}")));
    let mut result = Table::new(&header);
    let mut row = vec![
        num(t.statistic),
        t.df.to_string(),
        num(t.p_value),
        f.basis.size().to_string(),
        num(f.lambda),
        f.fit.converged.to_string(),
    ];
    row.extend(t.reject_at.iter().map(|(_, r)| r.to_string()));
    result.push(row);

    let mut ci = Table::new(&["coefficient", "estimate", "lower", "upper"]);
    for (k, iv) in ci_alpha(&f.fit, &cov, inf.ci_level)?.iter().enumerate() {
        ci.push(vec![(k + 1).to_string(), num(iv.estimate), num(iv.lower), num(iv.upper)]);
    }
    Ok(vec![run.write(&result, "test_result.csv")?, run.write(&ci, "test_alpha_ci.csv")?])
}

fn cmd_cv(run: &Run) -> CliResult<Vec<PathBuf>> {
    let cfg = run.cfg();
    let family = cfg.family()?;
    let data = load_data(run)?;
    check_groups(cfg, data.d())?;
    let cv = cv_select(&data, family, cfg.penalty.a, &cfg.test_set(), &cfg.cv_plan(family, run.seed), &cfg.solver)?;
    ensure_dir(&run.out)?;
    let mut table = Table::new(&["n_basis", "lambda", "score", "failed_folds"]);
    for p in &cv.table {
        table.push(vec![p.n_basis.to_string(), num(p.lambda), num(p.score), p.failed_folds.to_string()]);
    }
    let mut sel = Table::new(&["n_basis", "lambda", "warnings"]);
    sel.push(vec![cv.n_basis.to_string(), num(cv.lambda), cv.warnings.len().to_string()]);
    Ok(vec![run.write(&table, "cv_table.csv")?, run.write(&sel, "cv_selection.csv")?])
}

pub fn experiment_config(cfg: &RunConfig, seed: u64) -> CliResult<ExperimentConfig> {
    let scenario = cfg.scenario_config()?;
    let family = cfg.family()?;
    let tuning = match cfg.simulate.tuning {
        TuningChoice::Fixed => {
            let (n_basis, lambda) = cfg
                .fixed_tuning()
                .ok_or_else(|| usage!("simulate.tuning = \"fixed\" needs basis.size and penalty.lambda"))?;
            TuningMode::Fixed { n_basis, lambda }
        }
        TuningChoice::PerReplication => TuningMode::PerReplication(cfg.cv_plan(family, seed)),
        TuningChoice::Pilot => TuningMode::Pilot {
            plan: cfg.cv_plan(family, seed),
            pilots: cfg.simulate.pilots,
        },
    };
    let mut ec = ExperimentConfig::new(scenario, cfg.test_set(), tuning);
    ec.contrast = cfg.hypothesis.as_ref().and_then(|h| h.contrast.clone());
    ec.target = cfg.target_spec()?;
    ec.order = cfg.basis.order;
    ec.penalty_a = cfg.penalty.a;
    ec.solver = cfg.solver;
    ec.middle = cfg.inference.middle;
    ec.correction = cfg.inference.correction;
    ec.levels = cfg.inference.levels.clone();
    ec.ci_level = cfg.inference.ci_level;
    ec.validate()?;
    Ok(ec)
}

fn flag(v: Option<&bool>) -> String {
    v.map_or_else(|| "NA".into(), bool::to_string)
}

fn rep_row(name: &str, r: &ReplicationRecord, levels: usize, q: usize) -> Vec<String> {
    let mut row = vec![
        name.to_string(),
        r.rep.to_string(),
        r.seed.to_string(),
        r.n_basis.to_string(),
        num(r.lambda),
        r.converged.to_string(),
        r.iterations.to_string(),
        r.active_size.to_string(),
        opt_num(r.statistic),
        r.df.map_or_else(|| "NA".into(), |d| d.to_string()),
        opt_num(r.p_value),
    ];
    row.extend((0..levels).map(|i| flag(r.reject.get(i))));
    row.push(opt_num(r.alpha_error));
    row.extend((0..q).map(|k| flag(r.alpha_covered.get(k))));
    row.push(r.error.clone().unwrap_or_default());
    row
}

/// Per-replication and summary tables of a simulation run.
pub fn simulation_tables(name: &str, ec: &ExperimentConfig, res: &ExperimentResult) -> (Table, Table) {
    let q = ec.scenario.q();
    let levels = &ec.levels;
    let mut header: Vec<String> = [
        "scenario",
        "rep",
        "seed",
        "n_basis",
        "lambda",
        "converged",
        "iterations",
        "active_size",
        "statistic",
        "df",
        "p_value",
    ]
    .map(String::from)
    .to_vec();
    header.extend(levels.iter().map(|l| format!("reject_{l}")));
    header.push("alpha_error".into());
    header.extend((1..=q).map(|k| format!("alpha{k}_covered")));
    header.push("error".into());
    let mut reps = Table::new(&header);
    for r in &res.records {
        reps.push(rep_row(name, r, levels.len(), q));
    }

    let mut header: Vec<String> = ["scenario", "reps", "failures", "tests"].map(String::from).to_vec();
    header.extend(levels.iter().map(|l| format!("rate_{l}")));
    header.push("mean_alpha_error".into());
    header.extend((1..=q).map(|k| format!("alpha{k}_coverage")));
    header.push("converged_rate".into());
    let mut summary = Table::new(&header);
    let s = &res.summary;
    if s.reps > 0 {
        let mut row = vec![name.to_string(), s.reps.to_string(), s.failures.to_string(), s.tests.to_string()];
        row.extend(levels.iter().map(|&l| opt_num(s.rate_at(l))));
        row.push(opt_num(s.mean_alpha_error));
        row.extend((0..q).map(|k| opt_num(s.alpha_coverage.get(k).copied())));
        row.push(num(s.converged_rate));
        summary.push(row);
    }
    (reps, summary)
}

fn cmd_simulate(run: &Run, reps: Option<usize>) -> CliResult<Vec<PathBuf>> {
    let cfg = run.cfg();
    let reps = reps.ok_or_else(|| usage!("simulate needs reps (config key or --reps)"))?;
    let ec = experiment_config(cfg, run.seed)?;
    let res = run_experiment(&ec, reps, run.seed, None)?;
    ensure_dir(&run.out)?;
    let (rows, summary) = simulation_tables(&cfg.simulate.name, &ec, &res);
    Ok(vec![run.write(&rows, "simulate_reps.csv")?, run.write(&summary, "simulate_summary.csv")?])
}
