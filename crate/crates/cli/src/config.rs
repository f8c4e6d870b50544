//! TOML run configuration.
//!
//! Group indices are 1-based in the file and converted to 0-based here.
//! Relative paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use hdfp::inference::DEFAULT_LEVELS;
use hdfp::montecarlo::TargetSpec;
use hdfp::simgen::PredictorKind;
use hdfp::{CprsmConfig, CvPlan, Family, MiddleMatrix, NoiseModel, SandwichCorrection, ScadPenalty, ScenarioConfig};
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{usage, CliResult};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub family: Option<Family>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub reps: Option<usize>,
    /// Output directory.
    pub output: Option<PathBuf>,
    pub data: Option<DataSection>,
    #[serde(default)]
    pub basis: BasisSection,
    #[serde(default)]
    pub penalty: PenaltySection,
    #[serde(default)]
    pub solver: CprsmConfig,
    pub cv: Option<CvSection>,
    pub hypothesis: Option<HypothesisSection>,
    #[serde(default)]
    pub inference: InferenceSection,
    pub scenario: Option<ScenarioSection>,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub report: ReportSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub subjects: PathBuf,
    pub functional: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    pub order: usize,
    /// Basis size `N`; chosen by cross-validation when absent.
    pub size: Option<usize>,
}

impl Default for BasisSection {
    fn default() -> Self {
        Self { order: 4, size: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltySection {
    /// Chosen by cross-validation when absent.
    pub lambda: Option<f64>,
    pub a: f64,
}

impl Default for PenaltySection {
    fn default() -> Self {
        Self {
            lambda: None,
            a: ScadPenalty::DEFAULT_A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSection {
    pub folds: Option<usize>,
    pub n_grid: Option<Vec<usize>>,
    pub lambda_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum TargetSection {
    /// Only `"zero"` is accepted.
    Named(String),
    /// CSV with columns `s,t1,...,tr`.
    File { file: PathBuf },
    /// Row `r` is `fourier[r]` times the simulation coefficient profile.
    Fourier { fourier: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisSection {
    pub groups: Vec<usize>,
    /// Rows of `C`; identity when absent.
    pub contrast: Option<Vec<Vec<f64>>>,
    pub target: Option<TargetSection>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub levels: Vec<f64>,
    pub ci_level: f64,
    pub middle: MiddleMatrix,
    pub correction: SandwichCorrection,
}

impl Default for InferenceSection {
    fn default() -> Self {
        Self {
            levels: DEFAULT_LEVELS.to_vec(),
            ci_level: 0.95,
            middle: MiddleMatrix::default(),
            correction: SandwichCorrection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub n: usize,
    pub d: usize,
    pub noise: NoiseModel,
    #[serde(default = "yes")]
    pub baseline: bool,
    /// `[group, c]` pairs with 1-based groups.
    #[serde(default)]
    pub signals: Vec<(usize, f64)>,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    /// Correlation target of the surrogate predictors; uncorrelated when absent.
    pub correlation: Option<f64>,
    pub alpha0: Option<Vec<f64>>,
}

fn yes() -> bool {
    true
}

fn default_grid_size() -> usize {
    100
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TuningChoice {
    /// `basis.size` and `penalty.lambda` for every replication.
    Fixed,
    #[default]
    PerReplication,
    Pilot,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    /// Label written in every output row.
    pub name: String,
    pub tuning: TuningChoice,
    pub pilots: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            tuning: TuningChoice::default(),
            pilots: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// 1-based groups whose estimated curve is written by `fit`; all active groups when absent.
    pub curves: Option<Vec<usize>>,
    pub curve_points: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            curves: None,
            curve_points: 101,
        }
    }
}

/// A parsed config with the facts needed for provenance.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
    /// SHA-256 of the config file bytes, hex encoded.
    pub hash: String,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| usage!("cannot read config {}: {e}", path.display()))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| usage!("config {} is not valid UTF-8", path.display()))?;
        Self::parse(text, path.parent().unwrap_or(Path::new(".")), &path.display().to_string())
    }

    /// Parses config text; `origin` names the source in error messages.
    pub fn parse(text: &str, base_dir: &Path, origin: &str) -> CliResult<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
            match line {
                Some(l) => usage!("{origin}:{l}: {}", e.message()),
                None => usage!("{origin}: {}", e.message()),
            }
        })?;
        config.validate().map_err(|e| usage!("{origin}: {e}"))?;
        Ok(Self {
            config,
            base_dir: base_dir.to_path_buf(),
            hash: hex::encode(Sha256::digest(text.as_bytes())),
        })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

fn to_zero_based(groups: &[usize], what: &str) -> CliResult<Vec<usize>> {
    groups
        .iter()
        .map(|&g| g.checked_sub(1).ok_or_else(|| usage!("{what}: groups are numbered from 1")))
        .collect()
}

impl RunConfig {
    /// Checks that do not need the data.
    pub fn validate(&self) -> CliResult<()> {
        if self.threads == Some(0) {
            return Err(usage!("threads must be at least 1"));
        }
        if self.basis.order == 0 {
            return Err(usage!("basis.order must be at least 1"));
        }
        if let Some(n) = self.basis.size {
            if n < self.basis.order {
                return Err(usage!("basis.size {n} is smaller than basis.order {}", self.basis.order));
            }
        }
        ScadPenalty::new(self.penalty.lambda.unwrap_or(0.0), self.penalty.a).map_err(|e| usage!("penalty: {e}"))?;
        if let Some(h) = &self.hypothesis {
            if h.groups.is_empty() {
                return Err(usage!("hypothesis.groups is empty"));
            }
            let zero = to_zero_based(&h.groups, "hypothesis.groups")?;
            let mut sorted = zero.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != zero.len() {
                return Err(usage!("hypothesis.groups lists a group twice"));
            }
            if let Some(TargetSection::Named(name)) = &h.target {
                if name != "zero" {
                    return Err(usage!("hypothesis.target must be \"zero\", {{ file = ... }} or {{ fourier = [...] }}, got \"{name}\""));
                }
            }
        }
        let inf = &self.inference;
        if !(inf.ci_level > 0.0 && inf.ci_level < 1.0) {
            return Err(usage!("inference.ci_level must lie in (0, 1)"));
        }
        if let Some(l) = inf.levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(usage!("inference.levels must lie in (0, 1), got {l}"));
        }
        if self.report.curve_points < 2 {
            return Err(usage!("report.curve_points must be at least 2"));
        }
        if let Some(c) = &self.report.curves {
            to_zero_based(c, "report.curves")?;
        }
        if let Some(s) = &self.scenario {
            to_zero_based(&s.signals.iter().map(|p| p.0).collect::<Vec<_>>(), "scenario.signals")?;
        }
        Ok(())
    }

    /// Family from `family`, or from the scenario noise model when only a scenario is given.
    pub fn family(&self) -> CliResult<Family> {
        let from_scenario = self.scenario.as_ref().map(|s| s.noise.family());
        match (self.family, from_scenario) {
            (Some(f), Some(g)) if f != g => Err(usage!("family = \"{f}\" conflicts with scenario.noise, which implies {g}")),
            (Some(f), _) => Ok(f),
            (None, Some(g)) => Ok(g),
            (None, None) => Err(usage!("family is not set")),
        }
    }

    /// Tested groups, 0-based; empty without a `[hypothesis]` section.
    pub fn test_set(&self) -> Vec<usize> {
        self.hypothesis
            .as_ref()
            .map(|h| h.groups.iter().map(|g| g - 1).collect())
            .unwrap_or_default()
    }

    /// The fixed `(N, lambda)` pair, if both are set.
    pub fn fixed_tuning(&self) -> Option<(usize, f64)> {
        self.basis.size.zip(self.penalty.lambda)
    }

    /// Cross-validation plan; a value set in `[basis]` or `[penalty]` pins that grid to one point.
    pub fn cv_plan(&self, family: Family, seed: u64) -> CvPlan {
        let mut plan = CvPlan::default_for(family);
        plan.order = self.basis.order;
        plan.seed = seed;
        if let Some(cv) = &self.cv {
            if let Some(f) = cv.folds {
                plan.folds = f;
            }
            if let Some(g) = &cv.n_grid {
                plan.n_grid = g.clone();
            }
            if let Some(g) = &cv.lambda_grid {
                plan.lambda_grid = g.clone();
            }
        }
        if let Some(n) = self.basis.size {
            plan.n_grid = vec![n];
        }
        if let Some(l) = self.penalty.lambda {
            plan.lambda_grid = vec![l];
        }
        plan
    }

    pub fn scenario_config(&self) -> CliResult<ScenarioConfig> {
        let s = self.scenario.as_ref().ok_or_else(|| usage!("simulate needs a [scenario] section"))?;
        let mut sc = ScenarioConfig::new(s.n, s.d, s.noise);
        sc.baseline = s.baseline;
        sc.signals = s.signals.iter().map(|&(j, c)| (j - 1, c)).collect();
        sc.grid_size = s.grid_size;
        if let Some(r) = s.correlation {
            sc.predictors = PredictorKind::CorrelatedSurrogate { target_corr: r };
        }
        sc.alpha0 = s.alpha0.clone();
        sc.validate().map_err(|e| usage!("scenario: {e}"))?;
        Ok(sc)
    }

    /// Target of the simulated hypothesis; file targets are not supported there.
    pub fn target_spec(&self) -> CliResult<TargetSpec> {
        match self.hypothesis.as_ref().and_then(|h| h.target.as_ref()) {
            None | Some(TargetSection::Named(_)) => Ok(TargetSpec::Zero),
            Some(TargetSection::Fourier { fourier }) => Ok(TargetSpec::Fourier { scales: fourier.clone() }),
            Some(TargetSection::File { .. }) => Err(usage!("simulate supports hypothesis.target = \"zero\" or {{ fourier = [...] }} only")),
        }
    }
}
