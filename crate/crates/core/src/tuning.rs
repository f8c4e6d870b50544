//! K-fold cross-validation over the joint grid of basis sizes and penalty
//! levels, scored by held-out mean negative log-likelihood.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bspline::BSplineBasis;
use crate::cprsm::{fit_design, CprsmConfig};
use crate::error::{ensure, HdfpError, Result};
use crate::glm::{loss_from_eta, DesignMatrix, Family, FunctionalDataset};
use crate::penalty::ScadPenalty;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvPlan {
    pub folds: usize,
    /// Candidate basis sizes `N`.
    pub n_grid: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    /// Spline order used for every candidate basis.
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_order() -> usize {
    4
}

impl CvPlan {
    /// Ten folds, `N` in `{4, 6, 8, 10, 12}` and a family-dependent `lambda` grid.
    pub fn default_for(family: Family) -> Self {
        let lambda_grid = match family {
            Family::Gaussian => (0..=15).map(|i| i as f64 / 10.0).collect(),
            Family::Logistic => vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.4],
        };
        Self {
            folds: 10,
            n_grid: vec![4, 6, 8, 10, 12],
            lambda_grid,
            order: default_order(),
            seed: 0,
        }
    }

    /// Plan with a single candidate `(N, lambda)`.
    pub fn fixed(n_basis: usize, lambda: f64) -> Self {
        Self {
            folds: 10,
            n_grid: vec![n_basis],
            lambda_grid: vec![lambda],
            order: default_order(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.folds >= 2, Config, "cross-validation needs at least 2 folds");
        ensure!(!self.n_grid.is_empty(), Config, "basis-size grid is empty");
        ensure!(!self.lambda_grid.is_empty(), Config, "lambda grid is empty");
        ensure!(self.order >= 1, Config, "spline order must be at least 1");
        for &nb in &self.n_grid {
            ensure!(nb >= self.order, Config, "basis size {nb} is smaller than the spline order {}", self.order);
        }
        for &l in &self.lambda_grid {
            ensure!(l.is_finite() && l >= 0.0, Config, "lambda grid values must be finite and nonnegative, got {l}");
        }
        Ok(())
    }
}

/// One row of the cross-validation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvPoint {
    pub n_basis: usize,
    pub lambda: f64,
    /// Held-out mean negative log-likelihood; `+inf` when a fold failed.
    pub score: f64,
    pub failed_folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvOutcome {
    pub n_basis: usize,
    pub lambda: f64,
    /// Rows ordered by `N`, then `lambda`, as in the plan.
    pub table: Vec<CvPoint>,
    pub warnings: Vec<String>,
}

/// Seeded shuffle of `0..n` cut into `k` folds whose sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    ensure!(k >= 2, InvalidArgument, "need at least 2 folds, got {k}");
    ensure!(k <= n, InvalidArgument, "{k} folds requested for {n} subjects");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = idx[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

/// Held-out negative log-likelihood summed over the subjects of one fold.
#[allow(clippy::too_many_arguments)]
fn fold_loss(
    design: &DesignMatrix,
    y: &nalgebra::DVector<f64>,
    folds: &[Vec<usize>],
    f: usize,
    family: Family,
    penalty: &ScadPenalty,
    test_set: &[usize],
    config: &CprsmConfig,
) -> Result<f64> {
    let held = &folds[f];
    let train: Vec<usize> = folds.iter().enumerate().filter(|(g, _)| *g != f).flat_map(|(_, v)| v.iter().copied()).collect();
    let yt = nalgebra::DVector::from_iterator(train.len(), train.iter().map(|&i| y[i]));
    let fit = fit_design(&design.select_rows(&train), &yt, family, penalty, test_set, config, None)?;
    let dh = design.select_rows(held);
    let yh = nalgebra::DVector::from_iterator(held.len(), held.iter().map(|&i| y[i]));
    let eta = dh.linear_predictor(&fit.theta_hat);
    let total = loss_from_eta(&eta, &yh, family) * held.len() as f64;
    ensure!(total.is_finite(), Numerical, "held-out loss is not finite");
    Ok(total)
}

/// Selects `(N, lambda)` minimizing the held-out mean negative log-likelihood.
///
/// Every candidate is scored on the same folds. Among equal scores the smaller
/// `N` wins, then the larger `lambda`.
pub fn cv_select(
    dataset: &FunctionalDataset,
    family: Family,
    penalty_a: f64,
    test_set: &[usize],
    plan: &CvPlan,
    config: &CprsmConfig,
) -> Result<CvOutcome> {
    plan.validate()?;
    for &l in &plan.lambda_grid {
        config.validate(&ScadPenalty::new(l, penalty_a)?)?;
    }
    let n = dataset.n();
    let folds = kfold_split(n, plan.folds, plan.seed)?;
    let designs = plan
        .n_grid
        .iter()
        .map(|&nb| DesignMatrix::build(dataset, &BSplineBasis::with_size(plan.order, nb)?))
        .collect::<Result<Vec<_>>>()?;

    let units: Vec<(usize, usize, usize)> = (0..plan.n_grid.len())
        .flat_map(|a| (0..plan.lambda_grid.len()).flat_map(move |b| (0..plan.folds).map(move |f| (a, b, f))))
        .collect();
    let losses: Vec<Result<f64>> = units
        .par_iter()
        .map(|&(a, b, f)| {
            let penalty = ScadPenalty::new(plan.lambda_grid[b], penalty_a)?;
            fold_loss(&designs[a], dataset.y(), &folds, f, family, &penalty, test_set, config)
        })
        .collect();

    let mut table = Vec::with_capacity(plan.n_grid.len() * plan.lambda_grid.len());
    let mut warnings = Vec::new();
    for (chunk, unit) in losses.chunks(plan.folds).zip(units.chunks(plan.folds)) {
        let (a, b, _) = unit[0];
        let (nb, lambda) = (plan.n_grid[a], plan.lambda_grid[b]);
        let mut failed = 0;
        let mut total = 0.0;
        for r in chunk {
            match r {
                Ok(v) => total += v,
                Err(e) if e.is_usage() => return Err(e.clone()),
                Err(e) => {
                    failed += 1;
                    warnings.push(format!("N = {nb}, lambda = {lambda}: {e}"));
                }
            }
        }
        let score = if failed > 0 { f64::INFINITY } else { total / n as f64 };
        table.push(CvPoint {
            n_basis: nb,
            lambda,
            score,
            failed_folds: failed,
        });
    }

    let best = best_point(&table)?;
    Ok(CvOutcome {
        n_basis: best.n_basis,
        lambda: best.lambda,
        table,
        warnings,
    })
}

/// Lowest finite score; ties go to the smaller `N`, then the larger `lambda`.
pub fn best_point(table: &[CvPoint]) -> Result<CvPoint> {
    table
        .iter()
        .filter(|p| p.score.is_finite())
        .min_by(|x, y| {
            x.score
                .total_cmp(&y.score)
                .then(x.n_basis.cmp(&y.n_basis))
                .then(y.lambda.total_cmp(&x.lambda))
        })
        .cloned()
        .ok_or_else(|| HdfpError::Numerical("every cross-validation candidate failed".into()))
}
