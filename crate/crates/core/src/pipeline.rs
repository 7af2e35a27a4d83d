//! Fitting, tuning and classification on the learned basis.
//!
//! A fitted basis `Ẑ` is orthonormalized to `Q̂`, and a Gaussian LDA rule with a
//! pooled covariance is fitted to the projected data `XQ̂`.

use std::fmt;
use std::str::FromStr;

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{compute_group_statistics, LabeledDataset, MethodVariant, TargetPair};
use crate::error::{Result, SoblError};
use crate::linalg::{self, l2};
use crate::ordinal_weights::{anova_f_test, OrdinalWeightVector};
use crate::solver::{self, lambda_max, BasisEstimate, PenaltySpec, SolverConfig};

/// Ridge added to `Σ̂` before fitting, relative to its mean diagonal.
pub const DEFAULT_RIDGE_FACTOR: f64 = 1e-4;

/// Relative ridge for a singular reduced pooled covariance.
const REDUCED_RIDGE_FACTOR: f64 = 1e-10;

/// Options shared by every basis fit of the pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// `ε = ridge_factor · mean diag(Σ̂)`.
    pub ridge_factor: f64,
    pub solver: SolverConfig,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            ridge_factor: DEFAULT_RIDGE_FACTOR,
            solver: SolverConfig::default(),
        }
    }
}

/// Target pair of `data` with the pipeline ridge attached.
pub fn stabilized_target(data: &LabeledDataset, variant: MethodVariant, ridge_factor: f64) -> Result<TargetPair> {
    let target = compute_group_statistics(data)?.into_target_pair(variant)?;
    let eps = ridge_factor * target.mean_diagonal();
    Ok(target.with_ridge(eps))
}

/// Fits `Ẑ` at `(λ, η)` on the ridge-stabilized target of `data`.
pub fn fit_basis(
    data: &LabeledDataset,
    variant: MethodVariant,
    weights: &OrdinalWeightVector,
    lambda: f64,
    eta: f64,
    options: &FitOptions,
) -> Result<BasisEstimate> {
    let target = stabilized_target(data, variant, options.ridge_factor)?;
    solver::sobl_fit(&target, &PenaltySpec::new(lambda, eta, weights)?, &options.solver)
}

/// Orthonormal basis of the column space of `z` by modified Gram–Schmidt with one
/// reorthogonalization pass. Columns whose remainder falls below `1e−10·‖Z‖_F` are dropped.
pub fn orthonormalize_basis(z: ArrayView2<f64>) -> Result<Array2<f64>> {
    let fro = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if fro == 0.0 {
        return Err(SoblError::EmptyBasis);
    }
    let tol = 1e-10 * fro;
    let mut cols: Vec<Array1<f64>> = Vec::new();
    for c in z.columns() {
        let mut v = c.to_owned();
        for _ in 0..2 {
            for u in &cols {
                let d = u.dot(&v);
                v.scaled_add(-d, u);
            }
        }
        let n = l2(v.view());
        if n > tol {
            v /= n;
            cols.push(v);
        }
    }
    let mut q = Array2::zeros((z.nrows(), cols.len()));
    for (mut dst, src) in q.columns_mut().into_iter().zip(&cols) {
        dst.assign(src);
    }
    Ok(q)
}

/// Gaussian LDA in the reduced space `x ↦ Qᵀx`.
///
/// The score of class `g` is `xᵀQ a_g + b_g` with `a_g = S⁻¹ν_g` and
/// `b_g = −½ ν_gᵀS⁻¹ν_g + ln π_g`, where `ν_g` are the reduced class means and `S`
/// the reduced pooled covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedClassifier {
    q: Array2<f64>,
    reduced_means: Array2<f64>,
    reduced_pooled_cov: Array2<f64>,
    priors: Array1<f64>,
    active_set: Vec<usize>,
    coef: Array2<f64>,
    intercept: Array1<f64>,
    /// Column scales applied to new data before projection.
    #[serde(default)]
    feature_scale: Option<Array1<f64>>,
}

impl FittedClassifier {
    /// Classifier with no discriminant directions: always predicts the most
    /// frequent training class.
    pub fn prior_only(p: usize, counts: &[usize]) -> Self {
        let n: usize = counts.iter().sum();
        let priors: Array1<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        FittedClassifier {
            q: Array2::zeros((p, 0)),
            reduced_means: Array2::zeros((counts.len(), 0)),
            reduced_pooled_cov: Array2::zeros((0, 0)),
            intercept: priors.mapv(f64::ln),
            priors,
            active_set: vec![],
            coef: Array2::zeros((0, counts.len())),
            feature_scale: None,
        }
    }

    pub fn q(&self) -> ArrayView2<'_, f64> {
        self.q.view()
    }

    pub fn reduced_means(&self) -> ArrayView2<'_, f64> {
        self.reduced_means.view()
    }

    pub fn reduced_pooled_cov(&self) -> ArrayView2<'_, f64> {
        self.reduced_pooled_cov.view()
    }

    pub fn priors(&self) -> ArrayView1<'_, f64> {
        self.priors.view()
    }

    pub fn active_set(&self) -> &[usize] {
        &self.active_set
    }

    pub fn feature_scale(&self) -> Option<ArrayView1<'_, f64>> {
        self.feature_scale.as_ref().map(|s| s.view())
    }

    pub fn with_feature_scale(mut self, scale: Array1<f64>) -> Self {
        self.feature_scale = Some(scale);
        self
    }

    pub fn p(&self) -> usize {
        self.q.nrows()
    }

    pub fn k(&self) -> usize {
        self.priors.len()
    }

    pub fn rank(&self) -> usize {
        self.q.ncols()
    }

    /// Records the active set of the basis this classifier was built from.
    pub fn with_active_set(mut self, active: Vec<usize>) -> Self {
        self.active_set = active;
        self
    }
}

fn support(q: ArrayView2<f64>) -> Vec<usize> {
    q.rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().any(|&v| v != 0.0))
        .map(|(j, _)| j)
        .collect()
}

/// `XQ`, using only the rows of `Q` that are nonzero.
fn project(x: ArrayView2<f64>, q: ArrayView2<f64>) -> Array2<f64> {
    let rows = support(q);
    if rows.len() == q.nrows() {
        return x.dot(&q);
    }
    x.select(Axis(1), &rows).dot(&q.select(Axis(0), &rows))
}

/// Fits the reduced-space LDA rule to `(XQ, y)`.
pub fn fit_projected_lda(data: &LabeledDataset, q: ArrayView2<f64>) -> Result<FittedClassifier> {
    if q.nrows() != data.p() {
        return Err(SoblError::DimensionMismatch(format!(
            "basis has {} rows, data has {} columns",
            q.nrows(),
            data.p()
        )));
    }
    let counts = data.counts();
    if q.ncols() == 0 {
        return Ok(FittedClassifier::prior_only(data.p(), &counts));
    }
    let (n, k, r) = (data.n(), data.k(), q.ncols());
    if n <= k {
        return Err(SoblError::InvalidArgument(format!("need N > K, got N = {n}, K = {k}")));
    }
    let xr = project(data.x(), q);
    let mut means = Array2::<f64>::zeros((k, r));
    for (row, &l) in xr.rows().into_iter().zip(data.y()) {
        let mut m = means.row_mut(l - 1);
        m += &row;
    }
    for (mut m, &c) in means.rows_mut().into_iter().zip(&counts) {
        m /= c as f64;
    }
    let mut centered = xr;
    for (mut row, &l) in centered.rows_mut().into_iter().zip(data.y()) {
        row -= &means.row(l - 1);
    }
    let mut cov = centered.t().dot(&centered) / (n - k) as f64;
    let sym = (&cov + &cov.t()) * 0.5;
    cov = sym;

    let chol = match linalg::cholesky(cov.view()) {
        Ok(l) => l,
        Err(_) => {
            let scale = cov.diag().mean().unwrap_or(0.0);
            let eps = REDUCED_RIDGE_FACTOR * if scale > 0.0 { scale } else { 1.0 };
            warn!("reduced pooled covariance is singular; adding ridge {eps:e}");
            cov.diag_mut().mapv_inplace(|d| d + eps);
            linalg::cholesky(cov.view())
                .map_err(|_| SoblError::NotPositiveDefinite("reduced pooled covariance".into()))?
        }
    };
    let coef = cholesky_solve(chol.view(), means.t());
    let priors: Array1<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let intercept = Array1::from_iter((0..k).map(|g| {
        -0.5 * means.row(g).dot(&coef.column(g)) + priors[g].ln()
    }));
    Ok(FittedClassifier {
        q: q.to_owned(),
        reduced_means: means,
        reduced_pooled_cov: cov,
        priors,
        active_set: support(q),
        coef,
        intercept,
        feature_scale: None,
    })
}

/// Solves `LLᵀX = B` by two triangular substitutions.
fn cholesky_solve(l: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for mut col in x.columns_mut() {
        for i in 0..n {
            let mut s = col[i];
            for j in 0..i {
                s -= l[[i, j]] * col[j];
            }
            col[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for j in (i + 1)..n {
                s -= l[[j, i]] * col[j];
            }
            col[i] = s / l[[i, i]];
        }
    }
    x
}

/// Predicted labels `1..=K`; ties go to the smaller label.
pub fn predict(model: &FittedClassifier, x: ArrayView2<f64>) -> Result<Vec<usize>> {
    if x.ncols() != model.p() {
        return Err(SoblError::DimensionMismatch(format!(
            "model expects {} columns, data has {}",
            model.p(),
            x.ncols()
        )));
    }
    let scores = if model.rank() == 0 {
        Array2::zeros((x.nrows(), model.k()))
    } else {
        let reduced = match &model.feature_scale {
            Some(s) => project((&x / s).view(), model.q.view()),
            None => project(x, model.q.view()),
        };
        reduced.dot(&model.coef)
    };
    Ok(scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            let mut best_score = f64::NEG_INFINITY;
            for (g, (&s, &b)) in row.iter().zip(&model.intercept).enumerate() {
                if s + b > best_score {
                    best_score = s + b;
                    best = g;
                }
            }
            best + 1
        })
        .collect())
}

/// Mean of `|ŷ − y|^k` for `k = 0, 1, 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
}

pub fn evaluate_losses(yhat: &[usize], y: &[usize]) -> Result<LossReport> {
    if yhat.len() != y.len() {
        return Err(SoblError::DimensionMismatch(format!(
            "{} predictions for {} labels",
            yhat.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(SoblError::InvalidArgument("no observations to score".into()));
    }
    let n = y.len() as f64;
    let (mut l0, mut l1, mut l2) = (0usize, 0usize, 0usize);
    for (&a, &b) in yhat.iter().zip(y) {
        let d = a.abs_diff(b);
        l0 += usize::from(d != 0);
        l1 += d;
        l2 += d * d;
    }
    Ok(LossReport {
        l0: l0 as f64 / n,
        l1: l1 as f64 / n,
        l2: l2 as f64 / n,
    })
}

/// Basis and classifier fitted together.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub estimate: BasisEstimate,
    pub classifier: FittedClassifier,
}

/// Classifier on the basis `z`, or the prior-only rule when `z` is zero.
pub fn classifier_from_basis(data: &LabeledDataset, z: ArrayView2<f64>) -> Result<FittedClassifier> {
    match orthonormalize_basis(z) {
        Ok(q) => fit_projected_lda(data, q.view()),
        Err(SoblError::EmptyBasis) => Ok(FittedClassifier::prior_only(data.p(), &data.counts())),
        Err(e) => Err(e),
    }
}

/// Basis at `(λ, η)` followed by the projected LDA rule, all on `data`.
pub fn fit_model(
    data: &LabeledDataset,
    variant: MethodVariant,
    weights: &OrdinalWeightVector,
    lambda: f64,
    eta: f64,
    options: &FitOptions,
) -> Result<FittedModel> {
    let estimate = fit_basis(data, variant, weights, lambda, eta, options)?;
    if estimate.is_empty() {
        warn!("empty basis at lambda = {lambda:e}; falling back to the prior-only rule");
    }
    let classifier = classifier_from_basis(data, estimate.z.view())?.with_active_set(estimate.active_set.clone());
    Ok(FittedModel { estimate, classifier })
}

/// Assigns each observation a fold in `0..folds`, class by class.
///
/// Each class is shuffled with a ChaCha8 stream seeded by `seed` and dealt out in
/// turn, so every fold holds `⌊n_g/folds⌋` or `⌈n_g/folds⌉` members of class `g`.
/// Every validation fold must see every class and every training part must keep
/// two observations per class.
pub fn stratified_folds(y: &[usize], k: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(SoblError::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in y.iter().enumerate() {
        if l == 0 || l > k {
            return Err(SoblError::InvalidLabel { label: l, k });
        }
        by_class[l - 1].push(i);
    }
    for (g, members) in by_class.iter().enumerate() {
        let n = members.len();
        if n < folds || n - n.div_ceil(folds) < 2 {
            return Err(SoblError::Stratification(format!(
                "class {} has {n} observations, too few for {folds} folds",
                g + 1
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; y.len()];
    let mut next = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            assignment[i] = next;
            next = (next + 1) % folds;
        }
    }
    Ok(assignment)
}

/// Split of `data` into (training, validation) for `fold`.
pub fn fold_split(data: &LabeledDataset, assignment: &[usize], fold: usize) -> Result<(LabeledDataset, LabeledDataset)> {
    let (val, train): (Vec<usize>, Vec<usize>) = (0..data.n()).partition(|&i| assignment[i] == fold);
    Ok((data.subset(&train)?, data.subset(&val)?))
}

/// Criterion maximized by cross-validation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scoring {
    /// `1 − l0`.
    #[default]
    Accuracy,
    /// `−l1`.
    L1,
    /// `−l2`.
    L2,
}

impl Scoring {
    pub fn score(self, losses: &LossReport) -> f64 {
        match self {
            Scoring::Accuracy => 1.0 - losses.l0,
            Scoring::L1 => -losses.l1,
            Scoring::L2 => -losses.l2,
        }
    }
}

impl FromStr for Scoring {
    type Err = SoblError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "accuracy" | "l0" => Ok(Scoring::Accuracy),
            "l1" => Ok(Scoring::L1),
            "l2" => Ok(Scoring::L2),
            other => Err(SoblError::InvalidArgument(format!("unknown scoring '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TuningMethod {
    TwoStep,
    Grid,
}

impl fmt::Display for TuningMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TuningMethod::TwoStep => "two-step",
            TuningMethod::Grid => "grid",
        })
    }
}

impl FromStr for TuningMethod {
    type Err = SoblError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "two-step" | "twostep" => Ok(TuningMethod::TwoStep),
            "grid" => Ok(TuningMethod::Grid),
            other => Err(SoblError::InvalidArgument(format!("unknown tuning mode '{other}'"))),
        }
    }
}

/// One evaluated `(λ, η)` point.
///
/// Cross-validated points carry the mean fold score and the mean fold active-set
/// size. Points of the second two-step stage are fits on the whole data and carry
/// no score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRecord {
    pub lambda: f64,
    pub eta: f64,
    pub score: Option<f64>,
    pub active_size: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub lambda_tilde: f64,
    pub eta_tilde: f64,
    pub lambda_max: f64,
    /// Upper end of the `η` sweep (two-step only).
    pub eta_max: Option<f64>,
    pub cv_table: Vec<CvRecord>,
    pub method: TuningMethod,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub folds: usize,
    /// Points of the log-spaced `λ` grid.
    pub grid_size: usize,
    /// Lower end of the `λ` grid as a fraction of `λ_max`.
    pub lambda_ratio: f64,
    /// Points of the two-step `η` sweep.
    pub eta_grid_size: usize,
    /// Points of the default `η` grid for grid search.
    pub grid_eta_size: usize,
    /// Upper end of the default `η` grid for grid search.
    pub grid_eta_max: f64,
    /// Active-set size at which a fold's `λ` path stops. `None` uses the
    /// within-class degrees of freedom `N_train − K` of the fold.
    ///
    /// Below that point the within-class covariance restricted to the active set is
    /// singular up to the ridge, the fits are interpolating and the solver needs
    /// thousands of sweeps. A path also stops after its first fit that does not
    /// converge. Grid points past the stop in any fold get no score.
    pub max_active: Option<usize>,
    /// Max row change below which consecutive `η` fits count as unchanged.
    pub stability_tol: f64,
    pub seed: u64,
    pub scoring: Scoring,
    pub fit: FitOptions,
    /// Run folds concurrently. Each fold holds its own `p × p` covariance.
    pub parallel_folds: bool,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            folds: 5,
            grid_size: 50,
            lambda_ratio: 1e-3,
            eta_grid_size: 25,
            grid_eta_size: 10,
            grid_eta_max: 10.0,
            max_active: None,
            stability_tol: 1e-6,
            seed: 0,
            scoring: Scoring::Accuracy,
            fit: FitOptions::default(),
            parallel_folds: true,
        }
    }
}

/// Largest `p` for which folds are run concurrently by default.
const PARALLEL_FOLD_MAX_P: usize = 2000;

/// Log-spaced `λ` values from `λ_max` down to `ratio·λ_max`.
pub fn default_lambda_grid(lambda_max: f64, ratio: f64, size: usize) -> Vec<f64> {
    let mut g = linalg::log_space(lambda_max * ratio, lambda_max, size);
    g.reverse();
    g.dedup();
    g
}

/// Scores and active-set sizes over `λ` paths, one path per `η`, on one fold.
/// Indexed `[eta][lambda]`; `None` past the saturation stop.
type FoldGrid = Vec<Vec<Option<(f64, usize)>>>;

fn evaluate_fold(
    train: &LabeledDataset,
    val: &LabeledDataset,
    variant: MethodVariant,
    weights: &OrdinalWeightVector,
    lambdas: &[f64],
    etas: &[f64],
    config: &TuneConfig,
) -> Result<FoldGrid> {
    let target = stabilized_target(train, variant, config.fit.ridge_factor)?;
    let limit = config.max_active.unwrap_or(train.n().saturating_sub(train.k()).max(1));
    etas.iter()
        .map(|&eta| {
            let mut out = vec![None; lambdas.len()];
            let mut solver_config = config.fit.solver.clone();
            for (l, &lambda) in lambdas.iter().enumerate() {
                let penalty = PenaltySpec::new(lambda, eta, weights)?;
                let fit = solver::sobl_fit(&target, &penalty, &solver_config)?;
                let model = classifier_from_basis(train, fit.z.view())?;
                let yhat = predict(&model, val.x())?;
                let loss = evaluate_losses(&yhat, val.y())?;
                out[l] = Some((config.scoring.score(&loss), fit.active_set.len()));
                if fit.active_set.len() >= limit || !fit.converged {
                    break;
                }
                solver_config.warm_start = Some(fit.z);
            }
            Ok(out)
        })
        .collect()
}

/// Validation score of a single cold-started fit on one fold.
pub fn fold_score(
    data: &LabeledDataset,
    assignment: &[usize],
    fold: usize,
    variant: MethodVariant,
    weights: &OrdinalWeightVector,
    lambda: f64,
    eta: f64,
    config: &TuneConfig,
) -> Result<f64> {
    let (train, val) = fold_split(data, assignment, fold)?;
    let model = fit_model(&train, variant, weights, lambda, eta, &config.fit)?;
    let loss = evaluate_losses(&predict(&model.classifier, val.x())?, val.y())?;
    Ok(config.scoring.score(&loss))
}

/// Mean fold scores and active-set sizes over the `(η, λ)` grid, `None` where some
/// fold stopped before the point.
fn cross_validate(
    data: &LabeledDataset,
    variant: MethodVariant,
    weights: &OrdinalWeightVector,
    lambdas: &[f64],
    etas: &[f64],
    config: &TuneConfig,
) -> Result<Vec<Vec<Option<(f64, f64)>>>> {
    if weights.len() != data.p() {
        return Err(SoblError::DimensionMismatch(format!(
            "{} weights for {} variables",
            weights.len(),
            data.p()
        )));
    }
    let assignment = stratified_folds(data.y(), data.k(), config.folds, config.seed)?;
    let run = |f: usize| -> Result<FoldGrid> {
        let (train, val) = fold_split(data, &assignment, f)?;
        evaluate_fold(&train, &val, variant, weights, lambdas, etas, config)
    };
    let per_fold: Vec<FoldGrid> = if config.parallel_folds && data.p() <= PARALLEL_FOLD_MAX_P {
        (0..config.folds).into_par_iter().map(run).collect::<Result<_>>()?
    } else {
        (0..config.folds).map(run).collect::<Result<_>>()?
    };
    let nf = config.folds as f64;
    Ok((0..etas.len())
        .map(|e| {
            (0..lambdas.len())
                .map(|l| {
                    let mut score = 0.0;
                    let mut size = 0.0;
                    for fold in &per_fold {
                        let (s, a) = fold[e][l]?;
                        score += s;
                        size += a as f64;
                    }
                    Some((score / nf, size / nf))
                })
                .collect()
        })
        .collect())
}

/// Two-step tuning.
///
/// Step 1 fixes `η = 1` and picks `λ̃` maximizing the cross-validated score over
/// a log grid ending at `λ_max = ‖M̂‖_{∞,2}`, ties toward larger `λ`. Step 2 fixes
/// `λ̃` and sweeps `η` from 1 to `η_max = 2(‖M̂‖_{∞,2}/λ̃ + 1)` on the whole data;
/// `η̃` is the first grid value after which the active set stays the same and no
/// row moves by more than `stability_tol`.
pub fn tune_two_step(
    data: &LabeledDataset,
    variant: MethodVariant,
    weights: &OrdinalWeightVector,
    config: &TuneConfig,
) -> Result<TuningResult> {
    let target = stabilized_target(data, variant, config.fit.ridge_factor)?;
    let m_norm = linalg::inf2_norm(target.m_hat());
    if m_norm == 0.0 {
        return Err(SoblError::DegenerateInput("all class means coincide".into()));
    }
    let lmax = lambda_max(&target, Array1::<f64>::ones(data.p()).view(), 1.0);
    let lambdas = default_lambda_grid(lmax, config.lambda_ratio, config.grid_size);
    let cv = cross_validate(data, variant, weights, &lambdas, &[1.0], config)?;

    let mut best: Option<(usize, f64)> = None;
    for (i, cell) in cv[0].iter().enumerate() {
        // grid runs from large to small λ, so keep the first maximum
        if let Some((s, _)) = *cell {
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((i, s));
            }
        }
    }
    let (best, _) = best.expect("the largest λ is evaluated in every fold");
    let lambda_tilde = lambdas[best];
    let mut table: Vec<CvRecord> = lambdas
        .iter()
        .zip(&cv[0])
        .map(|(&lambda, cell)| CvRecord {
            lambda,
            eta: 1.0,
            score: cell.map(|c| c.0),
            active_size: cell.map(|c| c.1),
        })
        .collect();

    let eta_max = 2.0 * (m_norm / lambda_tilde + 1.0);
    let etas = linalg::log_space(1.0, eta_max, config.eta_grid_size.max(1));
    let etas: Vec<f64> = if etas.len() == 1 { vec![1.0] } else { etas };
    let path = solver::eta_path(&target, weights, lambda_tilde, &etas, &config.fit.solver)?;
    let stable_from = stable_suffix_start(&path, config.stability_tol);
    table.extend(etas.iter().zip(&path).map(|(&eta, fit)| CvRecord {
        lambda: lambda_tilde,
        eta,
        score: None,
        active_size: Some(fit.active_set.len() as f64),
    }));
    Ok(TuningResult {
        lambda_tilde,
        eta_tilde: etas[stable_from],
        lambda_max: lmax,
        eta_max: Some(eta_max),
        cv_table: table,
        method: TuningMethod::TwoStep,
    })
}

/// Smallest index `i` such that every consecutive pair of fits from `i` on has the
/// same active set and a maximum row change below `tol`.
fn stable_suffix_start(path: &[BasisEstimate], tol: f64) -> usize {
    let mut start = path.len().saturating_sub(1);
    while start > 0 {
        let (a, b) = (&path[start - 1], &path[start]);
        let max_change = (&a.z - &b.z).rows().into_iter().map(|r| l2(r)).fold(0.0, f64::max);
        if a.active_set != b.active_set || max_change >= tol {
            break;
        }
        start -= 1;
    }
    start
}

/// Full-factorial cross-validation over `λ × η`.
///
/// `None` grids default to the two-step `λ` grid and `grid_eta_size` log-spaced `η`
/// values on `[1, grid_eta_max]`. Ties go to the larger `λ`, then the larger `η`.
pub fn tune_grid_cv(
    data: &LabeledDataset,
    variant: MethodVariant,
    weights: &OrdinalWeightVector,
    config: &TuneConfig,
    lambda_grid: Option<&[f64]>,
    eta_grid: Option<&[f64]>,
) -> Result<TuningResult> {
    let target = stabilized_target(data, variant, config.fit.ridge_factor)?;
    let lmax = lambda_max(&target, Array1::<f64>::ones(data.p()).view(), 1.0);
    let mut lambdas: Vec<f64> = match lambda_grid {
        Some(g) => g.to_vec(),
        None => default_lambda_grid(lmax, config.lambda_ratio, config.grid_size),
    };
    let mut etas: Vec<f64> = match eta_grid {
        Some(g) => g.to_vec(),
        None => linalg::log_space(1.0, config.grid_eta_max, config.grid_eta_size),
    };
    if lambdas.is_empty() || etas.is_empty() {
        return Err(SoblError::InvalidArgument("empty tuning grid".into()));
    }
    lambdas.sort_by(|a, b| b.total_cmp(a));
    lambdas.dedup();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    let cv = cross_validate(data, variant, weights, &lambdas, &etas, config)?;

    let mut best: Option<(f64, f64, f64)> = None;
    let mut table = Vec::with_capacity(lambdas.len() * etas.len());
    for (e, &eta) in etas.iter().enumerate() {
        for (l, &lambda) in lambdas.iter().enumerate() {
            let cell = cv[e][l];
            table.push(CvRecord {
                lambda,
                eta,
                score: cell.map(|c| c.0),
                active_size: cell.map(|c| c.1),
            });
            let Some((s, _)) = cell else { continue };
            let better = match best {
                None => true,
                Some((bs, bl, be)) => s > bs || (s == bs && (lambda > bl || (lambda == bl && eta > be))),
            };
            if better {
                best = Some((s, lambda, eta));
            }
        }
    }
    let (_, lambda_tilde, eta_tilde) = best.ok_or_else(|| {
        SoblError::InvalidArgument("no grid point was evaluated before the active-set stop".into())
    })?;
    Ok(TuningResult {
        lambda_tilde,
        eta_tilde,
        lambda_max: lmax,
        eta_max: None,
        cv_table: table,
        method: TuningMethod::Grid,
    })
}

/// Indices of the `m` variables with the largest one-way ANOVA F statistics, in
/// increasing index order. Ties go to the smaller index; constant variables score 0.
pub fn screen_variables(data: &LabeledDataset, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > data.p() {
        return Err(SoblError::InvalidArgument(format!(
            "cannot keep {m} of {} variables",
            data.p()
        )));
    }
    let f: Vec<f64> = (0..data.p())
        .into_par_iter()
        .map(|j| match anova_f_test(data.column(j), data.y()) {
            Ok(t) => Ok(t.f),
            Err(SoblError::DegenerateInput(_)) => Ok(0.0),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..data.p()).collect();
    order.sort_by(|&a, &b| f[b].total_cmp(&f[a]).then(a.cmp(&b)));
    let mut keep = order[..m].to_vec();
    keep.sort_unstable();
    Ok(keep)
}
