//! Population models, variable taxonomy, theory diagnostics and the Monte-Carlo
//! harness for the simulation studies.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{
    between_factor, first_class_contrasts, leading_between_directions, sequential_contrasts, LabeledDataset,
    MethodVariant, TargetPair,
};
use crate::error::{Result, SoblError};
use crate::linalg::{self, inf2_norm, inf_norm, l2, submatrix};
use crate::ordinal_weights::{two_step_weights, OrdinalWeightVector};
use crate::pipeline::{self, evaluate_losses, predict, LossReport, TuneConfig};
use crate::special::normal_cdf;

/// Identifier of the sampling scheme, persisted in run manifests.
pub const RNG_ALGORITHM: &str =
    "ChaCha20 (rand_chacha 0.9) seeded by seed_from_u64, stream = replicate index; StandardNormal (rand_distr 0.5 ziggurat)";

/// Rows of `Ψ` with ℓ₂ norm above this are discriminant.
const DISC_TOL: f64 = 1e-10;

/// Gaussian classes `N(μ_g, Σ)` with class probabilities `π_g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationModel {
    mu: Array2<f64>,
    sigma: Array2<f64>,
    priors: Array1<f64>,
    #[serde(skip)]
    chol: Array2<f64>,
}

impl PopulationModel {
    /// `mu` is `K × p` with class means as rows.
    pub fn new(mu: Array2<f64>, sigma: Array2<f64>, priors: Array1<f64>) -> Result<Self> {
        let (k, p) = mu.dim();
        if sigma.dim() != (p, p) || priors.len() != k {
            return Err(SoblError::DimensionMismatch(format!(
                "means {k}x{p}, sigma {:?}, {} priors",
                sigma.dim(),
                priors.len()
            )));
        }
        if k < 2 {
            return Err(SoblError::InvalidArgument("need at least 2 classes".into()));
        }
        if priors.iter().any(|&v| !(v > 0.0)) || (priors.sum() - 1.0).abs() > 1e-12 {
            return Err(SoblError::InvalidArgument("priors must be positive and sum to 1".into()));
        }
        let chol = linalg::cholesky(sigma.view())?;
        Ok(PopulationModel { mu, sigma, priors, chol })
    }

    pub fn with_equal_priors(mu: Array2<f64>, sigma: Array2<f64>) -> Result<Self> {
        let k = mu.nrows();
        Self::new(mu, sigma, Array1::from_elem(k, 1.0 / k as f64))
    }

    pub fn mu(&self) -> ArrayView2<'_, f64> {
        self.mu.view()
    }

    pub fn sigma(&self) -> ArrayView2<'_, f64> {
        self.sigma.view()
    }

    pub fn priors(&self) -> ArrayView1<'_, f64> {
        self.priors.view()
    }

    pub fn k(&self) -> usize {
        self.mu.nrows()
    }

    pub fn p(&self) -> usize {
        self.mu.ncols()
    }

    /// Lower Cholesky factor of `Σ`.
    pub fn cholesky(&self) -> ArrayView2<'_, f64> {
        self.chol.view()
    }
}

/// `½(I_n + 11ᵀ)`.
fn equicorrelated(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { 0.5 })
}

const EXAMPLE1_MEANS: [[f64; 8]; 3] = [
    [0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 0.5, 1.0, -1.0, 3.0, 2.0, -1.0, -0.5],
    [1.5, 1.0, 2.0, -1.5, 2.0, -0.5, 2.0, 3.0],
];

const TOY35_MEANS: [[f64; 10]; 4] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 6.0, 6.0, 2.0],
    [2.0, 1.0, 1.0, 3.0, 2.0, -2.0, 4.0, 3.0, 0.0, 0.0],
    [4.0, 3.0, 4.0, 5.0, 3.0, -4.0, 2.0, 0.0, 3.0, 6.0],
    [6.0, 6.0, 6.0, 6.0, 6.0, 2.0, 6.0, 5.0, 5.0, 4.0],
];

fn padded_means<const P: usize>(rows: &[[f64; P]], p: usize, scale: f64) -> Array2<f64> {
    let mut mu = Array2::zeros((rows.len(), p));
    for (g, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            mu[[g, j]] = scale * v;
        }
    }
    mu
}

/// Three classes, eight variables, `Σ = ½(I + 11ᵀ)`.
pub fn example1_model() -> PopulationModel {
    PopulationModel::with_equal_priors(padded_means(&EXAMPLE1_MEANS, 8, 1.0), equicorrelated(8))
        .expect("fixed model is valid")
}

/// The eight-variable signal of [`example1_model`] padded with `p − 8` zero-mean
/// variables; `Σ = diag(½(I₈ + 11ᵀ), ½(I_{p−8} + 11ᵀ))`.
pub fn sim53_model(p: usize) -> Result<PopulationModel> {
    if p < 8 {
        return Err(SoblError::InvalidArgument(format!("sim53 model needs p >= 8, got {p}")));
    }
    let mut sigma = Array2::zeros((p, p));
    sigma.slice_mut(ndarray::s![..8, ..8]).assign(&equicorrelated(8));
    sigma.slice_mut(ndarray::s![8.., 8..]).assign(&equicorrelated(p - 8));
    PopulationModel::with_equal_priors(padded_means(&EXAMPLE1_MEANS, p, 1.0), sigma)
}

/// Four classes, ten signal variables (five ordinal, five not) and `p − 10` noise
/// variables; `Σ_ij = 0.6^{|i−j|}`.
pub fn toy35_model(p: usize) -> Result<PopulationModel> {
    if p < 10 {
        return Err(SoblError::InvalidArgument(format!("toy model needs p >= 10, got {p}")));
    }
    let sigma = Array2::from_shape_fn((p, p), |(i, j)| 0.6_f64.powi(i.abs_diff(j) as i32));
    PopulationModel::with_equal_priors(padded_means(&TOY35_MEANS, p, 0.5), sigma)
}

/// Named built-in models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Example1,
    Sim53,
    Toy35,
}

impl ModelKind {
    /// `p` is ignored for `Example1`.
    pub fn build(self, p: usize) -> Result<PopulationModel> {
        match self {
            ModelKind::Example1 => Ok(example1_model()),
            ModelKind::Sim53 => sim53_model(p),
            ModelKind::Toy35 => toy35_model(p),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Example1 => "example1",
            ModelKind::Sim53 => "sim53",
            ModelKind::Toy35 => "toy35",
        })
    }
}

impl FromStr for ModelKind {
    type Err = SoblError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "example1" => Ok(ModelKind::Example1),
            "sim53" => Ok(ModelKind::Sim53),
            "toy35" => Ok(ModelKind::Toy35),
            other => Err(SoblError::InvalidArgument(format!("unknown model '{other}'"))),
        }
    }
}

/// Population `(Σ, M)` of `variant`: `Σ_w` or `Σ_T = Σ_w + Σ_b`, with `Σ_b`
/// weighted by the priors.
pub fn population_target(model: &PopulationModel, variant: MethodVariant) -> Result<TargetPair> {
    let priors = model.priors.to_vec();
    let h = between_factor(model.mu.view(), &priors);
    let (sigma, m) = match variant {
        MethodVariant::Msda => (model.sigma.clone(), first_class_contrasts(model.mu.view())),
        MethodVariant::Mgsda => (&model.sigma + &h.t().dot(&h), sequential_contrasts(model.mu.view(), &priors)),
        MethodVariant::FastPoi => (model.sigma.clone(), leading_between_directions(h.view(), model.k() - 1)?),
    };
    TargetPair::new(sigma, m, variant)
}

/// `Ψ = Σ⁻¹M` by a linear solve.
pub fn population_basis(model: &PopulationModel, variant: MethodVariant) -> Result<Array2<f64>> {
    let t = population_target(model, variant)?;
    linalg::solve(t.sigma_hat(), t.m_hat())
}

/// Index sets (0-based, ascending) of the variable types.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableTaxonomy {
    pub j_md: Vec<usize>,
    pub j_noise: Vec<usize>,
    pub j_ord: Vec<usize>,
    pub j_nom: Vec<usize>,
    pub j_disc: Vec<usize>,
    pub j_disc_ord: Vec<usize>,
    /// Per variable: class means strictly monotone.
    pub strictly_ordinal: Vec<bool>,
}

impl VariableTaxonomy {
    /// `J_disc ∖ J_ord`.
    pub fn a2(&self) -> Vec<usize> {
        self.j_disc.iter().copied().filter(|j| !self.j_ord.contains(j)).collect()
    }

    /// Indicator of `J_ord`, the oracle ordinal weights.
    pub fn ordinal_indicator(&self, p: usize) -> Array1<f64> {
        let mut w = Array1::zeros(p);
        for &j in &self.j_ord {
            w[j] = 1.0;
        }
        w
    }
}

fn monotone(v: ArrayView1<f64>, strict: bool) -> bool {
    let pairs = || v.windows(2).into_iter().map(|w| (w[0], w[1]));
    if strict {
        pairs().all(|(a, b)| a < b) || pairs().all(|(a, b)| a > b)
    } else {
        pairs().all(|(a, b)| a <= b) || pairs().all(|(a, b)| a >= b)
    }
}

/// Taxonomy of `model` under `variant`.
///
/// Mean-difference variables have unequal class means; ordinal ones have
/// non-strictly monotone means; discriminant ones have a nonzero row in `Ψ`.
pub fn classify_variables(model: &PopulationModel, variant: MethodVariant) -> Result<VariableTaxonomy> {
    let psi = population_basis(model, variant)?;
    let p = model.p();
    let mut t = VariableTaxonomy {
        j_md: vec![],
        j_noise: vec![],
        j_ord: vec![],
        j_nom: vec![],
        j_disc: vec![],
        j_disc_ord: vec![],
        strictly_ordinal: vec![false; p],
    };
    for j in 0..p {
        let col = model.mu.column(j);
        let md = col.iter().any(|&v| v != col[0]);
        let disc = l2(psi.row(j)) > DISC_TOL;
        if md {
            t.j_md.push(j);
            if monotone(col, false) {
                t.j_ord.push(j);
                if disc {
                    t.j_disc_ord.push(j);
                }
            } else {
                t.j_nom.push(j);
            }
            t.strictly_ordinal[j] = monotone(col, true);
        } else {
            t.j_noise.push(j);
        }
        if disc {
            t.j_disc.push(j);
        }
    }
    Ok(t)
}

/// Population quantities of the support-recovery bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryDiagnostics {
    /// `‖Σ_{AᶜA} Σ_{AA}⁻¹‖_∞` with `A = J_disc`.
    pub kappa: f64,
    /// `‖Σ_{AA}⁻¹‖_∞`.
    pub phi: f64,
    /// `‖M‖_{∞,2}`.
    pub delta: f64,
    /// `‖M_{A₁}‖_{∞,2}`, `A₁ = J_disc ∩ J_ord`.
    pub delta1: f64,
    /// `‖M_{A₂}‖_{∞,2}`, `A₂ = J_disc ∖ J_ord`.
    pub delta2: f64,
    pub d: usize,
    /// `min_{j ∈ J_md} |E τ̂_j|` for the given labels.
    #[serde(rename = "Delta")]
    pub big_delta: f64,
    /// `min_{j ∈ J_md} min_{g₁<g₂} |μ_j^{g₂} − μ_j^{g₁}| / σ_jj`.
    pub delta_bar_min: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub lambda: f64,
    pub eta: f64,
    pub kappa_below_one: bool,
    /// `Σ_{A₂A₂ᶜ} = 0`.
    pub a2_uncorrelated: bool,
    pub taxonomy: VariableTaxonomy,
}

/// Expected sample Kendall τ (no tie correction) of variable `j` for the label
/// vector `labels`.
///
/// `X_{i₂j} − X_{i₁j} ~ N(μ^{y_{i₂}}_j − μ^{y_{i₁}}_j, 2σ_jj)`, so each pair with
/// `y_{i₁} < y_{i₂}` contributes `1 − 2Φ(−Δμ/√(2σ_jj))`.
pub fn expected_kendall_tau(model: &PopulationModel, j: usize, labels: &[usize]) -> Result<f64> {
    let n = labels.len();
    if n < 2 {
        return Err(SoblError::InvalidArgument("need at least 2 labels".into()));
    }
    let k = model.k();
    let mut counts = vec![0usize; k];
    for &l in labels {
        if l == 0 || l > k {
            return Err(SoblError::InvalidLabel { label: l, k });
        }
        counts[l - 1] += 1;
    }
    let sd = (2.0 * model.sigma[[j, j]]).sqrt();
    let mut s = 0.0;
    for g1 in 0..k {
        for g2 in (g1 + 1)..k {
            let diff = model.mu[[g2, j]] - model.mu[[g1, j]];
            s += (counts[g1] * counts[g2]) as f64 * (1.0 - 2.0 * normal_cdf(-diff / sd));
        }
    }
    Ok(2.0 * s / (n * (n - 1)) as f64)
}

/// `ε₁` and `ε₂` of the support-recovery theorem, clamped at 0.
pub fn epsilon_bounds(kappa: f64, phi: f64, delta: f64, delta1: f64, delta2: f64, lambda: f64, eta: f64) -> (f64, f64) {
    let inv_phi = 1.0 / phi;
    let e1 = inv_phi.min(lambda * (1.0 - eta * kappa) / (lambda * phi * (1.0 + eta) + (1.0 + kappa) * (1.0 + phi * delta)));
    let e2 = inv_phi
        .min((lambda * eta - delta2) / (1.0 + phi * (delta1 - delta2 + lambda + lambda * eta)))
        .min(lambda * (1.0 - kappa) / (2.0 * lambda * phi + (1.0 + phi * delta1) * (1.0 + kappa)));
    (e1.max(0.0), e2.max(0.0))
}

fn max_row_norm(m: ArrayView2<f64>, rows: &[usize]) -> f64 {
    rows.iter().map(|&j| l2(m.row(j))).fold(0.0, f64::max)
}

pub fn theory_diagnostics(
    model: &PopulationModel,
    variant: MethodVariant,
    labels: &[usize],
    lambda: f64,
    eta: f64,
) -> Result<TheoryDiagnostics> {
    let taxonomy = classify_variables(model, variant)?;
    let target = population_target(model, variant)?;
    let sigma = target.sigma_hat();
    let m = target.m_hat();
    let a = &taxonomy.j_disc;
    if a.is_empty() {
        return Err(SoblError::DegenerateInput("no discriminant variables".into()));
    }
    let ac: Vec<usize> = (0..model.p()).filter(|j| !a.contains(j)).collect();
    let saa_inv = linalg::inverse(submatrix(sigma, a, a).view())?;
    let kappa = if ac.is_empty() {
        0.0
    } else {
        inf_norm(submatrix(sigma, &ac, a).dot(&saa_inv).view())
    };
    let phi = inf_norm(saa_inv.view());
    let a2 = taxonomy.a2();
    let a2c: Vec<usize> = (0..model.p()).filter(|j| !a2.contains(j)).collect();
    let a2_uncorrelated = a2.iter().all(|&i| a2c.iter().all(|&j| sigma[[i, j]] == 0.0));
    let delta = inf2_norm(m);
    let delta1 = max_row_norm(m, &taxonomy.j_disc_ord);
    let delta2 = max_row_norm(m, &a2);

    let mut big_delta = f64::INFINITY;
    let mut delta_bar_min = f64::INFINITY;
    for &j in &taxonomy.j_md {
        big_delta = big_delta.min(expected_kendall_tau(model, j, labels)?.abs());
        for g1 in 0..model.k() {
            for g2 in (g1 + 1)..model.k() {
                let d = (model.mu[[g2, j]] - model.mu[[g1, j]]).abs() / model.sigma[[j, j]];
                delta_bar_min = delta_bar_min.min(d);
            }
        }
    }
    if taxonomy.j_md.is_empty() {
        big_delta = 0.0;
        delta_bar_min = 0.0;
    }
    let (eps1, eps2) = epsilon_bounds(kappa, phi, delta, delta1, delta2, lambda, eta);
    Ok(TheoryDiagnostics {
        kappa,
        phi,
        delta,
        delta1,
        delta2,
        d: a.len(),
        big_delta,
        delta_bar_min,
        eps1,
        eps2,
        lambda,
        eta,
        kappa_below_one: kappa < 1.0,
        a2_uncorrelated,
        taxonomy,
    })
}

/// Labels `1..=K` with `counts[g]` copies of `g + 1`, in class order.
pub fn class_labels(counts: &[usize]) -> Vec<usize> {
    counts.iter().enumerate().flat_map(|(g, &c)| std::iter::repeat_n(g + 1, c)).collect()
}

/// Draws `counts[g]` observations from class `g`, classes in order, as
/// `μ_g + Lz` with `L` the Cholesky factor of `Σ` and `z` standard normal.
pub fn generate_dataset_with<R: Rng>(model: &PopulationModel, counts: &[usize], rng: &mut R) -> Result<LabeledDataset> {
    if counts.len() != model.k() {
        return Err(SoblError::DimensionMismatch(format!(
            "{} class counts for {} classes",
            counts.len(),
            model.k()
        )));
    }
    if let Some((g, &c)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
        return Err(SoblError::DegenerateClass {
            class: g + 1,
            count: c,
            required: 2,
        });
    }
    let p = model.p();
    let n: usize = counts.iter().sum();
    let mut z = Array2::<f64>::zeros((n, p));
    for v in z.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    // rows of Z Lᵀ are L z_i
    let mut x = z.dot(&model.chol.t());
    let labels = class_labels(counts);
    for (mut row, &l) in x.rows_mut().into_iter().zip(&labels) {
        row += &model.mu.row(l - 1);
    }
    LabeledDataset::with_classes(x, labels, model.k())
}

/// [`generate_dataset_with`] on a ChaCha20 stream seeded by `seed`.
pub fn generate_dataset(model: &PopulationModel, counts: &[usize], seed: u64) -> Result<LabeledDataset> {
    generate_dataset_with(model, counts, &mut ChaCha20Rng::seed_from_u64(seed))
}

/// Generator of replicate `replicate` under `master_seed`.
pub fn replicate_rng(master_seed: u64, replicate: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub size_d: usize,
    pub size_d_inter_a: usize,
    pub size_d_inter_a1: usize,
    pub size_d_inter_ac: usize,
    /// `|D̂ ∩ A₁| / |D̂|`, 0 for an empty `D̂`.
    pub ratio_a1: f64,
}

/// Overlap of the selected set `active` with `A = J_disc` and `A₁ = J_disc ∩ J_ord`.
pub fn selection_metrics(active: &[usize], taxonomy: &VariableTaxonomy) -> SelectionMetrics {
    let in_a = active.iter().filter(|j| taxonomy.j_disc.contains(j)).count();
    let in_a1 = active.iter().filter(|j| taxonomy.j_disc_ord.contains(j)).count();
    SelectionMetrics {
        size_d: active.len(),
        size_d_inter_a: in_a,
        size_d_inter_a1: in_a1,
        size_d_inter_ac: active.len() - in_a,
        ratio_a1: if active.is_empty() {
            0.0
        } else {
            in_a1 as f64 / active.len() as f64
        },
    }
}

/// `min_{j∈ord} w_j − max_{j∉ord} w_j`.
pub fn weight_gap(w: ArrayView1<f64>, ord: &[usize]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (j, &v) in w.iter().enumerate() {
        if ord.contains(&j) {
            lo = lo.min(v);
        } else {
            hi = hi.max(v);
        }
    }
    lo - hi
}

/// `w_j = 1` exactly on `ord` and 0 elsewhere.
pub fn separates_exactly(w: ArrayView1<f64>, ord: &[usize]) -> bool {
    w.iter()
        .enumerate()
        .all(|(j, &v)| if ord.contains(&j) { v == 1.0 } else { v == 0.0 })
}

/// How `(λ, η)` are chosen for a method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tuning {
    TwoStep,
    Grid,
}

/// A method of the benchmark: `ord-<VARIANT>` (two-step weights, two-step tuning),
/// `ord-<VARIANT>-grid` (two-step weights, grid search) or `<VARIANT>`
/// (plain group lasso, `λ` by cross-validation).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub variant: MethodVariant,
    pub ordinal: bool,
    pub tuning: Tuning,
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = match self.variant {
            MethodVariant::FastPoi => "fastPOI".to_string(),
            other => other.to_string(),
        };
        match (self.ordinal, self.tuning) {
            (false, _) => write!(f, "{v}"),
            (true, Tuning::TwoStep) => write!(f, "ord-{v}"),
            (true, Tuning::Grid) => write!(f, "ord-{v}-grid"),
        }
    }
}

impl FromStr for MethodSpec {
    type Err = SoblError;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (ordinal, rest) = match lower.strip_prefix("ord-") {
            Some(r) => (true, r),
            None => (false, lower.as_str()),
        };
        let (grid, rest) = match rest.strip_suffix("-grid") {
            Some(r) => (true, r),
            None => (false, rest),
        };
        if grid && !ordinal {
            return Err(SoblError::InvalidArgument(format!(
                "'{s}': grid search applies to ordinal methods only"
            )));
        }
        Ok(MethodSpec {
            variant: rest.parse()?,
            ordinal,
            tuning: if grid { Tuning::Grid } else { Tuning::TwoStep },
        })
    }
}

/// Everything a Monte-Carlo run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloConfig {
    pub model: ModelKind,
    pub p: usize,
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    pub replicates: usize,
    pub methods: Vec<MethodSpec>,
    pub master_seed: u64,
    pub tune: TuneConfig,
    /// Variant whose taxonomy defines `A` and `A₁` in the selection metrics.
    pub taxonomy_variant: MethodVariant,
}

/// Outcome of one method on one replicate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub selection: SelectionMetrics,
    pub losses: LossReport,
    pub lambda: f64,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    /// One entry per method, in configuration order.
    pub outcomes: Vec<std::result::Result<MethodOutcome, String>>,
}

/// Mean and standard error of one metric of one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation over `√n`; NaN with fewer than two values.
    pub stderr: f64,
    pub n: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub config: MonteCarloConfig,
    pub replicates: Vec<ReplicateRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Metric names in table order.
pub const METRICS: [&str; 8] = [
    "size_D",
    "size_D_inter_A",
    "size_D_inter_A1",
    "size_D_inter_Ac",
    "ratio_A1",
    "l0",
    "l1",
    "l2",
];

impl MethodOutcome {
    pub fn metric_values(&self) -> [f64; 8] {
        let s = &self.selection;
        [
            s.size_d as f64,
            s.size_d_inter_a as f64,
            s.size_d_inter_a1 as f64,
            s.size_d_inter_ac as f64,
            s.ratio_a1,
            self.losses.l0,
            self.losses.l1,
            self.losses.l2,
        ]
    }
}

/// Mean and `sd/√n` (sample sd, divisor `n − 1`).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Tunes, fits and scores one method on a train/test pair.
pub fn run_method(
    method: &MethodSpec,
    train: &LabeledDataset,
    test: &LabeledDataset,
    taxonomy: &VariableTaxonomy,
    tune: &TuneConfig,
    ordinal_weights: Option<&OrdinalWeightVector>,
) -> Result<MethodOutcome> {
    let computed;
    let weights = match (method.ordinal, ordinal_weights) {
        (false, _) => {
            computed = OrdinalWeightVector::uniform(train.p());
            &computed
        }
        (true, Some(w)) => w,
        (true, None) => {
            computed = two_step_weights(train, true)?;
            &computed
        }
    };
    let tuned = match method.tuning {
        Tuning::TwoStep => pipeline::tune_two_step(train, method.variant, weights, tune)?,
        Tuning::Grid => pipeline::tune_grid_cv(train, method.variant, weights, tune, None, None)?,
    };
    let model = pipeline::fit_model(train, method.variant, weights, tuned.lambda_tilde, tuned.eta_tilde, &tune.fit)?;
    let yhat = predict(&model.classifier, test.x())?;
    Ok(MethodOutcome {
        selection: selection_metrics(&model.estimate.active_set, taxonomy),
        losses: evaluate_losses(&yhat, test.y())?,
        lambda: tuned.lambda_tilde,
        eta: tuned.eta_tilde,
    })
}

/// Runs every method on `replicates` independent train/test draws.
///
/// Replicate `r` draws its training and then its test sample from
/// [`replicate_rng`]`(master_seed, r)`, so results do not depend on scheduling.
/// Failures are recorded per replicate and method.
pub fn monte_carlo_run(config: &MonteCarloConfig) -> Result<MonteCarloResult> {
    if config.replicates == 0 || config.methods.is_empty() {
        return Err(SoblError::InvalidArgument("need at least one replicate and one method".into()));
    }
    let model = config.model.build(config.p)?;
    let taxonomy = classify_variables(&model, config.taxonomy_variant)?;
    let mut tune = config.tune.clone();
    // replicates already saturate the pool
    tune.parallel_folds = false;
    let replicates: Vec<ReplicateRecord> = (0..config.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(config.master_seed, r as u64);
            let data = generate_dataset_with(&model, &config.train_counts, &mut rng)
                .and_then(|train| Ok((train, generate_dataset_with(&model, &config.test_counts, &mut rng)?)));
            let outcomes = match data {
                Err(e) => vec![Err(e.to_string()); config.methods.len()],
                Ok((train, test)) => {
                    let weights = if config.methods.iter().any(|m| m.ordinal) {
                        Some(two_step_weights(&train, true))
                    } else {
                        None
                    };
                    config
                        .methods
                        .iter()
                        .map(|m| {
                            let w = match (&weights, m.ordinal) {
                                (Some(Ok(w)), true) => Some(w),
                                (Some(Err(e)), true) => return Err(e.to_string()),
                                _ => None,
                            };
                            run_method(m, &train, &test, &taxonomy, &tune, w).map_err(|e| e.to_string())
                        })
                        .collect()
                }
            };
            ReplicateRecord { replicate: r, outcomes }
        })
        .collect();

    let mut summary = Vec::new();
    for (mi, method) in config.methods.iter().enumerate() {
        let ok: Vec<[f64; 8]> = replicates
            .iter()
            .filter_map(|r| r.outcomes[mi].as_ref().ok().map(|o| o.metric_values()))
            .collect();
        let failures = replicates.len() - ok.len();
        for (k, name) in METRICS.iter().enumerate() {
            let vals: Vec<f64> = ok.iter().map(|v| v[k]).collect();
            let (mean, stderr) = mean_and_stderr(&vals);
            summary.push(SummaryRow {
                method: method.to_string(),
                metric: name.to_string(),
                mean,
                stderr,
                n: vals.len(),
                failures,
            });
        }
    }
    Ok(MonteCarloResult {
        config: config.clone(),
        replicates,
        summary,
    })
}
