//! Per-variable ordinal weights.
//!
//! The two-step weight screens out noise variables with a Kendall τ between the
//! variable and the class label, then keeps a variable only if its class means are
//! (almost) monotone in the class order. The rank-correlation and sequential
//! trend-test weights are provided for comparison.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{compute_group_statistics, GroupStatistics, LabeledDataset};
use crate::error::{Result, SoblError};
use crate::special;

/// Significance level of the per-variable F-tests behind the plug-in `θ̂₁`.
pub const DEFAULT_ALPHA: f64 = 0.05;

// Guards the `|τ̃| > 1 − θ₂` comparison when group-mean ties land exactly on it.
const TAU_TILDE_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMethod {
    TwoStep,
    AbsKendall,
    AbsSpearman,
    TrendTest,
    /// `w ≡ 1`, which turns the ordinal penalty into a plain group lasso.
    None,
}

impl fmt::Display for WeightMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightMethod::TwoStep => "two-step",
            WeightMethod::AbsKendall => "kendall",
            WeightMethod::AbsSpearman => "spearman",
            WeightMethod::TrendTest => "trend",
            WeightMethod::None => "none",
        })
    }
}

impl FromStr for WeightMethod {
    type Err = SoblError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "two-step" | "twostep" | "two_step" => Ok(WeightMethod::TwoStep),
            "kendall" => Ok(WeightMethod::AbsKendall),
            "spearman" => Ok(WeightMethod::AbsSpearman),
            "trend" => Ok(WeightMethod::TrendTest),
            "none" => Ok(WeightMethod::None),
            other => Err(SoblError::InvalidArgument(format!("unknown weight method '{other}'"))),
        }
    }
}

/// Sample Kendall τ of each variable with the labels, and the group-mean τ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauStatistics {
    pub tau_hat: Vec<f64>,
    pub tau_tilde: Vec<f64>,
    pub tie_corrected: bool,
}

/// Auxiliary per-variable columns produced alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightDiagnostics {
    pub tau: Option<TauStatistics>,
    pub f_pvalues: Option<Vec<f64>>,
    pub p_inc: Option<Vec<f64>>,
    pub p_dec: Option<Vec<f64>>,
    /// Variables with no variation at all; they always get weight 0.
    pub constant: Vec<usize>,
}

/// Ordinal weights `w_j ∈ [0, 1]` with the method that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrdinalWeightVector {
    w: Array1<f64>,
    method: WeightMethod,
    theta1: Option<f64>,
    theta2: Option<f64>,
    #[serde(default)]
    diagnostics: WeightDiagnostics,
}

impl OrdinalWeightVector {
    pub fn from_values(method: WeightMethod, w: Array1<f64>) -> Result<Self> {
        if let Some(bad) = w.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SoblError::InvalidArgument(format!("weight {bad} outside [0, 1]")));
        }
        if method == WeightMethod::TwoStep && w.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(SoblError::InvalidArgument("two-step weights must be 0 or 1".into()));
        }
        Ok(OrdinalWeightVector {
            w,
            method,
            theta1: None,
            theta2: None,
            diagnostics: WeightDiagnostics::default(),
        })
    }

    /// All weights 1.
    pub fn uniform(p: usize) -> Self {
        OrdinalWeightVector {
            w: Array1::ones(p),
            method: WeightMethod::None,
            theta1: None,
            theta2: None,
            diagnostics: WeightDiagnostics::default(),
        }
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.w.view()
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn method(&self) -> WeightMethod {
        self.method
    }

    pub fn theta1(&self) -> Option<f64> {
        self.theta1
    }

    pub fn theta2(&self) -> Option<f64> {
        self.theta2
    }

    pub fn diagnostics(&self) -> &WeightDiagnostics {
        &self.diagnostics
    }

    /// Restriction to the variables `cols`, in that order.
    pub fn select(&self, cols: &[usize]) -> Self {
        let pick = |v: &Option<Vec<f64>>| v.as_ref().map(|v| cols.iter().map(|&j| v[j]).collect());
        OrdinalWeightVector {
            w: cols.iter().map(|&j| self.w[j]).collect(),
            method: self.method,
            theta1: self.theta1,
            theta2: self.theta2,
            diagnostics: WeightDiagnostics {
                tau: self.diagnostics.tau.as_ref().map(|t| TauStatistics {
                    tau_hat: cols.iter().map(|&j| t.tau_hat[j]).collect(),
                    tau_tilde: cols.iter().map(|&j| t.tau_tilde[j]).collect(),
                    tie_corrected: t.tie_corrected,
                }),
                f_pvalues: pick(&self.diagnostics.f_pvalues),
                p_inc: pick(&self.diagnostics.p_inc),
                p_dec: pick(&self.diagnostics.p_dec),
                constant: cols
                    .iter()
                    .enumerate()
                    .filter(|(_, j)| self.diagnostics.constant.contains(j))
                    .map(|(i, _)| i)
                    .collect(),
            },
        }
    }
}

#[inline]
fn sign(v: f64) -> i64 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Kendall's τ between `x` and the labels `y` by pair enumeration.
///
/// With `tie_corrected` the denominator `N(N−1)/2` becomes
/// `√(N(N−1)/2 · (N(N−1)/2 − T_y))`, `T_y` the number of same-label pairs.
/// Tied `x` values contribute 0.
pub fn kendall_tau(x: ArrayView1<f64>, y: &[usize], tie_corrected: bool) -> Result<f64> {
    let n = x.len();
    if n != y.len() {
        return Err(SoblError::DimensionMismatch(format!("{n} values but {} labels", y.len())));
    }
    if n < 2 {
        return Err(SoblError::InvalidArgument("Kendall's tau needs N >= 2".into()));
    }
    let xs: Vec<f64> = x.iter().copied().collect();
    let mut s: i64 = 0;
    let mut label_ties: i64 = 0;
    for i in 0..n {
        let (xi, yi) = (xs[i], y[i]);
        for k in (i + 1)..n {
            let sy = (y[k] as i64 - yi as i64).signum();
            if sy == 0 {
                label_ties += 1;
            } else {
                s += sign(xs[k] - xi) * sy;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    let denom = if tie_corrected {
        let untied = pairs - label_ties as f64;
        if untied <= 0.0 {
            return Err(SoblError::UndefinedCorrelation(
                "all labels are equal, tau_b denominator is zero".into(),
            ));
        }
        (pairs * untied).sqrt()
    } else {
        pairs
    };
    Ok(s as f64 / denom)
}

/// `Σ_{g₁<g₂} sign(μ_{g₂} − μ_{g₁})` over the class means of one variable.
fn mean_sign_sum(means: ArrayView1<f64>) -> i64 {
    let k = means.len();
    let mut s = 0;
    for a in 0..k {
        for b in (a + 1)..k {
            s += sign(means[b] - means[a]);
        }
    }
    s
}

/// Group-mean Kendall τ of variable `j`: `(2/(K(K−1))) Σ_{g₁<g₂} sign(μ̂_j^{g₂} − μ̂_j^{g₁})`.
pub fn group_mean_tau(stats: &GroupStatistics, j: usize) -> f64 {
    let k = stats.k() as f64;
    2.0 * mean_sign_sum(stats.group_means().column(j)) as f64 / (k * (k - 1.0))
}

/// Result of a one-way ANOVA.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FTest {
    pub f: f64,
    pub df1: f64,
    pub df2: f64,
    pub pvalue: f64,
}

/// One-way ANOVA F-test of equal class means, labels `1..=K` with `K` the largest label.
pub fn anova_f_test(x: ArrayView1<f64>, y: &[usize]) -> Result<FTest> {
    if x.len() != y.len() {
        return Err(SoblError::DimensionMismatch(format!(
            "{} values but {} labels",
            x.len(),
            y.len()
        )));
    }
    let k = y.iter().copied().max().unwrap_or(0);
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (&v, &l) in x.iter().zip(y) {
        if l == 0 {
            return Err(SoblError::InvalidLabel { label: 0, k });
        }
        sums[l - 1] += v;
        counts[l - 1] += 1;
    }
    if let Some((g, &c)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
        return Err(SoblError::DegenerateClass {
            class: g + 1,
            count: c,
            required: 2,
        });
    }
    let n = x.len();
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let grand = x.sum() / n as f64;
    let ssb: f64 = means
        .iter()
        .zip(&counts)
        .map(|(m, &c)| c as f64 * (m - grand) * (m - grand))
        .sum();
    let ssw: f64 = x.iter().zip(y).map(|(v, &l)| (v - means[l - 1]).powi(2)).sum();
    let (df1, df2) = ((k - 1) as f64, (n - k) as f64);

    let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let negligible = n as f64 * (1e-12 * scale).powi(2);
    if ssw <= negligible {
        if ssb <= negligible {
            return Err(SoblError::DegenerateInput(
                "no variation within or between classes".into(),
            ));
        }
        return Ok(FTest {
            f: f64::INFINITY,
            df1,
            df2,
            pvalue: 0.0,
        });
    }
    let f = (ssb / df1) / (ssw / df2);
    Ok(FTest {
        f,
        df1,
        df2,
        pvalue: special::f_sf(f, df1, df2),
    })
}

/// p-value of the one-way ANOVA F-test, in `[0, 1]`.
pub fn anova_f_pvalue(x: ArrayView1<f64>, y: &[usize]) -> Result<f64> {
    anova_f_test(x, y).map(|t| t.pvalue)
}

/// Plug-in thresholds for the two-step weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Thresholds {
    pub theta1: f64,
    pub theta2: f64,
    /// Per-variable F-test verdict: `true` when equal means were rejected.
    pub mean_difference: Vec<bool>,
    pub f_pvalues: Vec<f64>,
}

/// `θ̂₁ = max(½ min_{Ĵ_md} |τ̂_j|, max_{Ĵ_noise} |τ̂_j|)`, `θ̂₂ = 2/(K(K−1))`.
///
/// An empty `Ĵ_md` gives `θ̂₁ = max_j |τ̂_j|`; an empty `Ĵ_noise` drops the second term.
pub fn plug_in_thresholds(tau_hat: &[f64], mean_difference: &[bool], k: usize) -> (f64, f64) {
    let abs = |j: usize| tau_hat[j].abs();
    let idx = 0..tau_hat.len();
    let md: Vec<usize> = idx.clone().filter(|&j| mean_difference[j]).collect();
    let noise_max = idx.clone().filter(|&j| !mean_difference[j]).map(abs).fold(0.0, f64::max);
    let theta1 = if md.is_empty() {
        idx.map(abs).fold(0.0, f64::max)
    } else {
        let md_min = md.iter().map(|&j| abs(j)).fold(f64::INFINITY, f64::min);
        (0.5 * md_min).max(noise_max)
    };
    let theta2 = 2.0 / (k * (k - 1)) as f64;
    (theta1, theta2)
}

fn per_variable<T: Send>(p: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..p).into_par_iter().map(f).collect()
}

fn f_test_verdicts(data: &LabeledDataset, alpha: f64) -> Result<(Vec<bool>, Vec<f64>)> {
    let results = per_variable(data.p(), |j| match anova_f_test(data.column(j), data.y()) {
        Ok(t) => Ok(t.pvalue),
        // no variation at all: equal means cannot be rejected
        Err(SoblError::DegenerateInput(_)) => Ok(1.0),
        Err(e) => Err(e),
    });
    let pvalues = results.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok((pvalues.iter().map(|&pv| pv <= alpha).collect(), pvalues))
}

/// Kendall τ̂ and group-mean τ̃ for every variable.
pub fn tau_statistics(data: &LabeledDataset, stats: &GroupStatistics, tie_corrected: bool) -> Result<TauStatistics> {
    let tau_hat = per_variable(data.p(), |j| kendall_tau(data.column(j), data.y(), tie_corrected))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let tau_tilde = (0..data.p()).map(|j| group_mean_tau(stats, j)).collect();
    Ok(TauStatistics {
        tau_hat,
        tau_tilde,
        tie_corrected,
    })
}

/// Plug-in `(θ̂₁, θ̂₂)` from per-variable F-tests at level `alpha`.
pub fn estimate_thresholds(
    data: &LabeledDataset,
    stats: &GroupStatistics,
    alpha: f64,
    tie_corrected: bool,
) -> Result<Thresholds> {
    let tau = tau_statistics(data, stats, tie_corrected)?;
    thresholds_from(data, &tau.tau_hat, alpha)
}

fn thresholds_from(data: &LabeledDataset, tau_hat: &[f64], alpha: f64) -> Result<Thresholds> {
    let (mean_difference, f_pvalues) = f_test_verdicts(data, alpha)?;
    let (theta1, theta2) = plug_in_thresholds(tau_hat, &mean_difference, data.k());
    Ok(Thresholds {
        theta1,
        theta2,
        mean_difference,
        f_pvalues,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoStepConfig {
    pub alpha: f64,
    pub tie_corrected: bool,
}

impl Default for TwoStepConfig {
    fn default() -> Self {
        TwoStepConfig {
            alpha: DEFAULT_ALPHA,
            tie_corrected: true,
        }
    }
}

/// Two-step weights `w_j = 1{|τ̂_j| > θ̂₁} · 1{|τ̃_j| > 1 − θ̂₂}` with plug-in thresholds.
pub fn two_step_weights(data: &LabeledDataset, tie_corrected: bool) -> Result<OrdinalWeightVector> {
    two_step_weights_with(
        data,
        &TwoStepConfig {
            tie_corrected,
            ..TwoStepConfig::default()
        },
    )
}

pub fn two_step_weights_with(data: &LabeledDataset, config: &TwoStepConfig) -> Result<OrdinalWeightVector> {
    let stats = compute_group_statistics(data)?;
    let tau = tau_statistics(data, &stats, config.tie_corrected)?;
    let th = thresholds_from(data, &tau.tau_hat, config.alpha)?;
    let w = Array1::from_iter((0..data.p()).map(|j| {
        let screened = tau.tau_hat[j].abs() > th.theta1;
        let monotone = tau.tau_tilde[j].abs() > 1.0 - th.theta2 + TAU_TILDE_SLACK;
        if screened && monotone {
            1.0
        } else {
            0.0
        }
    }));
    Ok(OrdinalWeightVector {
        w,
        method: WeightMethod::TwoStep,
        theta1: Some(th.theta1),
        theta2: Some(th.theta2),
        diagnostics: WeightDiagnostics {
            tau: Some(tau),
            f_pvalues: Some(th.f_pvalues),
            constant: constant_columns(data),
            ..WeightDiagnostics::default()
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TTestKind {
    /// Unequal variances, Welch–Satterthwaite degrees of freedom.
    Welch,
    Pooled,
}

#[derive(Clone, Copy, Debug)]
struct ClassMoments {
    n: f64,
    mean: f64,
    var: f64,
}

fn class_moments(x: ArrayView1<f64>, y: &[usize], k: usize) -> Vec<ClassMoments> {
    let mut sum = vec![0.0; k];
    let mut cnt = vec![0.0; k];
    for (&v, &l) in x.iter().zip(y) {
        sum[l - 1] += v;
        cnt[l - 1] += 1.0;
    }
    let means: Vec<f64> = sum.iter().zip(&cnt).map(|(s, c)| s / c).collect();
    let mut ss = vec![0.0; k];
    for (&v, &l) in x.iter().zip(y) {
        ss[l - 1] += (v - means[l - 1]).powi(2);
    }
    (0..k)
        .map(|g| ClassMoments {
            n: cnt[g],
            mean: means[g],
            var: ss[g] / (cnt[g] - 1.0),
        })
        .collect()
}

/// One-sided p-value for `H₀: μ_a ≥ μ_b` against `μ_a < μ_b`.
fn one_sided_increase_pvalue(a: ClassMoments, b: ClassMoments, kind: TTestKind) -> f64 {
    let diff = b.mean - a.mean;
    let (se2, df) = match kind {
        TTestKind::Welch => {
            let (va, vb) = (a.var / a.n, b.var / b.n);
            let se2 = va + vb;
            let df = se2 * se2 / (va * va / (a.n - 1.0) + vb * vb / (b.n - 1.0));
            (se2, df)
        }
        TTestKind::Pooled => {
            let df = a.n + b.n - 2.0;
            let sp2 = ((a.n - 1.0) * a.var + (b.n - 1.0) * b.var) / df;
            (sp2 * (1.0 / a.n + 1.0 / b.n), df)
        }
    };
    if se2 <= 0.0 {
        return match diff.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 0.0,
            Some(std::cmp::Ordering::Less) => 1.0,
            _ => 0.5,
        };
    }
    special::t_sf(diff / se2.sqrt(), df)
}

/// Sequential adjacent-class t-test weights `w_j = 1 − min(p^inc, p^dec)`.
/// Constant variables get weight 0.
pub fn trend_test_weights(data: &LabeledDataset, kind: TTestKind) -> Result<OrdinalWeightVector> {
    let counts = data.counts();
    if let Some((g, &c)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
        return Err(SoblError::DegenerateClass {
            class: g + 1,
            count: c,
            required: 2,
        });
    }
    let k = data.k();
    let pv: Vec<(f64, f64)> = per_variable(data.p(), |j| {
        let m = class_moments(data.column(j), data.y(), k);
        let mut p_inc: f64 = 0.0;
        let mut p_dec: f64 = 0.0;
        for g in 0..k - 1 {
            p_inc = p_inc.max(one_sided_increase_pvalue(m[g], m[g + 1], kind));
            let flipped = |c: ClassMoments| ClassMoments { mean: -c.mean, ..c };
            p_dec = p_dec.max(one_sided_increase_pvalue(flipped(m[g]), flipped(m[g + 1]), kind));
        }
        (p_inc, p_dec)
    });
    let constant = constant_columns(data);
    let mut w = Array1::from_iter(pv.iter().map(|&(a, b)| (1.0 - a.min(b)).clamp(0.0, 1.0)));
    for &j in &constant {
        w[j] = 0.0;
    }
    Ok(OrdinalWeightVector {
        w,
        method: WeightMethod::TrendTest,
        theta1: None,
        theta2: None,
        diagnostics: WeightDiagnostics {
            p_inc: Some(pv.iter().map(|v| v.0).collect()),
            p_dec: Some(pv.iter().map(|v| v.1).collect()),
            constant,
            ..WeightDiagnostics::default()
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RankCorrelation {
    Spearman,
    Kendall,
}

/// Midranks (1-based, ties share their average rank).
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut e = i;
        while e + 1 < n && values[order[e + 1]] == values[order[i]] {
            e += 1;
        }
        let r = (i + e) as f64 / 2.0 + 1.0;
        for &o in &order[i..=e] {
            ranks[o] = r;
        }
        i = e + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        None
    } else {
        Some(sab / (saa * sbb).sqrt())
    }
}

/// Spearman's ρ with midranks.
pub fn spearman_rho(x: ArrayView1<f64>, y: &[usize]) -> Result<f64> {
    let xs: Vec<f64> = x.iter().copied().collect();
    let ys: Vec<f64> = y.iter().map(|&l| l as f64).collect();
    pearson(&midranks(&xs), &midranks(&ys))
        .ok_or_else(|| SoblError::UndefinedCorrelation("constant input".into()))
}

fn is_constant(x: ArrayView1<f64>) -> bool {
    x.iter().all(|&v| v == x[0])
}

fn constant_columns(data: &LabeledDataset) -> Vec<usize> {
    (0..data.p()).filter(|&j| is_constant(data.column(j))).collect()
}

/// `w_j = |rank correlation(X_j, Y)|`, Kendall in its tie-corrected form.
/// Constant variables get weight 0.
pub fn rank_correlation_weights(data: &LabeledDataset, kind: RankCorrelation) -> Result<OrdinalWeightVector> {
    let w = per_variable(data.p(), |j| {
        let col = data.column(j);
        if is_constant(col) {
            return Ok(0.0);
        }
        let r = match kind {
            RankCorrelation::Spearman => spearman_rho(col, data.y())?,
            RankCorrelation::Kendall => kendall_tau(col, data.y(), true)?,
        };
        Ok(r.abs().min(1.0))
    })
    .into_iter()
    .collect::<Result<Array1<f64>>>()?;
    Ok(OrdinalWeightVector {
        w,
        method: match kind {
            RankCorrelation::Spearman => WeightMethod::AbsSpearman,
            RankCorrelation::Kendall => WeightMethod::AbsKendall,
        },
        theta1: None,
        theta2: None,
        diagnostics: WeightDiagnostics {
            constant: constant_columns(data),
            ..WeightDiagnostics::default()
        },
    })
}

/// Dispatches on `method`.
pub fn compute_weights(data: &LabeledDataset, method: WeightMethod) -> Result<OrdinalWeightVector> {
    match method {
        WeightMethod::TwoStep => two_step_weights(data, true),
        WeightMethod::AbsKendall => rank_correlation_weights(data, RankCorrelation::Kendall),
        WeightMethod::AbsSpearman => rank_correlation_weights(data, RankCorrelation::Spearman),
        WeightMethod::TrendTest => trend_test_weights(data, TTestKind::Welch),
        WeightMethod::None => Ok(OrdinalWeightVector::uniform(data.p())),
    }
}
