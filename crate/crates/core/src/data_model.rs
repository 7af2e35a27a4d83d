//! Labeled datasets, per-class summary statistics and the `(Σ̂, M̂)` target pairs
//! of the three sparse LDA variants.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SoblError};
use crate::linalg;

/// `N × p` predictors with ordered class labels `1..=K`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    x: Array2<f64>,
    y: Vec<usize>,
    k: usize,
}

impl LabeledDataset {
    /// Builds a dataset with `K` taken as the largest label.
    ///
    /// Every class `1..=K` must be present. The stronger requirement of two
    /// observations per class is checked by the routines that need it.
    pub fn new(x: Array2<f64>, y: Vec<usize>) -> Result<Self> {
        let k = y.iter().copied().max().unwrap_or(0);
        Self::with_classes(x, y, k)
    }

    pub fn with_classes(x: Array2<f64>, y: Vec<usize>, k: usize) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(SoblError::DimensionMismatch(format!(
                "{} predictor rows but {} labels",
                x.nrows(),
                y.len()
            )));
        }
        if k < 2 {
            return Err(SoblError::InvalidArgument(format!(
                "need at least 2 classes, found {k}"
            )));
        }
        if let Some(&bad) = y.iter().find(|&&l| l == 0 || l > k) {
            return Err(SoblError::InvalidLabel { label: bad, k });
        }
        if let Some(((row, col), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(SoblError::NonFinite { row, col });
        }
        let ds = LabeledDataset { x, y, k };
        if let Some(g) = ds.counts().iter().position(|&c| c == 0) {
            return Err(SoblError::DegenerateClass {
                class: g + 1,
                count: 0,
                required: 1,
            });
        }
        Ok(ds)
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.x.column(j)
    }

    /// Observations per class, indexed by `label − 1`.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.k];
        for &l in &self.y {
            c[l - 1] += 1;
        }
        c
    }

    /// Rows `rows` as a new dataset with the same `K`.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let x = self.x.select(Axis(0), rows);
        let y = rows.iter().map(|&i| self.y[i]).collect();
        Self::with_classes(x, y, self.k)
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        LabeledDataset {
            x: self.x.select(Axis(1), cols),
            y: self.y.clone(),
            k: self.k,
        }
    }

    /// Rescales each column to unit sample standard deviation. Returns the
    /// scales used (constant columns keep scale 1).
    pub fn standardized(&self) -> (Self, Array1<f64>) {
        let n = self.n() as f64;
        let scales = Array1::from_iter(self.x.columns().into_iter().map(|c| {
            let m = c.sum() / n;
            let v = c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0).max(1.0);
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        }));
        let x = &self.x / &scales;
        (
            LabeledDataset {
                x,
                y: self.y.clone(),
                k: self.k,
            },
            scales,
        )
    }
}

/// Class means and the within, between and total covariance estimators.
///
/// `Σ̂_w` is held densely; `Σ̂_b = HᵀH` is kept in its `K × p` factored form
/// with rows `H_g = √(n_g/N)(μ̂_g − μ̂)`, and `Σ̂_T = ((N−K)/N)Σ̂_w + Σ̂_b`.
#[derive(Clone, Debug)]
pub struct GroupStatistics {
    group_means: Array2<f64>,
    counts: Vec<usize>,
    grand_mean: Array1<f64>,
    sigma_w: Arc<Array2<f64>>,
    between_factor: Array2<f64>,
}

impl GroupStatistics {
    pub fn group_means(&self) -> ArrayView2<'_, f64> {
        self.group_means.view()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn grand_mean(&self) -> ArrayView1<'_, f64> {
        self.grand_mean.view()
    }

    pub fn n(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn p(&self) -> usize {
        self.grand_mean.len()
    }

    /// Pooled within-class covariance, divisor `N − K`.
    pub fn sigma_w(&self) -> ArrayView2<'_, f64> {
        self.sigma_w.view()
    }

    /// `K × p` factor `H` with `Σ̂_b = HᵀH`.
    pub fn between_factor(&self) -> ArrayView2<'_, f64> {
        self.between_factor.view()
    }

    /// Between-class covariance with weights `n_g/N`.
    pub fn sigma_b(&self) -> Array2<f64> {
        self.between_factor.t().dot(&self.between_factor)
    }

    /// Total covariance, divisor `N`.
    pub fn sigma_t(&self) -> Array2<f64> {
        let mut t = self.sigma_b();
        t.scaled_add(self.within_to_total(), &*self.sigma_w);
        t
    }

    fn within_to_total(&self) -> f64 {
        (self.n() - self.k()) as f64 / self.n() as f64
    }

    /// Builds the target pair, reusing the stored `Σ̂_w` allocation where possible.
    pub fn into_target_pair(self, variant: MethodVariant) -> Result<TargetPair> {
        let m_hat = target_columns(&self, variant)?;
        let sigma_hat = match variant {
            MethodVariant::Msda | MethodVariant::FastPoi => self.sigma_w,
            MethodVariant::Mgsda => {
                let scale = self.within_to_total();
                let mut sw = self.sigma_w;
                let t = Arc::make_mut(&mut sw);
                t.mapv_inplace(|v| v * scale);
                let b = self.between_factor.t().dot(&self.between_factor);
                *t += &b;
                sw
            }
        };
        Ok(TargetPair {
            sigma_hat,
            m_hat,
            variant,
            ridge: 0.0,
        })
    }
}

/// Which `(Σ̂, M̂)` pair a sparse LDA fit uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodVariant {
    /// `Σ̂_T` with the sequential weighted mean-contrast columns `m̂_r`.
    Mgsda,
    /// `Σ̂_w` with `[μ̂₂ − μ̂₁, …, μ̂_K − μ̂₁]`.
    Msda,
    /// `Σ̂_w` with the leading `K − 1` eigenvectors of `Σ̂_b`.
    FastPoi,
}

impl MethodVariant {
    pub const ALL: [MethodVariant; 3] = [MethodVariant::Mgsda, MethodVariant::Msda, MethodVariant::FastPoi];
}

impl fmt::Display for MethodVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodVariant::Mgsda => "MGSDA",
            MethodVariant::Msda => "MSDA",
            MethodVariant::FastPoi => "fastPOI",
        })
    }
}

impl FromStr for MethodVariant {
    type Err = SoblError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mgsda" => Ok(MethodVariant::Mgsda),
            "msda" => Ok(MethodVariant::Msda),
            "fastpoi" => Ok(MethodVariant::FastPoi),
            other => Err(SoblError::InvalidArgument(format!("unknown variant '{other}'"))),
        }
    }
}

/// The quadratic `Σ̂` and linear `M̂` terms of the basis objective.
///
/// `ridge` is an implicit diagonal shift: every consumer treats the quadratic
/// term as `Σ̂ + ridge·I` without materializing it.
#[derive(Clone, Debug)]
pub struct TargetPair {
    sigma_hat: Arc<Array2<f64>>,
    m_hat: Array2<f64>,
    variant: MethodVariant,
    ridge: f64,
}

impl TargetPair {
    pub fn new(sigma_hat: Array2<f64>, m_hat: Array2<f64>, variant: MethodVariant) -> Result<Self> {
        let p = sigma_hat.nrows();
        if sigma_hat.ncols() != p || m_hat.nrows() != p {
            return Err(SoblError::DimensionMismatch(format!(
                "sigma is {}x{}, M has {} rows",
                sigma_hat.nrows(),
                sigma_hat.ncols(),
                m_hat.nrows()
            )));
        }
        Ok(TargetPair {
            sigma_hat: Arc::new(sigma_hat),
            m_hat,
            variant,
            ridge: 0.0,
        })
    }

    /// Same pair with the quadratic term shifted to `Σ̂ + ridge·I`. Shares storage.
    pub fn with_ridge(&self, ridge: f64) -> Self {
        TargetPair {
            ridge,
            ..self.clone()
        }
    }

    /// Stored `Σ̂`, without the ridge.
    pub fn sigma_hat(&self) -> ArrayView2<'_, f64> {
        self.sigma_hat.view()
    }

    pub fn m_hat(&self) -> ArrayView2<'_, f64> {
        self.m_hat.view()
    }

    pub fn variant(&self) -> MethodVariant {
        self.variant
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn p(&self) -> usize {
        self.m_hat.nrows()
    }

    /// Number of basis columns, `K − 1` unless fastPOI was rank-limited.
    pub fn q(&self) -> usize {
        self.m_hat.ncols()
    }

    /// Diagonal entry of `Σ̂ + ridge·I`.
    pub fn diag(&self, j: usize) -> f64 {
        self.sigma_hat[[j, j]] + self.ridge
    }

    /// Materialized `Σ̂ + ridge·I`.
    pub fn effective_sigma(&self) -> Array2<f64> {
        let mut s = (*self.sigma_hat).clone();
        s.diag_mut().mapv_inplace(|d| d + self.ridge);
        s
    }

    /// Mean of the stored diagonal, the reference scale for relative ridges.
    pub fn mean_diagonal(&self) -> f64 {
        let p = self.p();
        if p == 0 {
            0.0
        } else {
            self.sigma_hat.diag().sum() / p as f64
        }
    }
}

/// Class means, counts and pooled covariances of a dataset.
pub fn compute_group_statistics(data: &LabeledDataset) -> Result<GroupStatistics> {
    let counts = data.counts();
    if let Some((g, &c)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
        return Err(SoblError::DegenerateClass {
            class: g + 1,
            count: c,
            required: 2,
        });
    }
    let (k, p, n) = (data.k(), data.p(), data.n());

    let mut group_means = Array2::<f64>::zeros((k, p));
    for (row, &label) in data.x().rows().into_iter().zip(data.y()) {
        let mut m = group_means.row_mut(label - 1);
        m += &row;
    }
    for (g, mut m) in group_means.rows_mut().into_iter().enumerate() {
        m /= counts[g] as f64;
    }

    let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let grand_mean = weighted_mean(group_means.view(), &weights);

    let mut centered = data.x().to_owned();
    for (mut row, &label) in centered.rows_mut().into_iter().zip(data.y()) {
        row -= &group_means.row(label - 1);
    }
    let mut sigma_w = centered.t().dot(&centered);
    sigma_w /= (n - k) as f64;
    symmetrize(&mut sigma_w);

    let between_factor = between_factor(group_means.view(), &weights);
    Ok(GroupStatistics {
        group_means,
        counts,
        grand_mean,
        sigma_w: Arc::new(sigma_w),
        between_factor,
    })
}

/// Builds the `(Σ̂, M̂)` pair of `variant` from `stats`.
pub fn build_target_pair(stats: &GroupStatistics, variant: MethodVariant) -> Result<TargetPair> {
    stats.clone().into_target_pair(variant)
}

fn target_columns(stats: &GroupStatistics, variant: MethodVariant) -> Result<Array2<f64>> {
    let weights: Vec<f64> = stats.counts.iter().map(|&c| c as f64).collect();
    Ok(match variant {
        MethodVariant::Msda => first_class_contrasts(stats.group_means.view()),
        MethodVariant::Mgsda => sequential_contrasts(stats.group_means.view(), &weights),
        MethodVariant::FastPoi => leading_between_directions(stats.between_factor.view(), stats.k() - 1)?,
    })
}

pub(crate) fn weighted_mean(means: ArrayView2<f64>, weights: &[f64]) -> Array1<f64> {
    let total: f64 = weights.iter().sum();
    let mut out = Array1::zeros(means.ncols());
    for (row, &w) in means.rows().into_iter().zip(weights) {
        out.scaled_add(w / total, &row);
    }
    out
}

/// Rows `√(π_g)(μ_g − μ̄)` for class proportions `π_g ∝ weights`.
pub(crate) fn between_factor(means: ArrayView2<f64>, weights: &[f64]) -> Array2<f64> {
    let total: f64 = weights.iter().sum();
    let center = weighted_mean(means, weights);
    let mut h = means.to_owned();
    for (mut row, &w) in h.rows_mut().into_iter().zip(weights) {
        row -= &center;
        row *= (w / total).sqrt();
    }
    h
}

/// `[μ₂ − μ₁, …, μ_K − μ₁]` as a `p × (K−1)` matrix.
pub(crate) fn first_class_contrasts(means: ArrayView2<f64>) -> Array2<f64> {
    let (k, p) = means.dim();
    let mut m = Array2::zeros((p, k - 1));
    for r in 1..k {
        let mut col = m.column_mut(r - 1);
        col.assign(&means.row(r));
        col -= &means.row(0);
    }
    m
}

/// Columns `m_r = √n_{r+1} Σ_{i≤r} n_i(μ_i − μ_{r+1}) / √(N Σ_{i≤r} n_i Σ_{i≤r+1} n_i)`.
/// Invariant to rescaling all `n_i` by a common factor.
pub(crate) fn sequential_contrasts(means: ArrayView2<f64>, sizes: &[f64]) -> Array2<f64> {
    let (k, p) = means.dim();
    let total: f64 = sizes.iter().sum();
    let mut m = Array2::zeros((p, k - 1));
    let mut cum = 0.0;
    for r in 0..k - 1 {
        cum += sizes[r];
        let next = means.row(r + 1);
        let mut col = m.column_mut(r);
        for i in 0..=r {
            col.scaled_add(sizes[i], &means.row(i));
            col.scaled_add(-sizes[i], &next);
        }
        let scale = sizes[r + 1].sqrt() / (total * cum * (cum + sizes[r + 1])).sqrt();
        col *= scale;
    }
    m
}

/// Leading `q` eigenvectors of `HᵀH` through the `K × K` problem for `HHᵀ`:
/// if `HHᵀu = λu` then `v = Hᵀu/√λ` is a unit eigenvector of `HᵀH`.
pub(crate) fn leading_between_directions(h: ArrayView2<f64>, q: usize) -> Result<Array2<f64>> {
    let gram = h.dot(&h.t());
    let (values, vectors) = linalg::symmetric_eigen(gram.view())?;
    let top = values.first().copied().unwrap_or(0.0);
    let attained = if top > 0.0 {
        values.iter().filter(|&&v| v > 1e-10 * top).count()
    } else {
        0
    };
    if attained < q {
        return Err(SoblError::RankDeficient {
            attained,
            required: q,
        });
    }
    let mut m = Array2::zeros((h.ncols(), q));
    for c in 0..q {
        let u = vectors.column(c);
        let mut v = h.t().dot(&u);
        v /= values[c].sqrt();
        linalg::canonical_sign(v.view_mut());
        m.column_mut(c).assign(&v);
    }
    Ok(m)
}

fn symmetrize(a: &mut Array2<f64>) {
    let p = a.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = a[[i, j]];
            a[[j, i]] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_class_line() -> LabeledDataset {
        LabeledDataset::new(array![[0.0], [2.0], [4.0], [6.0]], vec![1, 1, 2, 2]).unwrap()
    }

    #[test]
    fn hand_computed_two_class_statistics() {
        let stats = compute_group_statistics(&two_class_line()).unwrap();
        assert_eq!(stats.group_means(), array![[1.0], [5.0]]);
        assert_eq!(stats.grand_mean(), array![3.0]);
        // four squared deviations of 1, divisor N - K = 2
        assert_eq!(stats.sigma_w(), array![[2.0]]);
        // ½(1−3)² + ½(5−3)²
        assert!((stats.sigma_b()[[0, 0]] - 4.0).abs() < 1e-14);
        // total scatter: (9+1+1+9)/4
        assert!((stats.sigma_t()[[0, 0]] - 5.0).abs() < 1e-14);
    }

    #[test]
    fn identical_rows_within_class_give_zero_within_scatter() {
        let x = array![[1.0, 2.0], [1.0, 2.0], [3.0, -1.0], [3.0, -1.0], [0.5, 0.5], [0.5, 0.5]];
        let ds = LabeledDataset::new(x, vec![1, 1, 2, 2, 3, 3]).unwrap();
        let stats = compute_group_statistics(&ds).unwrap();
        assert!(stats.sigma_w().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn anova_decomposition_identity() {
        let x = array![[0.3], [1.7], [-0.4], [2.2], [3.1], [2.9], [5.5], [4.0], [4.4]];
        let ds = LabeledDataset::new(x, vec![1, 1, 1, 2, 2, 2, 3, 3, 3]).unwrap();
        let stats = compute_group_statistics(&ds).unwrap();
        let (n, k) = (9.0, 3.0);
        let lhs = stats.sigma_t()[[0, 0]];
        let rhs = stats.sigma_w()[[0, 0]] * (n - k) / n + stats.sigma_b()[[0, 0]];
        assert!((lhs - rhs).abs() < 1e-13);
        // direct total covariance
        let m = ds.x().column(0).sum() / n;
        let direct = ds.x().column(0).iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        assert!((lhs - direct).abs() < 1e-13);
    }

    #[test]
    fn singleton_class_is_degenerate() {
        let ds = LabeledDataset::new(array![[0.0], [1.0], [2.0]], vec![1, 1, 2]).unwrap();
        assert_eq!(
            compute_group_statistics(&ds).unwrap_err(),
            SoblError::DegenerateClass { class: 2, count: 1, required: 2 }
        );
    }

    #[test]
    fn dataset_validation() {
        assert!(matches!(
            LabeledDataset::new(array![[0.0], [1.0]], vec![1, 3]),
            Err(SoblError::DegenerateClass { class: 2, .. })
        ));
        assert!(matches!(
            LabeledDataset::new(array![[0.0], [1.0]], vec![0, 2]),
            Err(SoblError::InvalidLabel { .. })
        ));
        assert!(LabeledDataset::new(array![[f64::NAN], [1.0]], vec![1, 2]).is_err());
        assert!(LabeledDataset::new(array![[0.0], [1.0]], vec![1]).is_err());
    }

    #[test]
    fn msda_columns_are_first_class_contrasts() {
        let x = array![[0.0, 1.0], [1.0, 1.0], [2.0, 3.0], [4.0, 3.0], [5.0, -1.0], [7.0, -3.0]];
        let ds = LabeledDataset::new(x, vec![1, 1, 2, 2, 3, 3]).unwrap();
        let stats = compute_group_statistics(&ds).unwrap();
        let t = build_target_pair(&stats, MethodVariant::Msda).unwrap();
        assert_eq!(t.m_hat(), array![[2.5, 5.5], [2.0, -3.0]]);
        assert_eq!(t.sigma_hat(), stats.sigma_w());
    }

    #[test]
    fn mgsda_two_balanced_classes_is_scaled_mean_difference() {
        let x = array![[0.0, 1.0], [1.0, 2.0], [2.0, 0.0], [5.0, 3.0], [6.0, 1.0], [4.0, 5.0]];
        let ds = LabeledDataset::new(x, vec![1, 1, 1, 2, 2, 2]).unwrap();
        let stats = compute_group_statistics(&ds).unwrap();
        let t = build_target_pair(&stats, MethodVariant::Mgsda).unwrap();
        let (n1, n2, n) = (3.0_f64, 3.0_f64, 6.0_f64);
        let gm = stats.group_means();
        for j in 0..2 {
            let expected = n2.sqrt() * n1 * (gm[[0, j]] - gm[[1, j]]) / (n * n1 * n).sqrt();
            assert!((t.m_hat()[[j, 0]] - expected).abs() < 1e-14);
        }
        let st = stats.sigma_t();
        for (a, b) in t.sigma_hat().iter().zip(st.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn fastpoi_diagonal_between_scatter() {
        // H rows chosen so HᵀH = diag(4, 1, 0, 0)
        let h = array![[2.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]];
        let m = leading_between_directions(h.view(), 2).unwrap();
        let expected = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]];
        for (a, b) in m.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fastpoi_rank_deficiency_reports_rank() {
        let h = array![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        assert_eq!(
            leading_between_directions(h.view(), 2).unwrap_err(),
            SoblError::RankDeficient { attained: 1, required: 2 }
        );
    }

    #[test]
    fn ridge_is_implicit() {
        let t = TargetPair::new(array![[2.0, 0.5], [0.5, 1.0]], array![[1.0], [0.0]], MethodVariant::Msda)
            .unwrap()
            .with_ridge(0.25);
        assert_eq!(t.diag(0), 2.25);
        assert_eq!(t.effective_sigma(), array![[2.25, 0.5], [0.5, 1.25]]);
        assert_eq!(t.sigma_hat()[[0, 0]], 2.0);
    }
}
