//! Block coordinate descent for the weighted group-lasso basis problem
//!
//! ```text
//! minimize  tr(½ ZᵀΣ̂Z − ZᵀM̂) + Σ_j λ η^{1−w_j} ‖Z_j‖₂
//! ```
//!
//! over `p × q` matrices `Z`. Each row has a closed-form group soft-threshold
//! update given the others.

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::data_model::TargetPair;
use crate::error::{Result, SoblError};
use crate::linalg::l2;
use crate::ordinal_weights::OrdinalWeightVector;

/// Sweeps between full recomputations of the cached `Σ̂Z`.
const REFRESH_EVERY: usize = 50;

/// Penalty level `λ`, ordinal inflation `η ≥ 1` and weights `w`, giving the
/// per-variable coefficients `λ_j = λ η^{1−w_j}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    lambda: f64,
    eta: f64,
    weights: Array1<f64>,
}

impl PenaltySpec {
    pub fn new(lambda: f64, eta: f64, weights: &OrdinalWeightVector) -> Result<Self> {
        Self::from_values(lambda, eta, weights.values().to_owned())
    }

    pub fn from_values(lambda: f64, eta: f64, weights: Array1<f64>) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(SoblError::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
        }
        if !(eta >= 1.0 && eta.is_finite()) {
            return Err(SoblError::InvalidArgument(format!("eta must be >= 1, got {eta}")));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(SoblError::InvalidArgument("weights must lie in [0, 1]".into()));
        }
        Ok(PenaltySpec { lambda, eta, weights })
    }

    /// `η = 1`, `w ≡ 1`: every row penalized by `λ`.
    pub fn uniform(lambda: f64, p: usize) -> Result<Self> {
        Self::from_values(lambda, 1.0, Array1::ones(p))
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::from_values(lambda, self.eta, self.weights.clone())
    }

    pub fn with_eta(&self, eta: f64) -> Result<Self> {
        Self::from_values(self.lambda, eta, self.weights.clone())
    }

    /// `λ_j = λ η^{1−w_j}`.
    pub fn coefficient(&self, j: usize) -> f64 {
        self.lambda * inflation(self.eta, self.weights[j])
    }

    pub fn coefficients(&self) -> Array1<f64> {
        (0..self.len()).map(|j| self.coefficient(j)).collect()
    }
}

#[inline]
fn inflation(eta: f64, w: f64) -> f64 {
    if w == 1.0 {
        1.0
    } else {
        eta.powf(1.0 - w)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop once no row moves by more than this in ℓ₂ during a sweep.
    pub tol: f64,
    pub max_iter: usize,
    /// Added to the diagonal of `Σ̂` on top of any ridge the target already carries.
    pub ridge: f64,
    #[serde(skip)]
    pub warm_start: Option<Array2<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-7,
            max_iter: 2000,
            ridge: 0.0,
            warm_start: None,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.ridge >= 0.0) {
            return Err(SoblError::InvalidArgument(format!(
                "solver config needs tol > 0, max_iter >= 1, ridge >= 0 (got {}, {}, {})",
                self.tol, self.max_iter, self.ridge
            )));
        }
        Ok(())
    }
}

/// A fitted basis `Z` with its certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisEstimate {
    pub z: Array2<f64>,
    /// Indices of the nonzero rows, ascending.
    pub active_set: Vec<usize>,
    pub objective: f64,
    /// Completed sweeps.
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    /// Constant variables (zero variance and zero signal) left out of the fit.
    pub excluded: Vec<usize>,
}

impl BasisEstimate {
    pub fn is_empty(&self) -> bool {
        self.active_set.is_empty()
    }
}

/// Group soft-threshold `(1/σ_jj)(1 − λ_j/‖a‖₂)₊ a`.
pub fn row_update(a: ArrayView1<f64>, sigma_jj: f64, lambda_j: f64) -> Result<Array1<f64>> {
    if !(sigma_jj > 0.0) {
        return Err(SoblError::NonPositiveDiagonal {
            index: 0,
            value: sigma_jj,
        });
    }
    let mut out = Array1::zeros(a.len());
    let norm = l2(a);
    if norm > lambda_j {
        let scale = (1.0 - lambda_j / norm) / sigma_jj;
        Zip::from(&mut out).and(&a).for_each(|o, &v| *o = scale * v);
    }
    Ok(out)
}

/// `Σ̂Z + ridge·Z`, touching only the nonzero rows of `Z`.
fn sigma_times(target: &TargetPair, z: ArrayView2<f64>) -> Array2<f64> {
    let sigma = target.sigma_hat();
    let mut r = Array2::zeros(z.raw_dim());
    for k in nonzero_rows(z) {
        let zk = z.row(k);
        // column k of a symmetric Σ̂
        for (mut ri, &s) in r.rows_mut().into_iter().zip(sigma.row(k)) {
            if s != 0.0 {
                ri.scaled_add(s, &zk);
            }
        }
        let mut rk = r.row_mut(k);
        rk.scaled_add(target.ridge(), &zk);
    }
    r
}

fn nonzero_rows(z: ArrayView2<f64>) -> Vec<usize> {
    z.rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.iter().any(|&v| v != 0.0))
        .map(|(j, _)| j)
        .collect()
}

fn check_dims(z: ArrayView2<f64>, target: &TargetPair, penalty: &PenaltySpec) -> Result<()> {
    if z.dim() != (target.p(), target.q()) || penalty.len() != target.p() {
        return Err(SoblError::DimensionMismatch(format!(
            "Z is {:?}, target is {}x{}, {} penalty weights",
            z.dim(),
            target.p(),
            target.q(),
            penalty.len()
        )));
    }
    Ok(())
}

/// `tr(½ ZᵀΣ̂Z − ZᵀM̂) + Σ_j λ_j ‖Z_j‖₂`, with `Σ̂` including the target's ridge.
pub fn objective_value(z: ArrayView2<f64>, target: &TargetPair, penalty: &PenaltySpec) -> Result<f64> {
    check_dims(z, target, penalty)?;
    let active = nonzero_rows(z);
    let sigma = target.sigma_hat();
    let m = target.m_hat();
    let mut quad = 0.0;
    let mut lin = 0.0;
    let mut pen = 0.0;
    for &j in &active {
        let zj = z.row(j);
        for &k in &active {
            let s = sigma[[j, k]] + if j == k { target.ridge() } else { 0.0 };
            if s != 0.0 {
                quad += s * zj.dot(&z.row(k));
            }
        }
        lin += zj.dot(&m.row(j));
        pen += penalty.coefficient(j) * l2(zj);
    }
    Ok(0.5 * quad - lin + pen)
}

/// Largest violation of the optimality conditions.
///
/// With `G = Σ̂Z − M̂`: `‖G_j + λ_j Z_j/‖Z_j‖‖` on nonzero rows and
/// `(‖G_j‖ − λ_j)₊` on zero rows. Zero exactly at the minimizer.
pub fn kkt_residual(z: ArrayView2<f64>, target: &TargetPair, penalty: &PenaltySpec) -> Result<f64> {
    check_dims(z, target, penalty)?;
    let r = sigma_times(target, z);
    Ok(kkt_from_product(z, r.view(), target, penalty))
}

fn kkt_from_product(z: ArrayView2<f64>, r: ArrayView2<f64>, target: &TargetPair, penalty: &PenaltySpec) -> f64 {
    let m = target.m_hat();
    let mut worst: f64 = 0.0;
    let mut g = Array1::zeros(z.ncols());
    for j in 0..z.nrows() {
        Zip::from(&mut g)
            .and(r.row(j))
            .and(m.row(j))
            .for_each(|g, &rv, &mv| *g = rv - mv);
        let zj = z.row(j);
        let nz = l2(zj);
        let lj = penalty.coefficient(j);
        let v = if nz > 0.0 {
            g.scaled_add(lj / nz, &zj);
            l2(g.view())
        } else {
            (l2(g.view()) - lj).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Smallest `λ` at which the zero matrix solves the problem for `(w, η)`:
/// `max_j ‖M̂_j‖₂ / η^{1−w_j}`.
///
/// Rounded up so that `λ·η^{1−w_j} ≥ ‖M̂_j‖₂` holds in floating point for every row.
pub fn lambda_max(target: &TargetPair, weights: ArrayView1<f64>, eta: f64) -> f64 {
    let m = target.m_hat();
    let rows: Vec<(f64, f64)> = m
        .rows()
        .into_iter()
        .zip(weights)
        .map(|(r, &w)| (l2(r), inflation(eta, w)))
        .collect();
    let mut lm = rows.iter().map(|&(n, f)| n / f).fold(0.0, f64::max);
    while rows.iter().any(|&(n, f)| lm * f < n) {
        lm = lm.next_up();
    }
    lm
}

/// Fits the basis by cyclic block coordinate descent over rows `0..p`, with
/// active-set cycling between full sweeps.
pub fn sobl_fit(target: &TargetPair, penalty: &PenaltySpec, config: &SolverConfig) -> Result<BasisEstimate> {
    sobl_fit_observed(target, penalty, config, |_, _| {})
}

/// As [`sobl_fit`], calling `observer(j, Z)` after every row update.
pub fn sobl_fit_observed(
    target: &TargetPair,
    penalty: &PenaltySpec,
    config: &SolverConfig,
    mut observer: impl FnMut(usize, ArrayView2<f64>),
) -> Result<BasisEstimate> {
    config.validate()?;
    let target = target.with_ridge(target.ridge() + config.ridge);
    let (p, q) = (target.p(), target.q());
    if penalty.len() != p {
        return Err(SoblError::DimensionMismatch(format!(
            "{} penalty weights for {p} variables",
            penalty.len()
        )));
    }
    let excluded = excluded_rows(&target)?;
    let mut skip = vec![false; p];
    for &j in &excluded {
        skip[j] = true;
    }
    if !excluded.is_empty() {
        warn!("{} constant variable(s) excluded from the fit", excluded.len());
    }

    let mut z = match &config.warm_start {
        Some(w) => {
            if w.dim() != (p, q) {
                return Err(SoblError::DimensionMismatch(format!(
                    "warm start is {:?}, expected ({p}, {q})",
                    w.dim()
                )));
            }
            let mut w = w.as_standard_layout().into_owned();
            for &j in &excluded {
                w.row_mut(j).fill(0.0);
            }
            w
        }
        None => Array2::zeros((p, q)),
    };
    let m = target.m_hat();
    let lambdas = penalty.coefficients();
    let mut r = sigma_times(&target, z.view());

    let all: Vec<usize> = (0..p).filter(|&j| !skip[j]).collect();
    let mut state = SweepState {
        target: &target,
        m,
        lambdas: &lambdas,
        a: Array1::zeros(q),
        delta: Array1::zeros(q),
    };
    let mut iterations = 0;
    let mut converged = false;
    // Full sweeps alternate with sweeps restricted to the current nonzero rows.
    // Restricted sweeps keep R exact on those rows only, and convergence is only
    // declared after a full sweep.
    while iterations < config.max_iter {
        if iterations > 0 && iterations % REFRESH_EVERY == 0 {
            r = sigma_times(&target, z.view());
        }
        let max_change = state.sweep(&all, None, &mut z, &mut r, &mut observer);
        iterations += 1;
        if max_change < config.tol {
            converged = true;
            break;
        }
        let active: Vec<usize> = all
            .iter()
            .copied()
            .filter(|&j| z.row(j).iter().any(|&v| v != 0.0))
            .collect();
        if active.len() == all.len() {
            continue;
        }
        while iterations < config.max_iter {
            if iterations % REFRESH_EVERY == 0 {
                refresh_rows(&target, &active, z.view(), &mut r);
            }
            let change = state.sweep(&active, Some(&active), &mut z, &mut r, &mut observer);
            iterations += 1;
            if change < config.tol {
                break;
            }
        }
        r = sigma_times(&target, z.view());
    }
    if !converged {
        warn!("block coordinate descent stopped after {iterations} sweeps without converging");
    }
    let r = sigma_times(&target, z.view());
    let kkt = kkt_from_product(z.view(), r.view(), &target, penalty);
    let objective = objective_value(z.view(), &target, penalty)?;
    Ok(BasisEstimate {
        active_set: nonzero_rows(z.view()),
        z,
        objective,
        iterations,
        converged,
        kkt_residual: kkt,
        excluded,
    })
}

struct SweepState<'a> {
    target: &'a TargetPair,
    m: ArrayView2<'a, f64>,
    lambdas: &'a Array1<f64>,
    a: Array1<f64>,
    delta: Array1<f64>,
}

impl SweepState<'_> {
    /// One cyclic pass over `rows`. `R = Σ̂Z` is kept current on `tracked` rows,
    /// or on every row when `tracked` is `None`. Returns the largest row change.
    fn sweep(
        &mut self,
        rows: &[usize],
        tracked: Option<&[usize]>,
        z: &mut Array2<f64>,
        r: &mut Array2<f64>,
        observer: &mut impl FnMut(usize, ArrayView2<f64>),
    ) -> f64 {
        let sigma = self.target.sigma_hat();
        let ridge = self.target.ridge();
        let q = self.a.len();
        let a = self.a.as_slice_mut().expect("contiguous");
        let delta = self.delta.as_slice_mut().expect("contiguous");
        let mut max_change: f64 = 0.0;
        for &j in rows {
            let d = sigma[[j, j]] + ridge;
            {
                let zj = &z.as_slice().expect("standard layout")[j * q..(j + 1) * q];
                let rj = &r.as_slice().expect("standard layout")[j * q..(j + 1) * q];
                let mj = self.m.row(j);
                // a_j = M_j − Σ_{k≠j} σ_jk Z_k = M_j − R_j + σ_jj Z_j
                for c in 0..q {
                    a[c] = mj[c] - rj[c] + d * zj[c];
                }
                let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                let lambda_j = self.lambdas[j];
                if norm <= lambda_j {
                    if zj.iter().all(|&v| v == 0.0) {
                        observer(j, z.view());
                        continue;
                    }
                    for c in 0..q {
                        delta[c] = -zj[c];
                    }
                } else {
                    let scale = (1.0 - lambda_j / norm) / d;
                    for c in 0..q {
                        delta[c] = scale * a[c] - zj[c];
                    }
                }
            }
            let zj = &mut z.as_slice_mut().expect("standard layout")[j * q..(j + 1) * q];
            if delta.iter().zip(zj.iter()).all(|(dv, zv)| *dv == -zv) {
                zj.fill(0.0);
            } else {
                for c in 0..q {
                    zj[c] += delta[c];
                }
            }
            max_change = max_change.max(delta.iter().map(|v| v * v).sum::<f64>().sqrt());
            let rs = r.as_slice_mut().expect("standard layout");
            let mut bump = |i: usize, s: f64| {
                if s != 0.0 {
                    for (rv, &dv) in rs[i * q..(i + 1) * q].iter_mut().zip(delta.iter()) {
                        *rv += s * dv;
                    }
                }
            };
            let sig_j = sigma.row(j);
            match (tracked, sig_j.as_slice()) {
                (None, Some(sl)) => {
                    for (i, &s) in sl.iter().enumerate() {
                        bump(i, s);
                    }
                }
                (Some(t), Some(sl)) => {
                    for &i in t {
                        bump(i, sl[i]);
                    }
                }
                (None, None) => {
                    for (i, &s) in sig_j.iter().enumerate() {
                        bump(i, s);
                    }
                }
                (Some(t), None) => {
                    for &i in t {
                        bump(i, sig_j[i]);
                    }
                }
            }
            bump(j, ridge);
            observer(j, z.view());
        }
        max_change
    }
}

/// Recomputes `R_i = (Σ̂Z)_i` for `i ∈ rows`.
fn refresh_rows(target: &TargetPair, rows: &[usize], z: ArrayView2<f64>, r: &mut Array2<f64>) {
    let sigma = target.sigma_hat();
    let nz = nonzero_rows(z);
    for &i in rows {
        let mut ri = r.row_mut(i);
        ri.fill(0.0);
        for &k in &nz {
            let s = sigma[[i, k]];
            if s != 0.0 {
                ri.scaled_add(s, &z.row(k));
            }
        }
        ri.scaled_add(target.ridge(), &z.row(i));
    }
}

/// Rows that cannot enter the fit: a zero diagonal with zero covariances and zero signal.
/// Any other non-positive diagonal is an error.
fn excluded_rows(target: &TargetPair) -> Result<Vec<usize>> {
    let sigma = target.sigma_hat();
    let m = target.m_hat();
    let mut out = Vec::new();
    for j in 0..target.p() {
        let d = target.diag(j);
        if d > 0.0 {
            continue;
        }
        let inert = d == 0.0 && sigma.row(j).iter().all(|&v| v == 0.0) && m.row(j).iter().all(|&v| v == 0.0);
        if !inert {
            return Err(SoblError::NonPositiveDiagonal { index: j, value: d });
        }
        out.push(j);
    }
    Ok(out)
}

/// Unweighted group-lasso fit (`λ_j = λ` for every row) that recomputes each
/// partial residual `M̂_j − Σ_{k≠j} σ̂_jk Z_k` from scratch instead of caching `Σ̂Z`.
///
/// Slower than [`sobl_fit`]; kept as an independent implementation of the
/// plain sparse LDA estimator.
pub fn group_lasso_fit(target: &TargetPair, lambda: f64, config: &SolverConfig) -> Result<BasisEstimate> {
    config.validate()?;
    let target = target.with_ridge(target.ridge() + config.ridge);
    let (p, q) = (target.p(), target.q());
    let penalty = PenaltySpec::uniform(lambda, p)?;
    let excluded = excluded_rows(&target)?;
    let sigma = target.sigma_hat();
    let m = target.m_hat();
    let mut z = config.warm_start.clone().unwrap_or_else(|| Array2::zeros((p, q)));
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            if excluded.contains(&j) {
                continue;
            }
            let mut a = m.row(j).to_owned();
            for k in 0..p {
                if k != j && sigma[[j, k]] != 0.0 {
                    a.scaled_add(-sigma[[j, k]], &z.row(k));
                }
            }
            let new = row_update(a.view(), target.diag(j), lambda)?;
            max_change = max_change.max(l2((&new - &z.row(j)).view()));
            z.row_mut(j).assign(&new);
        }
        iterations += 1;
        if max_change < config.tol {
            converged = true;
            break;
        }
    }
    Ok(BasisEstimate {
        active_set: nonzero_rows(z.view()),
        objective: objective_value(z.view(), &target, &penalty)?,
        kkt_residual: kkt_residual(z.view(), &target, &penalty)?,
        z,
        iterations,
        converged,
        excluded,
    })
}

/// Warm-started fits along a strictly decreasing sequence of `λ` at fixed `η`.
pub fn solution_path(
    target: &TargetPair,
    weights: &OrdinalWeightVector,
    lambdas: &[f64],
    eta: f64,
    config: &SolverConfig,
) -> Result<Vec<BasisEstimate>> {
    if lambdas.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(SoblError::InvalidArgument("lambda path must be strictly decreasing".into()));
    }
    let penalties = lambdas
        .iter()
        .map(|&l| PenaltySpec::new(l, eta, weights))
        .collect::<Result<Vec<_>>>()?;
    warm_path(target, &penalties, config)
}

/// Warm-started fits along a strictly increasing sequence of `η` at fixed `λ`.
pub fn eta_path(
    target: &TargetPair,
    weights: &OrdinalWeightVector,
    lambda: f64,
    etas: &[f64],
    config: &SolverConfig,
) -> Result<Vec<BasisEstimate>> {
    if etas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(SoblError::InvalidArgument("eta path must be strictly increasing".into()));
    }
    let penalties = etas
        .iter()
        .map(|&e| PenaltySpec::new(lambda, e, weights))
        .collect::<Result<Vec<_>>>()?;
    warm_path(target, &penalties, config)
}

fn warm_path(target: &TargetPair, penalties: &[PenaltySpec], config: &SolverConfig) -> Result<Vec<BasisEstimate>> {
    let mut out: Vec<BasisEstimate> = Vec::with_capacity(penalties.len());
    let mut cfg = config.clone();
    for pen in penalties {
        let fit = sobl_fit(target, pen, &cfg)?;
        cfg.warm_start = Some(fit.z.clone());
        out.push(fit);
    }
    Ok(out)
}
