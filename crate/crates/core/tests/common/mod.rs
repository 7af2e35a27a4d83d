//! Helpers shared by the integration and acceptance tests. Oracles here are
//! written independently of the library code paths they check.
#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sobl::{MethodVariant, TargetPair};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.sample(StandardNormal))
}

/// `AᵀA/p + shift·I` with standard normal `A`.
pub fn random_spd(rng: &mut impl Rng, p: usize, shift: f64) -> Array2<f64> {
    let a = normal_matrix(rng, p + 2, p);
    let mut s = a.t().dot(&a) / p as f64;
    for j in 0..p {
        s[[j, j]] += shift;
    }
    s
}

pub fn random_target(rng: &mut impl Rng, p: usize, q: usize) -> TargetPair {
    let sigma = random_spd(rng, p, 0.2);
    let m = normal_matrix(rng, p, q);
    TargetPair::new(sigma, m, MethodVariant::Msda).unwrap()
}

/// Random orthogonal `q × q` matrix by Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(rng: &mut impl Rng, q: usize) -> Array2<f64> {
    let g = normal_matrix(rng, q, q);
    let mut out = Array2::<f64>::zeros((q, q));
    for c in 0..q {
        let mut v = g.column(c).to_owned();
        for k in 0..c {
            let u = out.column(k).to_owned();
            let d = u.dot(&v);
            v.scaled_add(-d, &u);
        }
        let n = v.dot(&v).sqrt();
        out.column_mut(c).assign(&(v / n));
    }
    out
}

/// Inverse of a small SPD matrix by Gauss-Jordan elimination.
pub fn gauss_jordan_inverse(a: ArrayView2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut inv = Array2::<f64>::eye(n);
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[[i, c]].abs().total_cmp(&m[[j, c]].abs())).unwrap();
        for k in 0..n {
            m.swap([c, k], [piv, k]);
            inv.swap([c, k], [piv, k]);
        }
        let d = m[[c, c]];
        for k in 0..n {
            m[[c, k]] /= d;
            inv[[c, k]] /= d;
        }
        for i in 0..n {
            if i != c {
                let f = m[[i, c]];
                for k in 0..n {
                    m[[i, k]] -= f * m[[c, k]];
                    inv[[i, k]] -= f * inv[[c, k]];
                }
            }
        }
    }
    inv
}

/// `½tr(ZᵀΣZ) − tr(ZᵀM) + Σ λ_j‖Z_j‖`, evaluated directly.
pub fn primal_objective(z: ArrayView2<f64>, sigma: ArrayView2<f64>, m: ArrayView2<f64>, lambdas: &[f64]) -> f64 {
    let sz = sigma.dot(&z);
    let quad = 0.5 * (&z * &sz).sum() - (&z * &m).sum();
    let pen: f64 = z
        .rows()
        .into_iter()
        .zip(lambdas)
        .map(|(r, l)| l * r.dot(&r).sqrt())
        .sum();
    quad + pen
}

/// Reference minimizer through the dual problem
/// `min_U ½tr((M−U)ᵀΣ⁻¹(M−U))` subject to `‖U_j‖ ≤ λ_j`, solved by accelerated
/// projected gradient; `Z = Σ⁻¹(M − U)`.
pub fn dual_projected_gradient(sigma: ArrayView2<f64>, m: ArrayView2<f64>, lambdas: &[f64], iters: usize) -> Array2<f64> {
    let s_inv = gauss_jordan_inverse(sigma);
    // Lipschitz constant of the dual gradient: largest eigenvalue of Σ⁻¹, bounded by the ∞-norm
    let lip = s_inv
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / lip;
    let project = |u: &mut Array2<f64>| {
        for (mut row, &l) in u.rows_mut().into_iter().zip(lambdas) {
            let n = row.dot(&row).sqrt();
            if n > l {
                row *= l / n;
            }
        }
    };
    let mut u = Array2::<f64>::zeros(m.raw_dim());
    let mut v = u.clone();
    let mut t = 1.0_f64;
    for _ in 0..iters {
        // ∇ = −Σ⁻¹(M − V)
        let grad = -s_inv.dot(&(&m - &v));
        let mut next = &v - &(step * &grad);
        project(&mut next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        v = &next + &((t - 1.0) / t_next * (&next - &u));
        u = next;
        t = t_next;
    }
    s_inv.dot(&(&m - &u))
}

/// Adaptive Simpson quadrature on `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

fn ln_gamma_stirling(x: f64) -> f64 {
    // shift up, then Stirling series
    let mut shift = 0.0;
    let mut x = x;
    while x < 10.0 {
        shift -= x.ln();
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    shift + (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

/// Upper tail of the F(d1, d2) distribution by quadrature of its density after
/// the substitution `x = f + s/(1−s)`.
pub fn f_upper_tail_quadrature(f: f64, d1: f64, d2: f64) -> f64 {
    let ln_b = ln_gamma_stirling(d1 / 2.0) + ln_gamma_stirling(d2 / 2.0) - ln_gamma_stirling((d1 + d2) / 2.0);
    let density = move |x: f64| {
        if x <= 0.0 {
            return 0.0;
        }
        ((d1 / 2.0) * (d1 / d2).ln() + (d1 / 2.0 - 1.0) * x.ln() - ((d1 + d2) / 2.0) * (1.0 + d1 * x / d2).ln() - ln_b)
            .exp()
    };
    let g = move |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let x = f + s / (1.0 - s);
        density(x) / ((1.0 - s) * (1.0 - s))
    };
    integrate(&g, 0.0, 1.0, 1e-13)
}

/// Two-sided p-value of Student's t by quadrature of its density.
pub fn t_two_sided_quadrature(t: f64, df: f64) -> f64 {
    let ln_c = ln_gamma_stirling((df + 1.0) / 2.0) - ln_gamma_stirling(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let t = t.abs();
    let g = move |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let x = t + s / (1.0 - s);
        (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp() / ((1.0 - s) * (1.0 - s))
    };
    2.0 * integrate(&g, 0.0, 1.0, 1e-13)
}

/// Pooled two-sample t statistic and degrees of freedom.
pub fn pooled_t(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let ss = |v: &[f64], m: f64| v.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    let df = (a.len() + b.len() - 2) as f64;
    let sp2 = (ss(a, ma) + ss(b, mb)) / df;
    let se = (sp2 * (1.0 / a.len() as f64 + 1.0 / b.len() as f64)).sqrt();
    ((ma - mb) / se, df)
}

/// Kendall τ by brute-force pair enumeration, without tie correction.
pub fn kendall_pairs(x: &[f64], y: &[usize]) -> f64 {
    let n = x.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = (x[j] - x[i]).signum() * if x[j] == x[i] { 0.0 } else { 1.0 };
            let dy = (y[j] as f64 - y[i] as f64).signum() * if y[j] == y[i] { 0.0 } else { 1.0 };
            s += dx * dy;
        }
    }
    s / (n * (n - 1) / 2) as f64
}

pub fn max_abs_diff(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    (&a - &b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn column(v: &[f64]) -> Array1<f64> {
    Array1::from(v.to_vec())
}
