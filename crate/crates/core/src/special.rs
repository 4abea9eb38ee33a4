//! Special functions and small numerical kernels shared by the other modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::sync::OnceLock;

pub use statrs::function::gamma::{gamma, ln_gamma};

/// Lower incomplete gamma function `∫_0^x t^{a-1} e^{-t} dt`.
pub fn lower_gamma(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    statrs::function::gamma::gamma_lr(a, x) * gamma(a)
}

/// `∫_0^y t^{a-1} e^{-b t} dt` for `a > 0`, `b >= 0`.
pub fn int_pow_exp(a: f64, b: f64, y: f64) -> f64 {
    if y <= 0.0 {
        return 0.0;
    }
    if b == 0.0 {
        return y.powf(a) / a;
    }
    // small b*y: the series is more accurate than the regularized function
    let by = b * y;
    if by < 1e-3 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 0..12 {
            sum += term / (a + k as f64);
            term *= -by / (k as f64 + 1.0);
        }
        return y.powf(a) * sum;
    }
    lower_gamma(a, by) / b.powf(a)
}

pub fn beta(a: f64, b: f64) -> f64 {
    (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)).exp()
}

/// `e^{-z} M(a, c, z)` for `z >= 0`, `a, c > 0`, with `M` Kummer's confluent
/// hypergeometric function. All series terms are positive, so the sum is
/// accumulated in log space to stay finite for large `z`.
pub fn kummer_m_scaled(a: f64, c: f64, z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    if z == 0.0 {
        return 1.0;
    }
    let lz = z.ln();
    let mut log_term = 0.0f64;
    let mut log_max = 0.0f64;
    let mut acc = 1.0f64; // sum scaled by exp(-log_max)
    let mut k = 0usize;
    loop {
        let kf = k as f64;
        log_term += ((a + kf) / ((c + kf) * (kf + 1.0))).ln() + lz;
        k += 1;
        if log_term > log_max {
            acc = acc * (log_max - log_term).exp() + 1.0;
            log_max = log_term;
        } else {
            acc += (log_term - log_max).exp();
        }
        // terms decrease once k > z roughly; stop when negligible
        if (k as f64) > z && log_term - log_max < -40.0 {
            break;
        }
        if k > 100_000 {
            break;
        }
    }
    (log_max + acc.ln() - z).exp()
}

/// `(1 - e^{-s a}) / s`, continuous at `s = 0` where it equals `a`.
pub fn one_minus_exp_over(s: Complex64, a: f64) -> Complex64 {
    let z = s * a;
    if z.norm() < 1e-4 {
        // a (1 - z/2 + z^2/6 - z^3/24)
        let mut sum = Complex64::new(1.0, 0.0);
        let mut term = Complex64::new(1.0, 0.0);
        for k in 2..7 {
            term *= -z / k as f64;
            sum += term;
        }
        return sum * a;
    }
    (Complex64::new(1.0, 0.0) - (-z).exp()) / s
}

/// Nodes and weights of the n-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Cached 15-point Gauss–Legendre rule.
pub fn gl15() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(15))
}

/// Integrate `f` over [a, b] with a cached Gauss–Legendre rule.
pub fn gl_integrate(rule: &(Vec<f64>, Vec<f64>), a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(t, w)| w * f(mid + half * t))
        .sum::<f64>()
        * half
}

/// Least-squares polynomial fit in the monomial basis of `t`.
/// Returns coefficients (constant first) and the residual RMS.
pub fn polyfit(ts: &[f64], ys: &[f64], degree: usize) -> (Vec<f64>, f64, Vec<f64>) {
    let n = ts.len();
    let cols = degree + 1;
    let scale = ts.iter().fold(0.0f64, |m, t| m.max(t.abs())).max(f64::MIN_POSITIVE);
    let a = DMatrix::from_fn(n, cols, |i, j| (ts[i] / scale).powi(j as i32));
    let y = DVector::from_column_slice(ys);
    let svd = a.clone().svd(true, true);
    let coef = svd.solve(&y, 1e-14).expect("svd solve");
    let resid = &a * &coef - &y;
    let dof = (n as f64 - cols as f64).max(1.0);
    let rms = (resid.norm_squared() / dof).sqrt();
    // diagonal of (A^T A)^{-1}, used for coefficient standard errors
    let ata = a.transpose() * &a;
    let inv_diag = ata
        .try_inverse()
        .map(|m| (0..cols).map(|j| m[(j, j)]).collect::<Vec<_>>())
        .unwrap_or_else(|| vec![f64::INFINITY; cols]);
    let coefs = (0..cols).map(|j| coef[j] / scale.powi(j as i32)).collect();
    let var_scale = (0..cols).map(|j| inv_diag[j] / scale.powi(2 * j as i32)).collect();
    (coefs, rms, var_scale)
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}
