//! Split representation of `u^(q)` and its derivatives: a finite convolution sum plus a
//! Bromwich integral of the remainder transform along `Re s = λ`.
//!
//! With `L = ℒ(Π̄ + q)`, the remainder transform for the `k`-th derivative is
//! `s^k (−L)^N / (s δ^{N+1} (1 + L/δ))`, which decays like `|θ|^{N(β+ε−1)−1+k}`.

use crate::conv::ConvEngine;
use crate::error::{Error, Result};
use crate::levy::{LevyModel, Side};
use crate::special::{gl15, KahanSum};
use num_complex::Complex64;
use serde::Serialize;
use std::f64::consts::PI;

/// Floor on `|1 + L/δ|` along the contour.
pub const DENOM_FLOOR: f64 = 1e-10;
const MAX_PANELS: usize = 1_000_000;
const MAX_ORDER: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ContourSpec {
    /// Abscissa; `None` selects `clamp(1/x, 1e-3, 10)`.
    pub lambda: Option<f64>,
    /// Split order; `None` selects `ceil((k + 3) / (1 − β − ε))`.
    pub order: Option<usize>,
    /// Fixed truncation of the θ-integral; `None` derives it from the tail bound.
    pub theta_cut: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InversionValue {
    pub value: f64,
    pub err_est: f64,
    pub order: usize,
    pub lambda: f64,
    pub theta_cut: f64,
    pub panels: usize,
}

pub fn default_lambda(x: f64) -> f64 {
    (1.0 / x).clamp(1e-3, 10.0)
}

/// `ℒ(Π̄ + q)(s)`; `Re s = 0` is allowed only for `q = 0` and finite mean.
pub fn tail_laplace(model: &LevyModel, s: Complex64) -> Result<Complex64> {
    if s.re == 0.0 && !imaginary_axis_ok(model) {
        return Err(Error::Precondition(
            "the imaginary axis needs q = 0 and a finite mean".into(),
        ));
    }
    model.tail_laplace(s)
}

fn imaginary_axis_ok(model: &LevyModel) -> bool {
    model.q() == 0.0 && model.mean().finite().is_some()
}

fn denominator(model: &LevyModel, l: Complex64) -> Result<Complex64> {
    let d = Complex64::new(1.0, 0.0) + l / model.drift();
    if d.norm() < DENOM_FLOOR {
        return Err(Error::NearSingularDenominator(d.norm()));
    }
    Ok(d)
}

/// `g^{N}(s) = (−L)^N / (s δ^{N+1} (1 + L/δ))`.
pub fn g_fn(model: &LevyModel, n: usize, s: Complex64) -> Result<Complex64> {
    Ok(h_fn(model, n, s)? / s)
}

/// `h^{N}(s) = (−L)^N / (δ^{N+1} (1 + L/δ))`.
pub fn h_fn(model: &LevyModel, n: usize, s: Complex64) -> Result<Complex64> {
    let l = tail_laplace(model, s)?;
    let d = denominator(model, l)?;
    Ok((-l).powi(n as i32) / (d * model.drift().powi(n as i32 + 1)))
}

/// Evaluator sharing one convolution engine across points.
#[derive(Debug)]
pub struct Inverter {
    engine: ConvEngine,
    beta: f64,
    eps: f64,
}

struct Resolved {
    n: usize,
    lambda: f64,
    theta_cut: Option<f64>,
}

impl Inverter {
    pub fn new(model: &LevyModel, horizon: f64) -> Result<Self> {
        let beta = model.bg_index()?;
        let eps = model.decay_slack()?;
        Ok(Self {
            engine: ConvEngine::new(model, horizon),
            beta,
            eps,
        })
    }

    fn model(&self) -> &LevyModel {
        self.engine.model()
    }

    pub fn engine(&self) -> &ConvEngine {
        &self.engine
    }

    /// Smallest order with `N (1 − β − ε) > k`.
    pub fn min_order(&self, k: usize) -> usize {
        (k as f64 / (1.0 - self.beta - self.eps)).floor() as usize + 1
    }

    pub fn default_order(&self, k: usize) -> usize {
        ((k as f64 + 3.0) / (1.0 - self.beta - self.eps)).ceil() as usize
    }

    fn resolve(&self, spec: &ContourSpec, x: f64, k: usize) -> Result<Resolved> {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::Domain(format!("inversion needs x > 0, got {x}")));
        }
        let lambda = spec.lambda.unwrap_or_else(|| default_lambda(x));
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("contour abscissa must be >= 0, got {lambda}")));
        }
        if lambda == 0.0 && !imaginary_axis_ok(self.model()) {
            return Err(Error::Precondition(
                "lambda = 0 needs q = 0 and a finite mean".into(),
            ));
        }
        let n = spec.order.unwrap_or_else(|| self.default_order(k));
        if n == 0 || n < self.min_order(k) {
            return Err(Error::OrderTooSmall {
                given: n,
                required: self.min_order(k).max(1),
            });
        }
        if let Some(t) = spec.theta_cut {
            if !(t > 0.0) {
                return Err(Error::Domain(format!("theta_cut must be positive, got {t}")));
            }
        }
        Ok(Resolved {
            n,
            lambda,
            theta_cut: spec.theta_cut,
        })
    }

    /// `s^k g^{N}(s)`.
    fn remainder(&self, n: usize, k: usize, s: Complex64) -> Result<Complex64> {
        let model = self.model();
        let l = model.tail_laplace_unchecked(s);
        let d = denominator(model, l)?;
        let mut num = (-l).powi(n as i32) / (d * model.drift().powi(n as i32 + 1));
        if k == 0 {
            num /= s;
        } else {
            for _ in 1..k {
                num *= s;
            }
        }
        Ok(num)
    }

    /// Θ from the fitted tail bound `C θ^p`, `C = 2 max |F| θ^{−p}` over probes.
    fn theta_from_bound(&self, n: usize, k: usize, lambda: f64, x: f64, tol: f64) -> Result<(f64, f64, f64)> {
        let p = n as f64 * (self.beta + self.eps - 1.0) - 1.0 + k as f64;
        let mut c = 0.0f64;
        for j in 0..=32 {
            let theta = 10f64.powf(j as f64 / 8.0);
            let f = self.remainder(n, k, Complex64::new(lambda, theta))?;
            c = c.max(f.norm() * theta.powf(-p));
        }
        c *= 2.0;
        let pref = (lambda * x).exp() / PI;
        let theta = if c == 0.0 {
            1.0
        } else {
            ((0.5 * tol * (-p - 1.0)) / (pref * c)).powf(1.0 / (p + 1.0)).max(1.0)
        };
        Ok((theta, c, p))
    }

    /// Uniform panel width: one period of the fastest oscillation `e^{iθ(x + N a)}`, where
    /// `a` is the largest atom not damped below `1e-16` on the contour.
    fn panel_width(&self, n: usize, lambda: f64, x: f64) -> f64 {
        let reach = if lambda > 0.0 { 37.0 / lambda } else { f64::INFINITY };
        let a = self
            .model()
            .atomic_part()
            .atoms()
            .iter()
            .map(|a| a.x)
            .filter(|&a| a <= reach)
            .fold(0.0, f64::max);
        2.0 * PI / (x + n as f64 * a).max(1.0)
    }

    /// `(1/π) Re ∫_0^Θ e^{iθx} F(λ+iθ) dθ` scaled by `e^{λx}`, with error estimate.
    ///
    /// `F` has a pole-like peak of width `λ` at `θ = 0`, so `[0, W]` is split geometrically
    /// (`λ/2, λ, 2λ, ...`) before the uniform panels of width `W` start.
    fn bromwich(&self, n: usize, k: usize, lambda: f64, theta_cut: Option<f64>, x: f64, tol: f64) -> Result<(f64, f64, f64, usize)> {
        let width = self.panel_width(n, lambda, x);
        let pref = (lambda * x).exp() / PI;
        let (theta, c, p) = match theta_cut {
            Some(t) => (t, 0.0, 0.0),
            None => self.theta_from_bound(n, k, lambda, x, tol)?,
        };
        let mut panels = ((theta / width).ceil() as usize).max(1);
        if panels > MAX_PANELS {
            return Err(Error::OrderTooSmall {
                given: n,
                required: self.order_for_panels(k, lambda, x, tol)?,
            });
        }
        let rule = gl15();
        let segment = |a: f64, b: f64| -> Result<f64> {
            let half = 0.5 * (b - a);
            let mid = a + half;
            let mut acc = 0.0;
            for (t, w) in rule.0.iter().zip(&rule.1) {
                let th = mid + half * t;
                let f = self.remainder(n, k, Complex64::new(lambda, th))?;
                acc += w * (Complex64::new(0.0, th * x).exp() * f).re;
            }
            Ok(acc * half)
        };
        let panel = |i: usize| segment(i as f64 * width, (i + 1) as f64 * width);
        let mut total = KahanSum::default();
        let mut edges = vec![0.0];
        if lambda > 0.0 {
            let mut e = 0.5 * lambda;
            while e < 0.5 * width {
                edges.push(e);
                e *= 2.0;
            }
        }
        edges.push(width);
        for w in edges.windows(2) {
            total.add(segment(w[0], w[1])?);
        }
        for i in 1..panels {
            total.add(panel(i)?);
        }
        if theta_cut.is_some() {
            return Ok((pref * total.value(), 0.0, panels as f64 * width, panels));
        }
        // post-hoc check: the piece over [Θ, 2Θ] must be negligible
        loop {
            let mut piece = KahanSum::default();
            for i in panels..2 * panels {
                piece.add(panel(i)?);
            }
            total.add(piece.value());
            panels *= 2;
            let piece_abs = pref * piece.value().abs();
            let cut = panels as f64 * width;
            let bound = if c == 0.0 { 0.0 } else { pref * c * cut.powf(p + 1.0) / (-p - 1.0) };
            if piece_abs < 0.1 * tol {
                return Ok((pref * total.value(), piece_abs + bound, cut, panels));
            }
            if 2 * panels > MAX_PANELS {
                return Err(Error::AccuracyFailure {
                    achieved: piece_abs,
                    requested: 0.1 * tol,
                    context: format!("Bromwich tail at theta = {cut:.3e}"),
                });
            }
        }
    }

    fn order_for_panels(&self, k: usize, lambda: f64, x: f64, tol: f64) -> Result<usize> {
        for n in self.min_order(k)..=MAX_ORDER {
            let width = self.panel_width(n, lambda, x);
            let (theta, _, _) = self.theta_from_bound(n, k, lambda, x, tol)?;
            if theta / width <= MAX_PANELS as f64 / 2.0 {
                return Ok(n);
            }
        }
        Ok(MAX_ORDER)
    }

    /// `u^(q)(x)`.
    pub fn u(&self, x: f64, spec: &ContourSpec, tol: f64) -> Result<InversionValue> {
        let r = self.resolve(spec, x, 0)?;
        if r.lambda == 0.0 {
            return Err(Error::Precondition("u itself needs lambda > 0 (pole at s = 0)".into()));
        }
        let delta = self.model().drift();
        let mut sum = KahanSum::default();
        for j in 0..r.n {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sum.add(sign * self.engine.integral(j, x)? / delta.powi(j as i32 + 1));
        }
        let (integral, err, theta, panels) = self.bromwich(r.n, 0, r.lambda, r.theta_cut, x, tol)?;
        sum.add(integral);
        Ok(InversionValue {
            value: sum.value(),
            err_est: err,
            order: r.n,
            lambda: r.lambda,
            theta_cut: theta,
            panels,
        })
    }

    /// `k`-th one-sided derivative, `k >= 1`.
    pub fn du(&self, x: f64, k: usize, side: Side, spec: &ContourSpec, tol: f64) -> Result<InversionValue> {
        if k == 0 {
            return self.u(x, spec, tol);
        }
        let r = self.resolve(spec, x, k)?;
        let delta = self.model().drift();
        let mut sum = KahanSum::default();
        for j in 1..r.n {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            let v = if k == 1 {
                self.engine.power(j, x, side)?
            } else {
                self.engine.derivative(j, k - 1, x, side)?
            };
            sum.add(sign * v / delta.powi(j as i32 + 1));
        }
        let (integral, err, theta, panels) = self.bromwich(r.n, k, r.lambda, r.theta_cut, x, tol)?;
        sum.add(integral);
        Ok(InversionValue {
            value: sum.value(),
            err_est: err,
            order: r.n,
            lambda: r.lambda,
            theta_cut: theta,
            panels,
        })
    }

    /// `u'(x±)` on the imaginary axis, for `q = 0` and finite mean.
    pub fn du_infinity(&self, x: f64, order: Option<usize>, side: Side, tol: f64) -> Result<InversionValue> {
        if self.model().q() > 0.0 {
            return Err(Error::Precondition("the lambda = 0 contour needs q = 0".into()));
        }
        if self.model().mean().finite().is_none() {
            return Err(Error::Precondition(
                "the lambda = 0 contour needs a finite mean; the infinite-mean case is not covered".into(),
            ));
        }
        let spec = ContourSpec {
            lambda: Some(0.0),
            order: Some(order.unwrap_or_else(|| self.default_order(1).max(8))),
            theta_cut: None,
        };
        self.du(x, 1, side, &spec, tol)
    }
}

pub fn u_inversion(model: &LevyModel, x: f64, spec: &ContourSpec, tol: f64) -> Result<InversionValue> {
    Inverter::new(model, x)?.u(x, spec, tol)
}

pub fn du_inversion(model: &LevyModel, x: f64, k: usize, side: Side, spec: &ContourSpec, tol: f64) -> Result<InversionValue> {
    Inverter::new(model, x)?.du(x, k, side, spec, tol)
}

pub fn du_infinity_contour(model: &LevyModel, x: f64, order: Option<usize>, side: Side, tol: f64) -> Result<InversionValue> {
    Inverter::new(model, x)?.du_infinity(x, order, side, tol)
}
