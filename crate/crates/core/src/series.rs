//! The alternating convolution series for `u^(q)`, its derivative, the split into
//! monotone parts, and the Laplace-transform cross-check.

use crate::conv::ConvEngine;
use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::levy::{LevyModel, Side, TailValue};
use crate::special::KahanSum;
use crate::volterra::{u_volterra, VolterraOptions};
use serde::Serialize;

/// Largest `m(x)` for which the geometric tail bound is used.
pub const SERIES_RADIUS_RATIO: f64 = 0.5;
const MAX_TERMS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesValue {
    pub value: f64,
    pub err_bound: f64,
    pub terms_used: usize,
    /// False when `err_bound` is a ratio estimate rather than a proven bound.
    pub certified: bool,
}

/// Evaluates series terms against a shared convolution engine.
#[derive(Debug)]
pub struct SeriesEvaluator {
    engine: ConvEngine,
}

impl SeriesEvaluator {
    pub fn new(model: &LevyModel, horizon: f64) -> Self {
        Self {
            engine: ConvEngine::new(model, horizon),
        }
    }

    pub fn engine(&self) -> &ConvEngine {
        &self.engine
    }

    fn model(&self) -> &LevyModel {
        self.engine.model()
    }

    /// Largest `x` with `m(x) <= 1/2`, found by bisection on the increasing `m`.
    pub fn radius(&self) -> f64 {
        series_radius(self.model())
    }

    /// Unsigned term `δ^{-(n+1)} 𝟏 * f^{*n}(x)`.
    pub fn term(&self, n: usize, x: f64) -> Result<f64> {
        let delta = self.model().drift();
        if x == 0.0 {
            return Ok(if n == 0 { 1.0 / delta } else { 0.0 });
        }
        Ok(self.engine.integral(n, x)? / delta.powi(n as i32 + 1))
    }

    /// `Σ_{k=0}^{n} (−1)^k δ^{-(k+1)} 𝟏 * f^{*k}(x)`.
    pub fn partial_sum(&self, n: usize, x: f64) -> Result<f64> {
        let mut acc = KahanSum::default();
        for k in 0..=n {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            acc.add(sign * self.term(k, x)?);
        }
        Ok(acc.value())
    }

    /// Terms needed for the tail bound `m^{N+1} / (δ (1 − m)) < tol`.
    fn order_for(&self, m: f64, tol: f64) -> usize {
        let delta = self.model().drift();
        if m == 0.0 {
            return 0;
        }
        let mut n = 0;
        while m.powi(n as i32 + 1) / (delta * (1.0 - m)) >= tol && n < MAX_TERMS {
            n += 1;
        }
        n
    }

    pub fn u(&self, x: f64, tol: f64) -> Result<SeriesValue> {
        check_args(x, tol)?;
        let model = self.model();
        let m = model.series_ratio(x);
        if m > SERIES_RADIUS_RATIO {
            return Err(Error::OutOfRadius { x, m });
        }
        let n = self.order_for(m, tol);
        let value = self.partial_sum(n, x)?;
        let err_bound = if m == 0.0 { 0.0 } else { m.powi(n as i32 + 1) / (model.drift() * (1.0 - m)) };
        Ok(SeriesValue {
            value,
            err_bound,
            terms_used: n + 1,
            certified: true,
        })
    }

    /// `u'(x±) = Σ_{n>=1} (−1)^n δ^{-(n+1)} f^{*n}(x±)`.
    ///
    /// With a bounded kernel `f^{*n} <= f(0+) (δ m)^{n−1}` gives a proven tail; otherwise
    /// the tail is estimated from the observed ratio of successive terms.
    pub fn du(&self, x: f64, side: Side, tol: f64) -> Result<SeriesValue> {
        check_args(x, tol)?;
        if x == 0.0 {
            return Err(Error::Domain("the series derivative needs x > 0".into()));
        }
        let model = self.model();
        let delta = model.drift();
        let m = model.series_ratio(x);
        if m > SERIES_RADIUS_RATIO {
            return Err(Error::OutOfRadius { x, m });
        }
        let bounded = match model.total_mass() {
            TailValue::Finite(mass) => Some(mass + model.q()),
            TailValue::Unbounded => None,
        };
        let mut acc = KahanSum::default();
        let mut prev = f64::NAN;
        let mut n = 1;
        loop {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let t = self.engine.power(n, x, side)? / delta.powi(n as i32 + 1);
            if !t.is_finite() {
                return Ok(SeriesValue {
                    value: sign * t,
                    err_bound: 0.0,
                    terms_used: n,
                    certified: true,
                });
            }
            acc.add(sign * t);
            let err = match bounded {
                Some(f0) => f0 * m.powi(n as i32) / (delta * delta * (1.0 - m)),
                None => {
                    let r = if prev > 0.0 { (t / prev).min(0.99) } else { f64::INFINITY };
                    if r.is_finite() {
                        t.abs() * r / (1.0 - r)
                    } else {
                        f64::INFINITY
                    }
                }
            };
            if err < tol || n >= MAX_TERMS || t == 0.0 {
                let err = if t == 0.0 && bounded.is_none() { 0.0 } else { err };
                return Ok(SeriesValue {
                    value: acc.value(),
                    err_bound: err,
                    terms_used: n,
                    certified: bounded.is_some(),
                });
            }
            prev = t;
            n += 1;
        }
    }
}

fn check_args(x: f64, tol: f64) -> Result<()> {
    if !(x >= 0.0 && x.is_finite()) {
        return Err(Error::Domain(format!("x must be >= 0, got {x}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tol must be positive, got {tol}")));
    }
    Ok(())
}

/// Largest `x` with `m(x) <= 1/2`.
pub fn series_radius(model: &LevyModel) -> f64 {
    let m = |x: f64| model.series_ratio(x);
    let mut hi = 1.0;
    while m(hi) <= SERIES_RADIUS_RATIO {
        hi *= 2.0;
        if hi > 1e12 {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if m(mid) <= SERIES_RADIUS_RATIO {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    lo
}

pub fn u_series(model: &LevyModel, x: f64, tol: f64) -> Result<SeriesValue> {
    SeriesEvaluator::new(model, x.max(f64::MIN_POSITIVE)).u(x, tol)
}

pub fn du_series(model: &LevyModel, x: f64, side: Side, tol: f64) -> Result<SeriesValue> {
    SeriesEvaluator::new(model, x.max(f64::MIN_POSITIVE)).du(x, side, tol)
}

/// Increasing parts with `u = u1 − u2`: `u1` collects the even-order series terms and
/// `u2` the odd-order ones.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BvSplit {
    pub nodes: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub terms_used: usize,
    /// Largest `|u1 − u2 − u|` against the reference values.
    pub max_recon_err: f64,
    /// True when the reference was the Volterra solver (beyond the series radius).
    pub volterra_checked: bool,
}

impl BvSplit {
    pub fn is_monotone(&self) -> bool {
        let up = |v: &[f64]| v.windows(2).all(|w| w[1] >= w[0] - 1e-14 * w[0].abs().max(1.0));
        up(&self.u1) && up(&self.u2)
    }
}

/// Split on `nodes ⊂ [0, x_max]`. Inside the series radius the truncation is certified;
/// beyond it terms are summed until negligible and the result is checked against the
/// Volterra solution, failing with an accuracy error if they disagree by more than `tol`.
pub fn bv_split(model: &LevyModel, nodes: &[f64], tol: f64) -> Result<BvSplit> {
    let x_max = nodes.iter().copied().fold(0.0f64, f64::max);
    if nodes.is_empty() || !(x_max > 0.0) {
        return Err(Error::Domain("bv_split needs at least one positive node".into()));
    }
    if nodes.windows(2).any(|w| w[1] <= w[0]) || nodes[0] < 0.0 {
        return Err(Error::Domain("bv_split nodes must be nonnegative and increasing".into()));
    }
    let ev = SeriesEvaluator::new(model, x_max);
    let m = model.series_ratio(x_max);
    let delta = model.drift();
    let within = m <= SERIES_RADIUS_RATIO;
    let n_terms = if within {
        ev.order_for(m, tol) + 1
    } else {
        // the terms eventually decay factorially; stop once the largest is below tol / 10
        let mut n = 1;
        loop {
            let t = ev.term(n, x_max)?;
            if (t < 0.1 * tol && n > 2) || n >= MAX_TERMS {
                break n;
            }
            n += 1;
        }
    };
    let mut u1 = Vec::with_capacity(nodes.len());
    let mut u2 = Vec::with_capacity(nodes.len());
    for &x in nodes {
        let mut even = KahanSum::default();
        let mut odd = KahanSum::default();
        for n in 0..n_terms {
            let t = ev.term(n, x)?;
            if n % 2 == 0 {
                even.add(t);
            } else {
                odd.add(t);
            }
        }
        u1.push(even.value());
        u2.push(odd.value());
    }
    let mut split = BvSplit {
        nodes: nodes.to_vec(),
        u1,
        u2,
        terms_used: n_terms,
        max_recon_err: 0.0,
        volterra_checked: !within,
    };
    if within {
        split.max_recon_err = if m == 0.0 { 0.0 } else { m.powi(n_terms as i32) / (delta * (1.0 - m)) };
    } else {
        let opts = VolterraOptions {
            extra_nodes: nodes.to_vec(),
            ..Default::default()
        };
        let grid = u_volterra(model, x_max, &opts)?;
        for (i, &x) in nodes.iter().enumerate() {
            let reference = grid.value_at(x)?;
            let e = (split.u1[i] - split.u2[i] - reference).abs();
            split.max_recon_err = split.max_recon_err.max(e);
        }
        let allowed = 10.0 * tol.max(opts.tol);
        if split.max_recon_err > allowed {
            return Err(Error::AccuracyFailure {
                achieved: split.max_recon_err,
                requested: allowed,
                context: "series split beyond the radius disagrees with the Volterra solution".into(),
            });
        }
    }
    Ok(split)
}

/// `∫_0^∞ e^{−λx} u(x) dx` against `1/(q + ψ(λ))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossCheck {
    pub lambda: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub diff: f64,
    /// Bound on the neglected `∫_{x_max}^∞` part (`u <= 1/δ`).
    pub tail_bound: f64,
    pub x_max: f64,
}

pub fn laplace_crosscheck(model: &LevyModel, lam: f64, opts: &VolterraOptions) -> Result<CrossCheck> {
    if !(lam > 0.0 && lam.is_finite()) {
        return Err(Error::Domain(format!("lambda must be positive, got {lam}")));
    }
    let delta = model.drift();
    // truncate where the analytic tail e^{−λ x_max}/(δ λ) drops below 1e-10
    let x_max = ((1.0 / (delta * lam * 1e-10)).ln() / lam).max(1.0);
    let grid = u_volterra(model, x_max, opts)?;
    laplace_crosscheck_on(model, lam, &grid)
}

/// Cross-check against an existing grid.
pub fn laplace_crosscheck_on(model: &LevyModel, lam: f64, grid: &DensityGrid) -> Result<CrossCheck> {
    let x_max = grid.x_max();
    let lhs = grid.integrate_weighted(|x| (-lam * x).exp());
    let rhs = 1.0 / (model.q() + model.laplace_exponent(lam)?);
    Ok(CrossCheck {
        lambda: lam,
        lhs,
        rhs,
        diff: (lhs - rhs).abs(),
        tail_bound: (-lam * x_max).exp() / (model.drift() * lam),
        x_max,
    })
}
