//! Numerical checks of the limit laws of `u^(q)` and `u'` at zero and at infinity.
//!
//! A law passes on a trend criterion: the monitored quantity must approach its limit
//! monotonically over the last three grid points and meet a final tolerance.

use crate::error::{Error, Result};
use crate::fmt_e;
use crate::inversion::{ContourSpec, Inverter};
use crate::levy::{LevyModel, Side, TailValue};
use crate::series::SeriesEvaluator;
use crate::special::{polyfit, KahanSum};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Law {
    /// Remainder of the truncated series against its first omitted term.
    ZeroSeries,
    /// Slope of `u` at zero.
    LinearZero,
    /// Leading terms of `u'` at zero.
    DuZero,
    /// `u' → 0` at infinity.
    DuInfinity,
}

impl Law {
    pub fn as_str(self) -> &'static str {
        match self {
            Law::ZeroSeries => "zero-series",
            Law::LinearZero => "linear-zero",
            Law::DuZero => "du-zero",
            Law::DuInfinity => "du-infinity",
        }
    }
}

impl std::str::FromStr for Law {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero-series" => Ok(Law::ZeroSeries),
            "linear-zero" => Ok(Law::LinearZero),
            "du-zero" => Ok(Law::DuZero),
            "du-infinity" => Ok(Law::DuInfinity),
            other => Err(Error::Domain(format!("unknown law '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticCheck {
    pub law: Law,
    pub xs: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub ratio: Vec<f64>,
    /// Quantity whose trend decides the verdict (e.g. `|R − 1|` or `|residual|`).
    pub monitored: Vec<f64>,
    pub pass: bool,
    /// Fitted limit or slope, where the law has one.
    pub slope: Option<f64>,
    pub note: Option<String>,
}

impl AsymptoticCheck {
    /// CSV with columns `x,lhs,rhs,ratio`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,lhs,rhs,ratio\n");
        for i in 0..self.xs.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                fmt_e(self.xs[i]),
                fmt_e(self.lhs[i]),
                fmt_e(self.rhs[i]),
                fmt_e(self.ratio[i])
            ));
        }
        out
    }

    pub fn verdict_json(&self) -> serde_json::Value {
        serde_json::json!({
            "law": self.law.as_str(),
            "pass": self.pass,
            "slope": self.slope,
            "points": self.xs.len(),
            "final_ratio": self.ratio.last(),
            "note": self.note,
        })
    }
}

/// Geometric grid from `start` to `end` (either direction) with `per_decade` points per decade.
pub fn geometric_grid(start: f64, end: f64, per_decade: usize) -> Result<Vec<f64>> {
    if !(start > 0.0 && end > 0.0) || per_decade < 1 || start == end {
        return Err(Error::Domain("geometric grid needs distinct positive endpoints".into()));
    }
    let decades = (end / start).log10().abs();
    let steps = (decades * per_decade as f64).ceil().max(1.0) as usize;
    let ratio = (end / start).powf(1.0 / steps as f64);
    let mut xs: Vec<f64> = (0..steps).map(|i| start * ratio.powi(i as i32)).collect();
    xs.push(end);
    Ok(xs)
}

fn check_grid(xs: &[f64], decreasing: bool) -> Result<()> {
    if xs.len() < 3 || xs.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Domain("law checks need at least 3 positive grid points".into()));
    }
    let ok = xs.windows(2).all(|w| if decreasing { w[1] < w[0] } else { w[1] > w[0] });
    if !ok {
        let dir = if decreasing { "decreasing" } else { "increasing" };
        return Err(Error::Domain(format!("grid must be strictly {dir}")));
    }
    Ok(())
}

/// `v` non-increasing over its last three entries.
fn settles(v: &[f64]) -> bool {
    let n = v.len();
    n >= 3 && v[n - 3..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-300)
}

/// Like [`settles`], but increases within the combined error estimates `noise` do not count.
fn settles_within(v: &[f64], noise: &[f64]) -> bool {
    let n = v.len();
    n >= 3 && (n - 2..n).all(|i| v[i] <= v[i - 1] * (1.0 + 1e-12) + noise[i] + noise[i - 1])
}

/// Signed sum `Σ_{k>n} (−1)^k δ^{-(k+1)} 𝟏 * f^{*k}(x)` until terms drop below `1e-17` of the first.
fn series_tail(ev: &SeriesEvaluator, n: usize, x: f64) -> Result<(f64, f64)> {
    let first = ev.term(n + 1, x)?;
    let mut acc = KahanSum::default();
    let mut k = n + 1;
    loop {
        let t = ev.term(k, x)?;
        acc.add(if k.is_multiple_of(2) { t } else { -t });
        if t <= 1e-17 * first || k > n + 200 {
            break;
        }
        k += 1;
    }
    Ok((acc.value(), first))
}

/// `R(x) = |Σ_{k<=n} (−1)^k δ^{-(k+1)} 𝟏*f^{*k}(x) − u(x)| / (δ^{-(n+2)} 𝟏*f^{*(n+1)}(x))`
/// on a decreasing grid inside the series radius; passes when `R` is within 5% of 1 at the
/// smallest point and `|R − 1|` decreases over the last three.
pub fn check_zero_series(model: &LevyModel, n: usize, xs: &[f64]) -> Result<AsymptoticCheck> {
    check_grid(xs, true)?;
    let radius = crate::series::series_radius(model);
    if xs[0] > radius {
        return Err(Error::OutOfRadius {
            x: xs[0],
            m: model.series_ratio(xs[0]),
        });
    }
    let ev = SeriesEvaluator::new(model, xs[0]);
    let mut check = empty(Law::ZeroSeries, xs);
    if model.is_pure_drift() && model.q() == 0.0 {
        check.lhs = vec![0.0; xs.len()];
        check.rhs = vec![0.0; xs.len()];
        check.ratio = vec![1.0; xs.len()];
        check.monitored = vec![0.0; xs.len()];
        check.pass = true;
        check.note = Some("degenerate-exact: the remainder vanishes identically".into());
        return Ok(check);
    }
    for &x in xs {
        let (tail, first) = series_tail(&ev, n, x)?;
        if !(first > 1e-290) {
            return Err(Error::ShrinkGrid(x));
        }
        let r = tail.abs() / first;
        check.lhs.push(tail.abs());
        check.rhs.push(first);
        check.ratio.push(r);
        check.monitored.push((r - 1.0).abs());
    }
    check.pass = check.monitored.last().is_some_and(|&d| d <= 0.05) && settles(&check.monitored);
    Ok(check)
}

fn empty(law: Law, xs: &[f64]) -> AsymptoticCheck {
    AsymptoticCheck {
        law,
        xs: xs.to_vec(),
        lhs: Vec::new(),
        rhs: Vec::new(),
        ratio: Vec::new(),
        monitored: Vec::new(),
        pass: false,
        slope: None,
        note: None,
    }
}

/// Slope of `u` at zero. With a finite Lévy measure `(u(x) − 1/δ)/x` is extrapolated
/// linearly to `x = 0` and must land within 5% of `−(Π(ℝ)+q)/δ²`; otherwise
/// `(1/δ − u(x))/x` must grow monotonically over the last decade.
pub fn check_linear_zero(model: &LevyModel, xs: &[f64]) -> Result<AsymptoticCheck> {
    check_grid(xs, true)?;
    let ev = SeriesEvaluator::new(model, xs[0]);
    let delta = model.drift();
    let mut check = empty(Law::LinearZero, xs);
    let target = match model.total_mass() {
        TailValue::Finite(m) => Some(-(m + model.q()) / (delta * delta)),
        TailValue::Unbounded => None,
    };
    for &x in xs {
        // u(x) − 1/δ is minus the tail after the constant term
        let (tail, _) = series_tail(&ev, 0, x)?;
        let s = tail / x;
        match target {
            Some(t) => {
                check.lhs.push(s);
                check.rhs.push(t);
                check.ratio.push(if t == 0.0 { f64::NAN } else { s / t });
            }
            None => {
                check.lhs.push(-s);
                check.rhs.push(f64::NAN);
                check.ratio.push(f64::NAN);
            }
        }
    }
    match target {
        Some(t) => {
            let (c, _, _) = polyfit(xs, &check.lhs, 1);
            check.slope = Some(c[0]);
            check.monitored = check.lhs.iter().map(|s| (s - t).abs()).collect();
            check.pass = if t == 0.0 {
                c[0].abs() < 1e-12
            } else {
                (c[0] / t - 1.0).abs() <= 0.05
            };
        }
        None => {
            let decade_end = xs[xs.len() - 1] * 10.0;
            let last: Vec<f64> = xs
                .iter()
                .zip(&check.lhs)
                .filter(|(&x, _)| x <= decade_end * (1.0 + 1e-12))
                .map(|(_, &v)| v)
                .collect();
            check.monitored = check.lhs.clone();
            check.pass = last.len() >= 2 && last.windows(2).all(|w| w[1] > w[0]);
            check.note = Some("infinite Levy measure: super-linear decay expected".into());
        }
    }
    Ok(check)
}

/// Smallest `n >= 1` with `β <= n/(n+1)`.
pub fn du_zero_order(beta: f64) -> usize {
    let mut n = 1;
    while beta > n as f64 / (n as f64 + 1.0) {
        n += 1;
    }
    n
}

/// Residual `u'(x±) − Σ_{k=1}^{n} (−1)^k δ^{-(k+1)} (q+Π̄)^{*k}(x±)` on a decreasing grid,
/// with `u'` from the Bromwich representation. Passes when `|residual|` relative to the leading
/// term `−(q+Π̄(x±))/δ²` decreases over the last three points and ends below 1%.
pub fn check_du_zero(model: &LevyModel, xs: &[f64], side: Side) -> Result<AsymptoticCheck> {
    check_grid(xs, true)?;
    let beta = model.bg_index()?;
    if beta >= 1.0 {
        return Err(Error::Precondition(format!("index {beta} >= 1")));
    }
    let finite = model.total_mass().is_finite();
    let n = if finite { 1 } else { du_zero_order(beta) };
    let delta = model.drift();
    let inv = Inverter::new(model, xs[0])?;
    let mut check = empty(Law::DuZero, xs);
    for &x in xs {
        let du = inv.du(x, 1, side, &ContourSpec::default(), 1e-9)?;
        let mut partial = KahanSum::default();
        for k in 1..=n {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            partial.add(sign * inv_power(&inv, k, x, side)? / delta.powi(k as i32 + 1));
        }
        let lead = -model.kernel(x, side) / (delta * delta);
        check.lhs.push(du.value);
        check.rhs.push(lead);
        check.ratio.push(du.value / lead);
        check.monitored.push(((du.value - partial.value()) / lead).abs());
    }
    check.pass = settles(&check.monitored) && check.monitored.last().is_some_and(|&r| r < 0.01);
    check.slope = Some(n as f64);
    if finite {
        check.note = Some("finite tail at zero: leading term taken as -(q + tail(x))/drift^2".into());
    }
    Ok(check)
}

fn inv_power(inv: &Inverter, k: usize, x: f64, side: Side) -> Result<f64> {
    inv.engine().power(k, x, side)
}

/// `u'(x±)` on the imaginary-axis contour along an increasing grid. Columns: `lhs = u'(x+)`,
/// `rhs = u'(x−)`, `ratio = δ max(|u'(x±)|)`. Passes when `max |u'(x±)|` decreases over the
/// last three points (up to the quadrature error estimates) and ends below `1e-3/δ`.
pub fn check_du_infinity(model: &LevyModel, xs: &[f64]) -> Result<AsymptoticCheck> {
    check_grid(xs, false)?;
    if model.q() > 0.0 {
        return Err(Error::Precondition("the decay law at infinity is checked for q = 0 only".into()));
    }
    if model.mean().finite().is_none() {
        return Err(Error::Precondition(
            "infinite mean: the decay of u' at infinity is not covered".into(),
        ));
    }
    let delta = model.drift();
    let inv = Inverter::new(model, *xs.last().unwrap())?;
    let mut check = empty(Law::DuInfinity, xs);
    let mut noise = Vec::with_capacity(xs.len());
    for &x in xs {
        let r = inv.du_infinity(x, None, Side::Right, 1e-10)?;
        let l = inv.du_infinity(x, None, Side::Left, 1e-10)?;
        let m = r.value.abs().max(l.value.abs());
        check.lhs.push(r.value);
        check.rhs.push(l.value);
        check.ratio.push(delta * m);
        check.monitored.push(m);
        noise.push(r.err_est.max(l.err_est));
    }
    check.pass = settles_within(&check.monitored, &noise) && check.monitored.last().is_some_and(|&m| m < 1e-3 / delta);
    Ok(check)
}

/// Default increasing grid for the law at infinity, ending at `max(20 E[X₁], 40)`.
pub fn default_infinity_grid(model: &LevyModel) -> Result<Vec<f64>> {
    let mean = model
        .mean()
        .finite()
        .ok_or_else(|| Error::Precondition("infinite mean".into()))?;
    let end = (20.0 * mean).max(40.0);
    Ok(vec![end / 8.0, end / 4.0, end / 2.0, end])
}
