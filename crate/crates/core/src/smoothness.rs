//! Pointwise differentiability of the potential measure and one-sided derivative jumps.
//!
//! `U^(q)` is `(k+1)`-times differentiable at `x` exactly when `x` is not a sum of at most
//! `k` atom locations; an absolutely continuous part of the supported (smooth) families
//! does not change this.

use crate::conv::{atom_sums, same_point, ConvEngine, LOCATION_TOL};
use crate::density::DensityGrid;
use crate::error::{Error, Result};
use crate::inversion::{ContourSpec, Inverter};
use crate::levy::{LevyModel, Side};
use crate::special::{factorial, polyfit};
use crate::volterra::{aligned_breakpoints, u_volterra, VolterraOptions};
use serde::Serialize;

pub const DEFAULT_K_MAX: usize = 4;
const JUMP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub k: usize,
    /// `U^(q)` is `(k+1)`-times differentiable at `x`, i.e. `u^(q)` is `k`-times.
    pub differentiable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpRecord {
    pub order: usize,
    /// Known only up to the first non-differentiable order.
    pub predicted: Option<f64>,
    pub measured: f64,
    pub stderr: f64,
}

impl JumpRecord {
    /// Decision rule: a jump is present when it exceeds three standard errors.
    pub fn is_jump(&self) -> bool {
        !self.measured.is_finite() || self.measured.abs() > 3.0 * self.stderr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothnessReport {
    pub x: f64,
    pub min_k: Option<usize>,
    pub verdicts: Vec<Verdict>,
    pub jumps: Vec<JumpRecord>,
}

impl SmoothnessReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Smallest derivative order whose measured one-sided values differ.
    pub fn first_measured_jump(&self) -> Option<usize> {
        self.jumps.iter().find(|j| j.is_jump()).map(|j| j.order)
    }
}

fn check_hypotheses(model: &LevyModel) -> Result<()> {
    // every supported AC family is C^∞ on (0, ∞); only the index condition can fail
    match model.bg_index() {
        Ok(b) if b >= 1.0 => Err(Error::Precondition(format!("Blumenthal-Getoor index {b} >= 1"))),
        _ => Ok(()),
    }
}

/// Smallest `k <= k_max` with `x ∈ G_k`.
pub fn min_k(model: &LevyModel, x: f64, k_max: usize) -> Result<Option<usize>> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("x must be positive, got {x}")));
    }
    if model.atomic_part().is_empty() {
        return Ok(None);
    }
    let set = atom_sums(model.atomic_part(), k_max, x * (1.0 + 2.0 * LOCATION_TOL))?;
    Ok(set.min_jumps(x))
}

fn mass_near(model: &LevyModel, y: f64) -> f64 {
    let atoms = model.atomic_part().atoms();
    let i = atoms.partition_point(|a| a.x < y && !same_point(a.x, y));
    atoms.get(i).filter(|a| same_point(a.x, y)).map_or(0.0, |a| a.mass)
}

/// `J_n(b)`: sum of `Π m` over ordered `n`-tuples of atoms adding up to `b`.
pub fn ordered_weight(model: &LevyModel, n: usize, b: f64) -> f64 {
    if n == 1 {
        return mass_near(model, b);
    }
    model
        .atomic_part()
        .atoms()
        .iter()
        .take_while(|a| a.x < b && !same_point(a.x, b))
        .map(|a| a.mass * ordered_weight(model, n - 1, b - a.x))
        .sum()
}

/// Verdicts and measured derivative jumps of orders `1..=k_max` at `x`.
pub fn classify_point(model: &LevyModel, x: f64, k_max: usize) -> Result<SmoothnessReport> {
    check_hypotheses(model)?;
    if k_max == 0 {
        return Err(Error::Domain("k_max must be at least 1".into()));
    }
    let mk = min_k(model, x, k_max)?;
    let verdicts = (1..=k_max)
        .map(|k| Verdict {
            k,
            differentiable: mk.is_none_or(|m| k < m),
        })
        .collect();
    let delta = model.drift();
    let inv = Inverter::new(model, x)?;
    let mut jumps = Vec::with_capacity(k_max);
    for order in 1..=k_max {
        let predicted = match mk {
            Some(m) if order == m => Some(ordered_weight(model, m, x) / delta.powi(m as i32 + 1)),
            Some(m) if order > m => None,
            _ => Some(0.0),
        };
        let (measured, stderr) = inversion_jump(&inv, x, order)?;
        jumps.push(JumpRecord {
            order,
            predicted,
            measured,
            stderr,
        });
    }
    Ok(SmoothnessReport { x, min_k: mk, verdicts, jumps })
}

fn inversion_jump(inv: &Inverter, x: f64, order: usize) -> Result<(f64, f64)> {
    let spec = ContourSpec::default();
    let r = inv.du(x, order, Side::Right, &spec, JUMP_TOL)?;
    let l = inv.du(x, order, Side::Left, &spec, JUMP_TOL)?;
    let measured = if r.value == l.value { 0.0 } else { r.value - l.value };
    let measured = if measured.is_nan() { f64::INFINITY } else { measured };
    let scale = r.value.abs().max(l.value.abs()).max(1.0);
    let stderr = (r.err_est + l.err_est).max(1e-13 * if scale.is_finite() { scale } else { 1.0 });
    Ok((measured, stderr))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JumpMethod {
    Inversion,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JumpMeasurement {
    pub predicted: f64,
    pub measured: f64,
    pub stderr: f64,
    pub method: JumpMethod,
}

/// `u'(x+) − u'(x−)` against `Π({x})/δ²`. The inversion route falls back to finite
/// differences on a Volterra grid when its preconditions fail.
pub fn derivative_jump(model: &LevyModel, x: f64, method: JumpMethod) -> Result<JumpMeasurement> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("x must be positive, got {x}")));
    }
    let predicted = mass_near(model, x) / model.drift().powi(2);
    if method == JumpMethod::Inversion {
        let attempt = Inverter::new(model, x).and_then(|inv| inversion_jump(&inv, x, 1));
        match attempt {
            Ok((measured, stderr)) => {
                return Ok(JumpMeasurement {
                    predicted,
                    measured,
                    stderr,
                    method,
                })
            }
            Err(Error::OrderTooSmall { .. } | Error::AccuracyFailure { .. } | Error::Precondition(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let (measured, stderr) = fd_jump(model, x)?;
    Ok(JumpMeasurement {
        predicted,
        measured,
        stderr,
        method: JumpMethod::FiniteDifference,
    })
}

/// Jump of `u'` at `x` from one-sided fits on a Volterra grid resolved to the model's scale
/// and to the distance from `x` to the nearest other breakpoint.
pub fn fd_jump(model: &LevyModel, x: f64) -> Result<(f64, f64)> {
    const MIN_STEP: f64 = 1e-3;
    let rate = model.kernel(x.min(1e-3), Side::Right) / model.drift();
    let gap = aligned_breakpoints(model, x + 1.0, 3)?
        .into_iter()
        .filter(|&b| !same_point(b, x))
        .map(|b| (b - x).abs())
        .fold(f64::INFINITY, f64::min);
    let h = (0.01f64).min(0.02 / rate.max(1e-12)).min(gap / 16.0);
    if h < MIN_STEP {
        return Err(Error::WindowTooSmall { found: (gap / MIN_STEP) as usize, needed: 16 });
    }
    let opts = VolterraOptions {
        h,
        extra_nodes: vec![x],
        ..Default::default()
    };
    let grid = u_volterra(model, x + 40.0 * h, &opts)?;
    let (r, sr) = one_sided_fd(&grid, x, 1, Side::Right, None)?;
    let (l, sl) = one_sided_fd(&grid, x, 1, Side::Left, None)?;
    Ok((r - l, sr.hypot(sl)))
}

/// `order`-th one-sided derivative at `x` by polynomial fits of degree `order + 2` on a
/// window that does not cross a grid breakpoint.
///
/// With `window = None` the width is ten local steps, shrunk to half the distance to the
/// nearest breakpoint. The standard error combines the fit's coefficient error (noise
/// floor at the grid's `err_est`) with the change from raising the degree by one.
pub fn one_sided_fd(grid: &DensityGrid, x: f64, order: usize, side: Side, window: Option<f64>) -> Result<(f64, f64)> {
    if order == 0 {
        return Ok((grid.value_at(x)?, 0.0));
    }
    let sign = side.sign();
    let beyond = |b: f64| sign * (b - x) > 0.0 && !same_point(b, x);
    let nearest_bp = grid
        .breakpoints
        .iter()
        .copied()
        .filter(|&b| beyond(b))
        .map(|b| (b - x).abs())
        .fold(f64::INFINITY, f64::min);
    let nearest_bp = if side == Side::Left { nearest_bp.min(x) } else { nearest_bp };
    let w = match window {
        Some(w) => {
            if let Some(b) = grid
                .breakpoints
                .iter()
                .copied()
                .find(|&b| beyond(b) && (b - x).abs() < w && !same_point((b - x).abs(), w))
            {
                return Err(Error::WindowContainsBreakpoint(b));
            }
            w
        }
        None => {
            let step = grid
                .nodes
                .iter()
                .copied()
                .filter(|&t| beyond(t))
                .map(|t| (t - x).abs())
                .fold(f64::INFINITY, f64::min);
            (10.0 * step).min(0.5 * nearest_bp)
        }
    };
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    let mut err_max = 0.0f64;
    for (i, &t) in grid.nodes.iter().enumerate() {
        let d = t - x;
        if (same_point(t, x) || (sign * d > 0.0 && d.abs() <= w * (1.0 + 1e-12))) && grid.u[i].is_finite() {
            ts.push(d);
            ys.push(grid.u[i]);
            err_max = err_max.max(grid.err_est[i]);
        }
    }
    let degree = order + 2;
    let needed = (degree + 2).max(6);
    if ts.len() < needed {
        return Err(Error::WindowTooSmall {
            found: ts.len(),
            needed,
        });
    }
    let fact = factorial(order);
    let (c, rms, var) = polyfit(&ts, &ys, degree);
    let est = c[order] * fact;
    let noise = rms.max(err_max);
    let se = var[order].sqrt() * noise * fact;
    let trunc = if ts.len() > degree + 2 {
        let (c2, _, _) = polyfit(&ts, &ys, degree + 1);
        (c2[order] * fact - est).abs()
    } else {
        0.0
    };
    Ok((est, se.hypot(trunc)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvJump {
    pub n: usize,
    pub b: f64,
    /// Signed jump of `d^{n−1}/dx^{n−1} Π̄^{*n}` at `b`, equal to `(−1)^n J_n(b)`.
    pub predicted: f64,
    /// `J_n(b) > 0`.
    pub magnitude: f64,
    pub measured: f64,
    pub stderr: f64,
}

/// Jump of the `(n−1)`-th derivative of `Π̄^{*n}` at `b ∈ G_n \ G_{n−1}`, predicted by the
/// recursion `J_n(b) = Σ_a m_a J_{n−1}(b − a)` and measured by exact polynomial fits on the
/// two adjacent breakpoint-free intervals.
pub fn conv_jump(model: &LevyModel, n: usize, b: f64) -> Result<ConvJump> {
    if !model.is_purely_atomic() || model.q() > 0.0 {
        return Err(Error::Precondition("conv_jump needs a purely atomic model with q = 0".into()));
    }
    if n < 2 {
        return Err(Error::Domain("conv_jump needs n >= 2".into()));
    }
    if min_k(model, b, n)? != Some(n) {
        return Err(Error::Classification(format!("b = {b} is not in G_{n} \\ G_{}", n - 1)));
    }
    let magnitude = ordered_weight(model, n, b);
    let predicted = if n.is_multiple_of(2) { magnitude } else { -magnitude };

    let a_max = model.atomic_part().max_location().unwrap_or(b);
    let set = atom_sums(model.atomic_part(), n, b + a_max)?;
    let mut pts: Vec<f64> = set.values();
    pts.push(0.0);
    let gap_left = pts.iter().filter(|&&p| p < b && !same_point(p, b)).map(|p| b - p).fold(f64::INFINITY, f64::min);
    let gap_right = pts.iter().filter(|&&p| p > b && !same_point(p, b)).map(|p| p - b).fold(f64::INFINITY, f64::min);
    let w = 0.5 * gap_left.min(gap_right).min(b);
    let engine = ConvEngine::new(model, b + w);
    let m = 2 * n + 4;
    let fit = |sign: f64| -> Result<(f64, f64)> {
        let ts: Vec<f64> = (1..=m).map(|i| sign * w * i as f64 / (m + 1) as f64).collect();
        let ys = ts.iter().map(|&t| engine.power(n, b + t, Side::Left)).collect::<Result<Vec<_>>>()?;
        let (c, rms, var) = polyfit(&ts, &ys, n - 1);
        let fact = factorial(n - 1);
        let scale = ys.iter().fold(0.0f64, |s, y| s.max(y.abs()));
        let noise = rms.max(1e-15 * scale.max(1e-300));
        Ok((c[n - 1] * fact, var[n - 1].sqrt() * noise * fact))
    };
    let (r, sr) = fit(1.0)?;
    let (l, sl) = fit(-1.0)?;
    Ok(ConvJump {
        n,
        b,
        predicted,
        magnitude,
        measured: r - l,
        stderr: sr.hypot(sl),
    })
}
