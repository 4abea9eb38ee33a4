//! Product-integration solver for the renewal equation
//! `δ u(x) = 1 - ∫_0^x u(x - y) f(y) dy`, `f = Π̄ + q`.
//!
//! `u` is approximated by a continuous piecewise-linear function whose nodes include
//! every atom and small atom sums, so the kink structure of `u` is resolved exactly.
//! Kernel cell integrals are computed in local coordinates to avoid cancellation, and
//! the solution is extrapolated from two nested meshes.

use crate::conv::atom_sums;
use crate::density::{DensityGrid, Method};
use crate::error::{Error, Result};
use crate::levy::{AcTail, LevyModel, Side};
use crate::special::gauss_legendre;

#[derive(Debug, Clone, PartialEq)]
pub struct VolterraOptions {
    /// Base mesh step.
    pub h: f64,
    /// Target absolute error on `u`.
    pub tol: f64,
    pub max_refinements: usize,
    /// Atom sums with at most this many jumps become mesh nodes.
    pub k_align: usize,
    /// Points that must be mesh nodes.
    pub extra_nodes: Vec<f64>,
    /// Width of the graded region after a singular point when an AC part is present.
    pub grade_width: f64,
}

impl Default for VolterraOptions {
    fn default() -> Self {
        Self {
            h: 0.01,
            tol: 1e-6,
            max_refinements: 4,
            k_align: 3,
            extra_nodes: Vec::new(),
            grade_width: 0.25,
        }
    }
}

// Alignment stops adding higher atom sums once this many nodes are forced.
const MAX_ALIGNED: usize = 5000;

#[derive(Debug, Clone, Copy)]
struct Anchor {
    x: f64,
    grade: Option<f64>,
}

struct Mesh {
    t: Vec<f64>,
    lat: Vec<Option<i64>>,
    step: f64,
}

fn lattice_index(x: f64, step: f64) -> Option<i64> {
    let r = (x / step).round();
    ((x / step - r).abs() <= 1e-9).then_some(r as i64)
}

fn build_mesh(anchors: &[Anchor], h0: f64, level: usize, g0: f64) -> Mesh {
    let scale = (1u64 << level) as f64;
    let step = h0 / scale;
    let mut t = vec![anchors[0].x];
    let mut lat = vec![lattice_index(anchors[0].x, step)];
    let push = |t: &mut Vec<f64>, lat: &mut Vec<Option<i64>>, x: f64, l: Option<i64>| {
        t.push(x);
        lat.push(l);
    };
    for w in anchors.windows(2) {
        let (a, b) = (w[0].x, w[1].x);
        let mut c = a;
        let mut c_lat = lattice_index(a, step);
        if let Some(p) = w[0].grade {
            let g = (b - a).min(g0);
            let m = ((p * g / h0).ceil().max(1.0) * scale) as usize;
            for j in 1..m {
                let x = a + g * (j as f64 / m as f64).powf(p);
                push(&mut t, &mut lat, x, None);
            }
            c = a + g;
            c_lat = lattice_index(c, step);
            if c < b {
                push(&mut t, &mut lat, c, c_lat);
            }
        }
        let mut k = match c_lat {
            Some(k) => k + 1,
            None => (c / step).floor() as i64 + 1,
        };
        loop {
            let x = k as f64 * h0 / scale;
            if x >= b - 1e-6 * step {
                break;
            }
            if x > c + 1e-6 * step {
                push(&mut t, &mut lat, x, Some(k));
            }
            k += 1;
        }
        push(&mut t, &mut lat, b, lattice_index(b, step));
    }
    Mesh { t, lat, step }
}

/// Cell integrals of the kernel in local coordinates.
struct CellKernel {
    q: f64,
    locs: Vec<f64>,
    masses: Vec<f64>,
    suffix: Vec<f64>,
    ac: AcTail,
    gl4: (Vec<f64>, Vec<f64>),
    gl8: (Vec<f64>, Vec<f64>),
}

impl CellKernel {
    fn new(model: &LevyModel) -> Self {
        let atoms = model.atomic_part().atoms();
        let locs: Vec<f64> = atoms.iter().map(|a| a.x).collect();
        let masses: Vec<f64> = atoms.iter().map(|a| a.mass).collect();
        let mut suffix = vec![0.0; locs.len() + 1];
        for i in (0..locs.len()).rev() {
            suffix[i] = suffix[i + 1] + masses[i];
        }
        Self {
            q: model.q(),
            locs,
            masses,
            suffix,
            ac: *model.ac(),
            gl4: gauss_legendre(4),
            gl8: gauss_legendre(8),
        }
    }

    /// `(∫_lo^hi f(y) dy, ∫_lo^hi (y - lo) f(y) dy)`.
    fn moments(&self, lo: f64, hi: f64) -> (f64, f64) {
        let w = hi - lo;
        let mut a = self.q * w;
        let mut b = 0.5 * self.q * w * w;
        if !self.locs.is_empty() {
            let mut i = self.locs.partition_point(|&x| x <= lo);
            while i < self.locs.len() && self.locs[i] < hi {
                let d = self.locs[i] - lo;
                a += self.masses[i] * d;
                b += 0.5 * self.masses[i] * d * d;
                i += 1;
            }
            let s = self.suffix[i];
            a += s * w;
            b += 0.5 * s * w * w;
        }
        if !self.ac.is_none() {
            if lo < 2.0 * w {
                let ai = self.ac.tail_integral(hi) - self.ac.tail_integral(lo);
                let m1 = self.ac.tail_first_moment(hi) - self.ac.tail_first_moment(lo);
                a += ai;
                b += m1 - lo * ai;
            } else {
                let rule = if lo < 8.0 * w { &self.gl8 } else { &self.gl4 };
                let half = 0.5 * w;
                for (s, wt) in rule.0.iter().zip(&rule.1) {
                    let d = half * (1.0 + s);
                    let v = wt * half * self.ac.tail(lo + d);
                    a += v;
                    b += v * d;
                }
            }
        }
        (a, b)
    }
}

struct Solution {
    u: Vec<f64>,
    du_left: Vec<f64>,
    du_right: Vec<f64>,
}

fn solve(model: &LevyModel, kernel: &CellKernel, mesh: &Mesh) -> Solution {
    let t = &mesh.t;
    let n = t.len();
    let delta = model.drift();
    let hl = mesh.step;
    let widths: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let cell_lat: Vec<Option<i64>> = (0..n - 1)
        .map(|j| match (mesh.lat[j], mesh.lat[j + 1]) {
            (Some(a), Some(b)) if b == a + 1 => Some(a),
            _ => None,
        })
        .collect();
    let max_lat = mesh.lat.iter().flatten().copied().max().unwrap_or(0).max(0) as usize;
    let table: Vec<(f64, f64)> = (0..=max_lat + 1)
        .map(|d| if d == 0 { (0.0, 0.0) } else { kernel.moments((d - 1) as f64 * hl, d as f64 * hl) })
        .collect();

    let mut u = vec![0.0; n];
    let mut slope = vec![0.0; n.saturating_sub(1)];
    let mut du_left = vec![f64::NAN; n];
    let mut du_right = vec![f64::NAN; n];
    u[0] = 1.0 / delta;
    du_right[0] = -model.kernel(f64::MIN_POSITIVE, Side::Right) / (delta * delta);
    if !model.ac().is_none() {
        du_right[0] = f64::NEG_INFINITY;
    }
    for i in 1..n {
        let x = t[i];
        let mut acc = 0.0;
        let mut dacc = 0.0;
        for j in 0..i - 1 {
            let (a, b) = match (mesh.lat[i], cell_lat[j]) {
                (Some(ki), Some(kj)) => table[(ki - kj) as usize],
                _ => kernel.moments(x - t[j + 1], x - t[j]),
            };
            let w0 = b / widths[j];
            acc += w0 * u[j] + (a - w0) * u[j + 1];
            dacc += slope[j] * a;
        }
        let hj = widths[i - 1];
        let (a, b) = kernel.moments(0.0, hj);
        let w0 = b / hj;
        u[i] = (1.0 - acc - w0 * u[i - 1]) / (delta + a - w0);
        slope[i - 1] = (u[i] - u[i - 1]) / hj;
        dacc += slope[i - 1] * a;
        du_left[i] = (-model.kernel(x, Side::Left) / delta - dacc) / delta;
        du_right[i] = (-model.kernel(x, Side::Right) / delta - dacc) / delta;
    }
    Solution { u, du_left, du_right }
}

/// Breakpoints forced into the mesh: atom sums of at most `k_align` jumps.
pub fn aligned_breakpoints(model: &LevyModel, x_max: f64, k_align: usize) -> Result<Vec<f64>> {
    if model.atomic_part().is_empty() || k_align == 0 {
        return Ok(Vec::new());
    }
    let mut best = Vec::new();
    for k in 1..=k_align {
        let set = atom_sums(model.atomic_part(), k, x_max)?;
        let vals = set.values();
        if k > 1 && vals.len() > MAX_ALIGNED {
            break;
        }
        best = vals;
    }
    Ok(best)
}

fn anchors(model: &LevyModel, x_max: f64, opts: &VolterraOptions, breakpoints: &[f64]) -> Vec<Anchor> {
    let ac_grade = model.ac().alpha().map(|alpha| (2.0 / (1.0 - alpha)).clamp(2.0, 8.0));
    let has_ac = ac_grade.is_some();
    let atoms: Vec<f64> = model.atomic_part().atoms().iter().map(|a| a.x).collect();
    let mut list = vec![Anchor { x: 0.0, grade: ac_grade }];
    for &x in breakpoints.iter().chain(&opts.extra_nodes) {
        if x > 0.0 && x < x_max {
            let is_atom = atoms.iter().any(|&a| (a - x).abs() <= 1e-12 * a.max(1.0));
            list.push(Anchor {
                x,
                grade: (has_ac && is_atom).then_some(2.0),
            });
        }
    }
    list.push(Anchor { x: x_max, grade: None });
    list.sort_by(|a, b| a.x.total_cmp(&b.x));
    let mut out: Vec<Anchor> = Vec::with_capacity(list.len());
    for a in list {
        match out.last_mut() {
            Some(last) if (a.x - last.x).abs() <= 1e-12 * a.x.max(1.0) => {
                last.grade = last.grade.or(a.grade);
            }
            _ => out.push(a),
        }
    }
    out
}

/// Solves for `u^(q)` on `[0, x_max]` with step halving and Richardson extrapolation.
pub fn u_volterra(model: &LevyModel, x_max: f64, opts: &VolterraOptions) -> Result<DensityGrid> {
    if !(x_max > 0.0 && x_max.is_finite()) {
        return Err(Error::Domain(format!("x_max must be positive and finite, got {x_max}")));
    }
    if !(opts.h > 0.0 && opts.tol > 0.0) {
        return Err(Error::Domain("h and tol must be positive".into()));
    }
    let breakpoints = aligned_breakpoints(model, x_max, opts.k_align)?;
    let anchors = anchors(model, x_max, opts, &breakpoints);
    let kernel = CellKernel::new(model);

    let mut coarse_mesh = build_mesh(&anchors, opts.h, 0, opts.grade_width);
    let mut coarse = solve(model, &kernel, &coarse_mesh);
    let mut level = 0;
    loop {
        level += 1;
        let fine_mesh = build_mesh(&anchors, opts.h, level, opts.grade_width);
        let fine = solve(model, &kernel, &fine_mesh);
        let map = embed(&coarse_mesh.t, &fine_mesh.t);
        let grid = extrapolate(model, &coarse_mesh, &coarse, &fine, &map, &breakpoints);
        let err = grid.err_est.iter().fold(0.0f64, |m, &e| m.max(e));
        if err <= opts.tol {
            return Ok(grid);
        }
        if level > opts.max_refinements {
            if err <= 10.0 * opts.tol {
                return Ok(grid);
            }
            return Err(Error::ConvergenceFailure {
                achieved: err,
                tol: opts.tol,
            });
        }
        coarse_mesh = fine_mesh;
        coarse = fine;
    }
}

/// Position of every coarse node in the (nested) fine mesh.
fn embed(coarse: &[f64], fine: &[f64]) -> Vec<usize> {
    let mut out = Vec::with_capacity(coarse.len());
    let mut j = 0;
    for &x in coarse {
        while j + 1 < fine.len() && fine[j] < x && (fine[j] - x).abs() > 1e-12 * x.max(1.0) {
            j += 1;
        }
        out.push(j);
    }
    out
}

fn extrapolate(
    model: &LevyModel,
    mesh: &Mesh,
    coarse: &Solution,
    fine: &Solution,
    map: &[usize],
    breakpoints: &[f64],
) -> DensityGrid {
    let n = mesh.t.len();
    let rich = |c: f64, f: f64| {
        if c.is_finite() && f.is_finite() {
            ((4.0 * f - c) / 3.0, (f - c).abs() / 3.0)
        } else {
            (f, 0.0)
        }
    };
    let mut grid = DensityGrid {
        model_hash: model.hash(),
        q: model.q(),
        nodes: mesh.t.clone(),
        u: Vec::with_capacity(n),
        du_left: Vec::with_capacity(n),
        du_right: Vec::with_capacity(n),
        err_est: Vec::with_capacity(n),
        du_err: Vec::with_capacity(n),
        method: vec![Method::Volterra; n],
        breakpoints: breakpoints.to_vec(),
    };
    for (i, &k) in map.iter().enumerate() {
        let (u, e) = rich(coarse.u[i], fine.u[k]);
        let (dl, el) = rich(coarse.du_left[i], fine.du_left[k]);
        let (dr, er) = rich(coarse.du_right[i], fine.du_right[k]);
        grid.u.push(u);
        grid.err_est.push(e);
        grid.du_left.push(dl);
        grid.du_right.push(dr);
        grid.du_err.push(el.max(er));
    }
    grid
}
