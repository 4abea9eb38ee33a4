//! Sampled potential densities with per-node provenance.

use crate::error::{Error, Result};
use crate::fmt_e;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Series,
    Volterra,
    Inversion,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Series => "series",
            Method::Volterra => "volterra",
            Method::Inversion => "inversion",
        }
    }
}

/// `u^(q)` and its one-sided derivatives on a strictly increasing grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityGrid {
    pub model_hash: String,
    pub q: f64,
    pub nodes: Vec<f64>,
    pub u: Vec<f64>,
    pub du_left: Vec<f64>,
    pub du_right: Vec<f64>,
    pub err_est: Vec<f64>,
    pub du_err: Vec<f64>,
    pub method: Vec<Method>,
    /// Points where the grid was forced to have a node (atoms and atom sums).
    pub breakpoints: Vec<f64>,
}

impl DensityGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn x_max(&self) -> f64 {
        *self.nodes.last().expect("non-empty grid")
    }

    /// Index of the node equal to `x` (relative tolerance 1e-12).
    pub fn node_index(&self, x: f64) -> Option<usize> {
        let i = self.nodes.partition_point(|&t| t < x);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .find(|&j| j < self.nodes.len() && (self.nodes[j] - x).abs() <= 1e-12 * x.abs().max(1.0))
    }

    /// Cell `[t_j, t_{j+1}]` containing `x`.
    fn cell(&self, x: f64) -> Result<usize> {
        if !(x >= 0.0) || x > self.x_max() * (1.0 + 1e-12) {
            return Err(Error::Domain(format!("x = {x} outside grid [0, {}]", self.x_max())));
        }
        let i = self.nodes.partition_point(|&t| t <= x);
        Ok(i.saturating_sub(1).min(self.nodes.len() - 2))
    }

    /// `u(x)` by cubic Hermite interpolation with one-sided derivatives (linear where a
    /// derivative is unbounded).
    pub fn value_at(&self, x: f64) -> Result<f64> {
        if let Some(i) = self.node_index(x) {
            return Ok(self.u[i]);
        }
        let j = self.cell(x)?;
        Ok(self.hermite(j, x))
    }

    fn hermite(&self, j: usize, x: f64) -> f64 {
        let (a, b) = (self.nodes[j], self.nodes[j + 1]);
        let h = b - a;
        let s = (x - a) / h;
        let (ua, ub) = (self.u[j], self.u[j + 1]);
        let (da, db) = (self.du_right[j], self.du_left[j + 1]);
        if !(da.is_finite() && db.is_finite()) {
            return ua + (ub - ua) * s;
        }
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * ua + h10 * h * da + h01 * ub + h11 * h * db
    }

    /// `∫_0^{x_max} w(x) u(x) dx` over the interpolant, 8-point Gauss–Legendre per cell.
    pub fn integrate_weighted(&self, w: impl Fn(f64) -> f64) -> f64 {
        let rule = crate::special::gauss_legendre(8);
        let mut acc = crate::special::KahanSum::default();
        for j in 0..self.nodes.len() - 1 {
            let (a, b) = (self.nodes[j], self.nodes[j + 1]);
            acc.add(crate::special::gl_integrate(&rule, a, b, |x| w(x) * self.hermite(j, x)));
        }
        acc.value()
    }

    /// CSV with columns `x,u,du_left,du_right,err_est,method`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,u,du_left,du_right,err_est,method\n");
        for i in 0..self.nodes.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                fmt_e(self.nodes[i]),
                fmt_e(self.u[i]),
                fmt_e(self.du_left[i]),
                fmt_e(self.du_right[i]),
                fmt_e(self.err_est[i]),
                self.method[i].as_str()
            ));
        }
        out
    }
}
