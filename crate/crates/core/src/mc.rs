//! Event-driven simulation of first passage and creeping.
//!
//! Between jumps the path is a line of slope `δ`, so creeping over `x` is decided by
//! comparing the next jump time with `(x − position)/δ`; no float equality on the path
//! is involved. Each path draws from its own ChaCha stream (indexed by path id) and the
//! killing time from a second, independent stream, so estimates do not depend on the
//! thread schedule and killed successes are a subset of unkilled ones.

use crate::error::{Error, Result};
use crate::fmt_e;
use crate::levy::{AcTail, LevyModel, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

const KILL_SALT: u64 = 0x6b69_6c6c_696e_6721;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathOutcome {
    /// First passage time over `x`.
    pub t_x: f64,
    pub overshoot: f64,
    pub crept: bool,
    pub jumps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CreepEstimate {
    pub x: f64,
    pub q: f64,
    pub n_paths: u64,
    pub successes: u64,
    pub p_hat: f64,
    /// `1.96 sqrt(p(1−p)/n)`.
    pub ci95: f64,
    pub eps: f64,
    pub seed: u64,
    /// `eps Π̄(eps)`, the order of the truncation bias (0 for finite activity).
    pub eps_bias: f64,
}

impl CreepEstimate {
    pub fn sigma(&self) -> f64 {
        self.ci95 / 1.96
    }

    pub const CSV_HEADER: &'static str = "x,q,p_hat,ci95,n_paths,eps,seed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            fmt_e(self.x),
            fmt_e(self.q),
            fmt_e(self.p_hat),
            fmt_e(self.ci95),
            self.n_paths,
            fmt_e(self.eps),
            self.seed
        )
    }
}

/// Jump law of the model restricted to sizes `>= eps`.
#[derive(Debug, Clone)]
pub struct JumpSampler {
    rate: f64,
    locs: Vec<f64>,
    // cumulative atom masses
    cum: Vec<f64>,
    atom_rate: f64,
    ac: AcTail,
    eps: f64,
}

impl JumpSampler {
    pub fn new(model: &LevyModel, eps: f64) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::Domain(format!("eps must be >= 0, got {eps}")));
        }
        let ac = *model.ac();
        if !ac.is_none() && eps == 0.0 {
            return Err(Error::Precondition(
                "infinite jump activity: a truncation eps > 0 is required".into(),
            ));
        }
        let mut locs = Vec::new();
        let mut cum = Vec::new();
        let mut acc = 0.0;
        for a in model.atomic_part().atoms().iter().filter(|a| a.x >= eps) {
            acc += a.mass;
            locs.push(a.x);
            cum.push(acc);
        }
        let ac_rate = if ac.is_none() { 0.0 } else { ac.tail(eps) };
        Ok(Self {
            rate: acc + ac_rate,
            locs,
            cum,
            atom_rate: acc,
            ac,
            eps,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random::<f64>() * self.rate;
        if u < self.atom_rate {
            let i = self.cum.partition_point(|&c| c <= u).min(self.locs.len() - 1);
            return self.locs[i];
        }
        let v: f64 = 1.0 - rng.random::<f64>();
        self.ac_inverse(v)
    }

    /// Solves `Π̄₂(y) = v Π̄₂(eps)` for `y >= eps`, `v ∈ (0, 1]`.
    fn ac_inverse(&self, v: f64) -> f64 {
        match self.ac {
            AcTail::None => self.eps,
            AcTail::Stable { alpha, .. } => self.eps * v.powf(-1.0 / alpha),
            AcTail::Tempered { alpha, b, .. } => {
                // α ln y + b y = α ln eps + b eps − ln v, increasing in y
                let target = alpha * self.eps.ln() + b * self.eps - v.ln();
                let g = |y: f64| alpha * y.ln() + b * y - target;
                let mut lo = self.eps;
                let mut hi = self.eps.max(1.0);
                while g(hi) < 0.0 {
                    hi *= 2.0;
                }
                let mut y = 0.5 * (lo + hi);
                for _ in 0..100 {
                    let gy = g(y);
                    if gy.abs() < 1e-15 {
                        break;
                    }
                    if gy > 0.0 {
                        hi = y;
                    } else {
                        lo = y;
                    }
                    let newton = y - gy / (alpha / y + b);
                    y = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
                    if hi - lo <= 1e-15 * hi {
                        break;
                    }
                }
                y
            }
        }
    }
}

/// Simulates one path up to first passage over `x`.
pub fn first_passage<R: Rng>(model: &LevyModel, sampler: &JumpSampler, x: f64, rng: &mut R) -> PathOutcome {
    let delta = model.drift();
    let rate = sampler.rate();
    let mut pos = 0.0;
    let mut t = 0.0;
    let mut jumps = 0;
    loop {
        let to_level = (x - pos) / delta;
        let wait = if rate > 0.0 {
            rng.sample::<f64, _>(Exp1) / rate
        } else {
            f64::INFINITY
        };
        if wait > to_level {
            return PathOutcome {
                t_x: t + to_level,
                overshoot: 0.0,
                crept: true,
                jumps,
            };
        }
        t += wait;
        pos += delta * wait;
        pos += sampler.sample(rng);
        jumps += 1;
        if pos > x {
            return PathOutcome {
                t_x: t,
                overshoot: pos - x,
                crept: false,
                jumps,
            };
        }
    }
}

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

fn estimate(x: f64, q: f64, n_paths: u64, successes: u64, eps: f64, seed: u64, eps_bias: f64) -> CreepEstimate {
    let p = successes as f64 / n_paths as f64;
    CreepEstimate {
        x,
        q,
        n_paths,
        successes,
        p_hat: p,
        ci95: 1.96 * (p * (1.0 - p) / n_paths as f64).sqrt(),
        eps,
        seed,
        eps_bias,
    }
}

fn check(x: f64, n_paths: u64) -> Result<()> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::Domain(format!("x must be positive, got {x}")));
    }
    if n_paths == 0 {
        return Err(Error::Domain("n_paths must be at least 1".into()));
    }
    Ok(())
}

fn eps_bias(model: &LevyModel, eps: f64) -> f64 {
    if model.ac().is_none() {
        0.0
    } else {
        eps * model.tail(eps, Side::Left).as_f64()
    }
}

/// Frequency of creeping over `x`; estimates `δ u(x)`.
pub fn creep_prob(model: &LevyModel, x: f64, n_paths: u64, seed: u64, eps: f64) -> Result<CreepEstimate> {
    check(x, n_paths)?;
    let sampler = JumpSampler::new(model, eps)?;
    let successes = crate::run_in_pool(|| {
        (0..n_paths)
            .into_par_iter()
            .map(|i| first_passage(model, &sampler, x, &mut path_rng(seed, i)).crept as u64)
            .sum::<u64>()
    });
    Ok(estimate(x, 0.0, n_paths, successes, eps, seed, eps_bias(model, eps)))
}

/// Frequency of creeping over `x` before an independent exponential time of rate `q`;
/// estimates `δ u^(q)(x)`. The rate of `model` itself is ignored in favor of `q`.
pub fn creep_prob_killed(model: &LevyModel, q: f64, x: f64, n_paths: u64, seed: u64, eps: f64) -> Result<CreepEstimate> {
    check(x, n_paths)?;
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::Domain(format!("q must be positive, got {q}")));
    }
    let sampler = JumpSampler::new(model, eps)?;
    let successes = crate::run_in_pool(|| {
        (0..n_paths)
            .into_par_iter()
            .map(|i| {
                let out = first_passage(model, &sampler, x, &mut path_rng(seed, i));
                let e: f64 = path_rng(seed ^ KILL_SALT, i).sample(Exp1);
                (out.crept && out.t_x <= e / q) as u64
            })
            .sum::<u64>()
    });
    Ok(estimate(x, q, n_paths, successes, eps, seed, eps_bias(model, eps)))
}
