//! Iterated convolutions of the renewal kernel `f = Π̄ + q` and the atom-sum sets `G_k`.
//!
//! The kernel splits as `f = A + B`, where `A = μ * H` collects the killing rate and the
//! atoms (`μ = (q + M)δ₀ − Σ m_a δ_a`, `H` the unit step) and `B` is the AC tail
//! `C y^{-α} e^{-b y}`. Powers of `B` stay in the same family, so
//! `f^{*n} = Σ_k C(n,k) μ^{*(n−k)} * H^{*(n−k)} * B^{*k}` is evaluated term by term in
//! closed form. [`ConvEngine`] does that; [`convolve_quadrature`] is a breakpoint-split
//! adaptive quadrature used as an independent check.

use crate::error::{Error, Result};
use crate::levy::{rational_to_f64, AcTail, AtomicPart, LevyModel, Rational, Side};
use crate::special::{binomial, factorial, gauss_legendre, gl_integrate, kummer_m_scaled, ln_gamma};
use num_traits::CheckedAdd;
use parking_lot::RwLock;
use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

pub const DEFAULT_BUDGET: usize = 10_000_000;

/// Relative tolerance under which two float locations are the same point.
pub const LOCATION_TOL: f64 = 1e-12;

pub(crate) fn same_point(a: f64, b: f64) -> bool {
    (a - b).abs() <= LOCATION_TOL * a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomSum {
    pub value: f64,
    pub exact: Option<Rational>,
    pub min_jumps: usize,
    /// Number of multisets of `min_jumps` atoms summing to `value`.
    pub representations: u64,
}

/// Points reachable by at most `k` atomic jumps, up to a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomSumSet {
    pub k: usize,
    pub x_max: f64,
    pub exact: bool,
    pub elements: Vec<AtomSum>,
}

impl AtomSumSet {
    /// Minimal number of jumps reaching `x`, or `None` if `x ∉ G_k`.
    pub fn min_jumps(&self, x: f64) -> Option<usize> {
        let i = self.elements.partition_point(|e| e.value < x && !same_point(e.value, x));
        self.elements
            .get(i)
            .filter(|e| same_point(e.value, x))
            .map(|e| e.min_jumps)
    }

    pub fn min_jumps_exact(&self, x: Rational) -> Option<usize> {
        if !self.exact {
            return self.min_jumps(rational_to_f64(x));
        }
        self.elements
            .iter()
            .find(|e| e.exact == Some(x))
            .map(|e| e.min_jumps)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.min_jumps(x).is_some()
    }

    /// Values of `G_j` for `j <= self.k`.
    pub fn values_up_to(&self, j: usize) -> Vec<f64> {
        self.elements
            .iter()
            .filter(|e| e.min_jumps <= j)
            .map(|e| e.value)
            .collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.values_up_to(self.k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FKey(f64);

impl Eq for FKey {}

impl PartialOrd for FKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Sums of at most `k` atom locations in `(0, x_max]`.
pub fn atom_sums(atomic: &AtomicPart, k: usize, x_max: f64) -> Result<AtomSumSet> {
    atom_sums_with_budget(atomic, k, x_max, DEFAULT_BUDGET)
}

pub fn atom_sums_with_budget(atomic: &AtomicPart, k: usize, x_max: f64, budget: usize) -> Result<AtomSumSet> {
    if k == 0 {
        return Err(Error::Domain("atom_sums needs k >= 1".into()));
    }
    if !(x_max > 0.0) {
        return Err(Error::Domain(format!("atom_sums needs x_max > 0, got {x_max}")));
    }
    if atomic.all_exact() {
        let locs: Vec<Rational> = atomic.atoms().iter().map(|a| a.exact.unwrap()).collect();
        if let Some(set) = exact_sums(&locs, k, x_max, budget)? {
            return Ok(set);
        }
    }
    let locs: Vec<f64> = atomic.atoms().iter().map(|a| a.x).collect();
    float_sums(&locs, k, x_max, budget)
}

// Unbounded knapsack over atoms; counts[s] = number of multisets of size s.
// Returns Ok(None) when rational arithmetic overflows.
fn exact_sums(locs: &[Rational], k: usize, x_max: f64, budget: usize) -> Result<Option<AtomSumSet>> {
    let mut map: BTreeMap<Rational, Vec<u64>> = BTreeMap::new();
    let mut start = vec![0u64; k + 1];
    start[0] = 1;
    map.insert(Rational::from_integer(0), start);
    let mut partial = 0usize;
    let x_lim = x_max * (1.0 + LOCATION_TOL);
    for &a in locs {
        let mut cur = map.keys().next().copied();
        while let Some(key) = cur {
            let counts = map[&key].clone();
            if counts[..k].iter().any(|&c| c > 0) {
                let Some(next) = key.checked_add(&a) else { return Ok(None) };
                if rational_to_f64(next) <= x_lim {
                    partial += 1;
                    if partial > budget {
                        return Err(Error::BudgetExceeded { k, budget });
                    }
                    let slot = map.entry(next).or_insert_with(|| vec![0; k + 1]);
                    for s in 0..k {
                        slot[s + 1] = slot[s + 1].saturating_add(counts[s]);
                    }
                }
            }
            cur = map.range((std::ops::Bound::Excluded(key), std::ops::Bound::Unbounded)).next().map(|(k, _)| *k);
        }
    }
    let elements = map
        .into_iter()
        .filter(|(key, _)| *key.numer() != 0)
        .filter_map(|(key, counts)| {
            let s = (1..=k).find(|&s| counts[s] > 0)?;
            Some(AtomSum {
                value: rational_to_f64(key),
                exact: Some(key),
                min_jumps: s,
                representations: counts[s],
            })
        })
        .collect();
    Ok(Some(AtomSumSet { k, x_max, exact: true, elements }))
}

fn float_sums(locs: &[f64], k: usize, x_max: f64, budget: usize) -> Result<AtomSumSet> {
    let mut map: BTreeMap<FKey, Vec<u64>> = BTreeMap::new();
    let mut start = vec![0u64; k + 1];
    start[0] = 1;
    map.insert(FKey(0.0), start);
    let mut partial = 0usize;
    for &a in locs {
        let mut cur = map.keys().next().copied();
        while let Some(key) = cur {
            let counts = map[&key].clone();
            let v = key.0 + a;
            if counts[..k].iter().any(|&c| c > 0) && (v <= x_max || same_point(v, x_max)) {
                partial += 1;
                if partial > budget {
                    return Err(Error::BudgetExceeded { k, budget });
                }
                let tol = LOCATION_TOL * v.max(1.0);
                let existing = map.range(FKey(v - tol)..=FKey(v + tol)).next().map(|(k, _)| *k);
                let slot_key = existing.unwrap_or(FKey(v));
                let slot = map.entry(slot_key).or_insert_with(|| vec![0; k + 1]);
                for s in 0..k {
                    slot[s + 1] = slot[s + 1].saturating_add(counts[s]);
                }
            }
            cur = map.range((std::ops::Bound::Excluded(key), std::ops::Bound::Unbounded)).next().map(|(k, _)| *k);
        }
    }
    let elements = map
        .into_iter()
        .filter(|(key, _)| key.0 > 0.0)
        .filter_map(|(key, counts)| {
            let s = (1..=k).find(|&s| counts[s] > 0)?;
            Some(AtomSum {
                value: key.0,
                exact: None,
                min_jumps: s,
                representations: counts[s],
            })
        })
        .collect();
    Ok(AtomSumSet { k, x_max, exact: false, elements })
}

/// Finite signed measure `Σ c_s δ_s` on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    pub shifts: Vec<f64>,
    pub exact: Vec<Option<Rational>>,
    pub coefs: Vec<f64>,
}

impl DiscreteMeasure {
    fn unit() -> Self {
        Self {
            shifts: vec![0.0],
            exact: vec![Some(Rational::from_integer(0))],
            coefs: vec![1.0],
        }
    }

    /// `μ = (q + M)δ₀ − Σ m_a δ_a`.
    fn kernel_measure(model: &LevyModel) -> Self {
        let atomic = model.atomic_part();
        let mut m = Self {
            shifts: vec![0.0],
            exact: vec![Some(Rational::from_integer(0))],
            coefs: vec![model.q() + atomic.total_mass()],
        };
        for a in atomic.atoms() {
            m.shifts.push(a.x);
            m.exact.push(a.exact);
            m.coefs.push(-a.mass);
        }
        m
    }

    fn convolve(&self, other: &Self, horizon: f64, budget: usize) -> Result<Self> {
        let mut raw: Vec<(f64, Option<Rational>, f64)> = Vec::with_capacity(self.shifts.len() * other.shifts.len());
        for i in 0..self.shifts.len() {
            for j in 0..other.shifts.len() {
                let s = self.shifts[i] + other.shifts[j];
                if s > horizon && !same_point(s, horizon) {
                    continue;
                }
                let exact = match (self.exact[i], other.exact[j]) {
                    (Some(p), Some(q)) => p.checked_add(&q),
                    _ => None,
                };
                raw.push((s, exact, self.coefs[i] * other.coefs[j]));
                if raw.len() > budget {
                    return Err(Error::BudgetExceeded { k: 0, budget });
                }
            }
        }
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out = Self {
            shifts: Vec::new(),
            exact: Vec::new(),
            coefs: Vec::new(),
        };
        for (s, ex, c) in raw {
            if let Some(last) = out.shifts.len().checked_sub(1) {
                let same = match (out.exact[last], ex) {
                    (Some(p), Some(q)) => p == q,
                    _ => same_point(out.shifts[last], s),
                };
                if same {
                    out.coefs[last] += c;
                    if ex.is_none() {
                        out.exact[last] = None;
                    }
                    continue;
                }
            }
            out.shifts.push(s);
            out.exact.push(ex);
            out.coefs.push(c);
        }
        Ok(out)
    }
}

/// Power-law parameters of the AC tail: `B^{*k}(z) = K_k e^{-b z} z^{γ_k − 1}`.
#[derive(Debug, Clone, Copy)]
struct AcPowers {
    ln_c_gamma: f64, // ln(C Γ(1−α))
    one_minus_alpha: f64,
    b: f64,
}

impl AcPowers {
    fn new(ac: &AcTail) -> Option<Self> {
        let (c, alpha, b) = ac.params()?;
        Some(Self {
            ln_c_gamma: c.ln() + ln_gamma(1.0 - alpha),
            one_minus_alpha: 1.0 - alpha,
            b,
        })
    }

    fn gamma_k(&self, k: usize) -> f64 {
        k as f64 * self.one_minus_alpha
    }

    fn ln_k(&self, k: usize) -> f64 {
        k as f64 * self.ln_c_gamma - ln_gamma(self.gamma_k(k))
    }

    /// `(H^{*p} * B^{*k})(z)` for `p >= 1`, `B^{*k}(z)` for `p = 0`, its `(−p)`-th derivative for `p < 0`; `z > 0`.
    fn phi(&self, k: usize, p: i32, z: f64) -> f64 {
        let g = self.gamma_k(k);
        let lk = self.ln_k(k);
        if p >= 1 {
            let pf = p as f64;
            let scale = (lk + ln_gamma(g) - ln_gamma(g + pf) + (g + pf - 1.0) * z.ln()).exp();
            if self.b == 0.0 {
                scale
            } else {
                scale * kummer_m_scaled(pf, g + pf, self.b * z)
            }
        } else {
            let d = (-p) as usize;
            let mut acc = 0.0;
            let mut falling = 1.0; // (γ−1)(γ−2)…(γ−i)
            for i in 0..=d {
                if i > 0 {
                    falling *= g - i as f64;
                }
                let bpow = if d == i { 1.0 } else { (-self.b).powi((d - i) as i32) };
                if bpow == 0.0 || falling == 0.0 {
                    continue;
                }
                acc += binomial(d, i) * bpow * falling * ((g - 1.0 - i as f64) * z.ln() - self.b * z + lk).exp();
            }
            acc
        }
    }

    /// One-sided limit at `z = 0+` of [`AcPowers::phi`]; may be infinite.
    /// Returns the finite part and the most singular `(exponent, coefficient)` if any.
    fn phi_at_zero(&self, k: usize, p: i32) -> (f64, Option<(f64, f64)>) {
        if p >= 1 {
            return (0.0, None);
        }
        let g = self.gamma_k(k);
        let kk = self.ln_k(k).exp();
        let d = (-p) as usize;
        let mut finite = 0.0;
        let mut worst: Option<(f64, f64)> = None;
        let mut falling = 1.0;
        for i in 0..=d {
            if i > 0 {
                falling *= g - i as f64;
            }
            let e = g - 1.0 - i as f64;
            let bpow = if d == i { 1.0 } else { (-self.b).powi((d - i) as i32) };
            let coef = kk * binomial(d, i) * bpow * falling;
            if coef == 0.0 || e > 1e-14 {
                continue;
            }
            if e.abs() <= 1e-14 {
                finite += coef;
            } else {
                match worst {
                    Some((we, _)) if we <= e => {}
                    _ => worst = Some((e, coef)),
                }
            }
        }
        (finite, worst)
    }
}

/// Accumulates a sum that may carry infinite one-sided limits.
#[derive(Default)]
struct SingularSum {
    finite: crate::special::KahanSum,
    // exponent → coefficient of the divergent part
    singular: Vec<(f64, f64)>,
}

impl SingularSum {
    fn add(&mut self, v: f64) {
        self.finite.add(v);
    }

    fn add_singular(&mut self, exponent: f64, coef: f64) {
        for entry in self.singular.iter_mut() {
            if (entry.0 - exponent).abs() < 1e-12 {
                entry.1 += coef;
                return;
            }
        }
        self.singular.push((exponent, coef));
    }

    fn value(&self) -> f64 {
        let worst = self
            .singular
            .iter()
            .filter(|(_, c)| c.abs() > 1e-300)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        match worst {
            Some(&(_, c)) => c.signum() * f64::INFINITY,
            None => self.finite.value(),
        }
    }
}

/// Exact evaluator of `(H^{*r} * f^{*n})(x±)` for the kernel `f = Π̄ + q`.
///
/// `r = 1` is the running integral `𝟏 * f^{*n}`, `r = 0` the value, `r = −d` the
/// `d`-th one-sided derivative. Discrete measures `μ^{*j}` are memoized.
#[derive(Debug)]
pub struct ConvEngine {
    model: LevyModel,
    horizon: f64,
    budget: usize,
    ac: Option<AcPowers>,
    mu: DiscreteMeasure,
    cache: RwLock<Vec<Arc<DiscreteMeasure>>>,
    // Σ m_a a, the integral of the atomic kernel when q = 0
    atom_moment: f64,
}

impl ConvEngine {
    pub fn new(model: &LevyModel, horizon: f64) -> Self {
        let atom_moment = model.atomic_part().atoms().iter().map(|a| a.mass * a.x).sum();
        Self {
            model: model.clone(),
            horizon,
            budget: DEFAULT_BUDGET,
            ac: AcPowers::new(model.ac()),
            mu: DiscreteMeasure::kernel_measure(model),
            cache: RwLock::new(vec![Arc::new(DiscreteMeasure::unit())]),
            atom_moment,
        }
    }

    pub fn model(&self) -> &LevyModel {
        &self.model
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    fn mu_power(&self, j: usize) -> Result<Arc<DiscreteMeasure>> {
        if let Some(m) = self.cache.read().get(j) {
            return Ok(m.clone());
        }
        let mut cache = self.cache.write();
        while cache.len() <= j {
            let next = cache.last().unwrap().convolve(&self.mu, self.horizon, self.budget)?;
            cache.push(Arc::new(next));
        }
        Ok(cache[j].clone())
    }

    /// True when `A` has compact support `[0, a_max]` (no killing).
    fn atoms_compact(&self) -> Option<f64> {
        if self.model.q() == 0.0 {
            self.model.atomic_part().max_location()
        } else {
            None
        }
    }

    /// `(H^{*r} * f^{*n})(x±)`.
    pub fn eval(&self, n: usize, r: i32, x: f64, side: Side) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::Domain(format!("convolution evaluated at x = {x} <= 0")));
        }
        if x > self.horizon && !same_point(x, self.horizon) {
            return Err(Error::Domain(format!("x = {x} beyond engine horizon {}", self.horizon)));
        }
        if r > 1 {
            return Err(Error::Domain("only r <= 1 is supported".into()));
        }
        if n == 0 {
            return Ok(if r == 1 { 1.0 } else { 0.0 });
        }
        let has_atoms = !self.model.atomic_part().is_empty() || self.model.q() > 0.0;
        if !has_atoms && self.ac.is_none() {
            return Ok(0.0);
        }
        let mut sum = SingularSum::default();
        let k_range = match self.ac {
            Some(_) => 0..=n,
            None => 0..=0,
        };
        for k in k_range {
            let j = n - k;
            if j > 0 && !has_atoms {
                continue;
            }
            let weight = binomial(n, k);
            let mut term = SingularSum::default();
            if j == 0 {
                let ac = self.ac.as_ref().unwrap();
                term.add(ac.phi(k, r, x));
            } else if k == 0 {
                self.atomic_term(j, r, x, side, &mut term)?;
            } else {
                self.mixed_term(j, k, r, x, side, &mut term)?;
            }
            sum.add(weight * term.finite.value());
            for &(e, c) in &term.singular {
                sum.add_singular(e, weight * c);
            }
        }
        Ok(sum.value())
    }

    /// `H^{*r} * A^{*j}` at `x±`.
    fn atomic_term(&self, j: usize, r: i32, x: f64, side: Side, out: &mut SingularSum) -> Result<()> {
        let p = j as i32 + r;
        if p <= 0 {
            // derivatives of a piecewise polynomial of degree j − 1 beyond its order vanish one-sidedly
            return Ok(());
        }
        if let Some(a_max) = self.atoms_compact() {
            let support = j as f64 * a_max;
            if x > support && !same_point(x, support) {
                if r == 1 {
                    out.add(self.atom_moment.powi(j as i32));
                }
                return Ok(());
            }
        }
        let mu = self.mu_power(j)?;
        let pm1 = (p - 1) as usize;
        let fact = factorial(pm1);
        for (i, &s) in mu.shifts.iter().enumerate() {
            if s > x && !same_point(s, x) {
                break;
            }
            let coincide = same_point(s, x);
            let v = if pm1 == 0 {
                if coincide && side == Side::Left {
                    0.0
                } else {
                    1.0
                }
            } else if coincide {
                0.0
            } else {
                (x - s).powi(pm1 as i32) / fact
            };
            out.add(mu.coefs[i] * v);
        }
        Ok(())
    }

    /// `H^{*r} * A^{*j} * B^{*k}` at `x±`, `j, k >= 1`.
    fn mixed_term(&self, j: usize, k: usize, r: i32, x: f64, side: Side, out: &mut SingularSum) -> Result<()> {
        let ac = self.ac.as_ref().unwrap();
        if let Some(a_max) = self.atoms_compact() {
            let support = j as f64 * a_max;
            let gap = x - support;
            if gap > 0.05 * support {
                // the shifted closed forms nearly cancel here; integrate A^{*j} against the smooth factor
                out.add(self.mixed_term_far(j, k, r, x, support)?);
                return Ok(());
            }
        }
        let mu = self.mu_power(j)?;
        let p = j as i32 + r;
        for (i, &s) in mu.shifts.iter().enumerate() {
            if s > x && !same_point(s, x) {
                break;
            }
            if same_point(s, x) {
                if side == Side::Right {
                    let (fin, sing) = ac.phi_at_zero(k, p);
                    out.add(mu.coefs[i] * fin);
                    if let Some((e, c)) = sing {
                        out.add_singular(e, mu.coefs[i] * c);
                    }
                }
                continue;
            }
            out.add(mu.coefs[i] * ac.phi(k, p, x - s));
        }
        Ok(())
    }

    fn mixed_term_far(&self, j: usize, k: usize, r: i32, x: f64, support: f64) -> Result<f64> {
        let ac = self.ac.as_ref().unwrap();
        let mu = self.mu_power(j)?;
        let rule = gl20();
        let fact = factorial(j - 1);
        let a_j = |t: f64| -> f64 {
            let mut acc = 0.0;
            for (i, &s) in mu.shifts.iter().enumerate() {
                if s >= t {
                    break;
                }
                acc += mu.coefs[i] * (t - s).powi(j as i32 - 1) / fact;
            }
            acc
        };
        let gap = x - support;
        let mut edges: Vec<f64> = mu.shifts.iter().copied().filter(|&s| s < support).collect();
        edges.push(support);
        let mut total = crate::special::KahanSum::default();
        for w in edges.windows(2) {
            let pieces = ((w[1] - w[0]) / gap).ceil().max(1.0) as usize;
            let h = (w[1] - w[0]) / pieces as f64;
            for piece in 0..pieces {
                let a = w[0] + piece as f64 * h;
                total.add(gl_integrate(rule, a, a + h, |t| a_j(t) * ac.phi(k, r, x - t)));
            }
        }
        Ok(total.value())
    }

    /// `(Π̄ + q)^{*n}(x±)`.
    pub fn power(&self, n: usize, x: f64, side: Side) -> Result<f64> {
        self.eval(n, 0, x, side)
    }

    /// `(𝟏 * (Π̄ + q)^{*n})(x)`.
    pub fn integral(&self, n: usize, x: f64) -> Result<f64> {
        self.eval(n, 1, x, Side::Left)
    }

    /// `d`-th one-sided derivative of `(Π̄ + q)^{*n}` at `x`.
    pub fn derivative(&self, n: usize, d: usize, x: f64, side: Side) -> Result<f64> {
        self.eval(n, -(d as i32), x, side)
    }
}

fn gl20() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(20))
}

/// `(Π̄ + q)^{*n}(x±)` for a single point.
pub fn conv_tail_power(model: &LevyModel, n: usize, x: f64, side: Side) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("conv_tail_power needs n >= 1".into()));
    }
    if !(x > 0.0) {
        return Err(Error::Domain(format!("conv_tail_power needs x > 0, got {x}")));
    }
    ConvEngine::new(model, x).power(n, x, side)
}

/// Adaptive Gauss–Legendre on `[a, b]`, bisecting until the 15-point rule on a panel agrees
/// with the sum over its halves. Integrable endpoint singularities are resolved by the
/// geometric refinement this produces.
pub fn adaptive_gl(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<(f64, f64)> {
    let rule = crate::special::gl15();
    let mut stack = vec![(a, b, gl_integrate(rule, a, b, f), 0usize)];
    let mut total = crate::special::KahanSum::default();
    let mut err = 0.0;
    let mut panels = 0usize;
    while let Some((lo, hi, whole, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = gl_integrate(rule, lo, mid, f);
        let right = gl_integrate(rule, mid, hi, f);
        let diff = (left + right - whole).abs();
        let local_tol = tol * ((hi - lo) / (b - a)).max(1e-3);
        panels += 1;
        if diff <= local_tol || depth >= 60 || hi - lo < 1e-15 * (b - a).abs().max(1.0) {
            total.add(left + right);
            err += diff;
        } else if panels > 200_000 {
            return Err(Error::AccuracyFailure {
                achieved: err + diff,
                requested: tol,
                context: "adaptive quadrature panel budget".into(),
            });
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    Ok((total.value(), err))
}

/// `∫_0^c h(y) dy` for `h` with an integrable power singularity at 0: geometric panels
/// `[cρ^{i+1}, cρ^i]` until their contributions become negligible.
pub fn graded_gl(h: &dyn Fn(f64) -> f64, c: f64, tol: f64) -> Result<(f64, f64)> {
    const RHO: f64 = 0.5;
    let mut total = crate::special::KahanSum::default();
    let mut err = 0.0;
    let mut hi = c;
    let mut quiet = 0;
    for _ in 0..2000 {
        let lo = hi * RHO;
        let (v, e) = adaptive_gl(h, lo, hi, tol)?;
        total.add(v);
        err += e;
        if v.abs() <= 1e-18 * total.value().abs().max(f64::MIN_POSITIVE) || v == 0.0 {
            quiet += 1;
            if quiet >= 3 {
                return Ok((total.value(), err));
            }
        } else {
            quiet = 0;
        }
        hi = lo;
        if hi < 1e-300 {
            break;
        }
    }
    Ok((total.value(), err))
}

/// `∫_0^x f(x − y) g(y) dy` by quadrature on pieces split at the breakpoints of both factors.
///
/// The range is split at `x/2` and the upper half is integrated in `z = x − y`, so both
/// kernels' singularities sit at a local origin where floating point is dense.
pub fn convolve_quadrature(
    f: &dyn Fn(f64) -> f64,
    f_breaks: &[f64],
    g: &dyn Fn(f64) -> f64,
    g_breaks: &[f64],
    x: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let half = 0.5 * x;
    let lower = |y: f64| f(x - y) * g(y);
    let upper = |z: f64| f(z) * g(x - z);
    let (a, ea) = half_range(&lower, g_breaks, f_breaks, x, half, tol)?;
    let (b, eb) = half_range(&upper, f_breaks, g_breaks, x, half, tol)?;
    Ok((a + b, ea + eb))
}

// ∫_0^half h(t) dt where h has kinks at `near` and at `x − far`.
fn half_range(h: &dyn Fn(f64) -> f64, near: &[f64], far: &[f64], x: f64, half: f64, tol: f64) -> Result<(f64, f64)> {
    let mut edges = vec![0.0, half];
    edges.extend(near.iter().copied().filter(|&b| b > 0.0 && b < half));
    edges.extend(far.iter().map(|&b| x - b).filter(|&t| t > 0.0 && t < half));
    edges.sort_by(f64::total_cmp);
    edges.dedup_by(|a, b| same_point(*a, *b));
    let pieces = (edges.len() - 1) as f64;
    let mut total = 0.0;
    let mut err = 0.0;
    for w in edges.windows(2) {
        let (v, e) = if w[0] == 0.0 {
            graded_gl(h, w[1], tol / pieces)?
        } else {
            adaptive_gl(h, w[0], w[1], tol / pieces)?
        };
        total += v;
        err += e;
    }
    Ok((total, err))
}

/// `f^{*n}` sampled on a breakpoint-aligned grid, with panel data for exact integration.
#[derive(Debug, Clone)]
pub struct ConvGrid {
    pub n: usize,
    pub nodes: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub breakpoints: Vec<f64>,
    panels: Vec<Panel>,
    singular_exponent: f64,
    first: Option<FirstPanel>,
}

#[derive(Debug, Clone)]
struct Panel {
    a: f64,
    b: f64,
    values: Vec<f64>,
}

// Product-integration data for [0, h]: f(y) ≈ y^{-e} Σ c_i y^i.
#[derive(Debug, Clone)]
struct FirstPanel {
    h: f64,
    coefs: Vec<f64>,
}

const PANEL_ORDER: usize = 12;

fn panel_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(PANEL_ORDER))
}

impl ConvGrid {
    /// Samples `f` on `[0, x_max]` with panels no wider than `h` that never straddle a breakpoint.
    /// `singular = Some(e)` declares non-smooth behaviour at 0 dominated by `y^{-e}`, `e >= 0`;
    /// the grid is then graded toward 0.
    pub fn from_fn(
        f: &dyn Fn(f64, Side) -> f64,
        breakpoints: &[f64],
        x_max: f64,
        h: f64,
        singular: Option<f64>,
    ) -> Result<Self> {
        if !(x_max > 0.0 && h > 0.0) {
            return Err(Error::Domain("grid needs x_max > 0 and h > 0".into()));
        }
        let mut bps: Vec<f64> = breakpoints.iter().copied().filter(|&b| b > 0.0 && b < x_max).collect();
        bps.sort_by(f64::total_cmp);
        bps.dedup_by(|a, b| same_point(*a, *b));
        let mut edges = vec![0.0];
        edges.extend(bps.iter().copied());
        edges.push(x_max);

        let mut nodes = Vec::new();
        for w in edges.windows(2) {
            let m = ((w[1] - w[0]) / h).ceil().max(1.0) as usize;
            for i in 0..m {
                nodes.push(w[0] + (w[1] - w[0]) * i as f64 / m as f64);
            }
        }
        nodes.push(x_max);
        let left: Vec<f64> = nodes.iter().map(|&x| if x > 0.0 { f(x, Side::Left) } else { 0.0 }).collect();
        let right: Vec<f64> = nodes.iter().map(|&x| f(x.max(f64::MIN_POSITIVE), Side::Right)).collect();

        let rule = panel_rule();
        let mut first = None;
        let mut panels = Vec::new();
        for w in nodes.windows(2) {
            let (a, b) = (w[0], w[1]);
            if let (0.0, Some(e)) = (a, singular) {
                // graded panels toward 0, product integration on the last one
                let mut cut = b;
                while cut > b * 1e-10 {
                    let lo = cut * 0.5;
                    panels.push(Self::panel(f, lo, cut, rule));
                    cut = lo;
                }
                first = Some(FirstPanel::fit(f, cut, e));
                continue;
            }
            panels.push(Self::panel(f, a, b, rule));
        }
        panels.sort_by(|p, q| p.a.total_cmp(&q.a));
        Ok(Self {
            n: 0,
            nodes,
            left,
            right,
            breakpoints: bps,
            panels,
            singular_exponent: singular.unwrap_or(0.0),
            first,
        })
    }

    fn panel(f: &dyn Fn(f64, Side) -> f64, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> Panel {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        Panel {
            a,
            b,
            values: rule.0.iter().map(|t| f(mid + half * t, Side::Left)).collect(),
        }
    }

    /// Grid of `(Π̄ + q)^{*n}` aligned to `G_n` and the atoms.
    pub fn power(engine: &ConvEngine, n: usize, x_max: f64, h: f64) -> Result<Self> {
        let model = engine.model();
        let mut bps: Vec<f64> = model.atomic_part().atoms().iter().map(|a| a.x).collect();
        if !model.atomic_part().is_empty() {
            bps.extend(atom_sums(model.atomic_part(), n.max(1), x_max)?.values());
        }
        let e = model.ac().alpha().map(|alpha| (1.0 - n as f64 * (1.0 - alpha)).max(0.0));
        let err = std::cell::RefCell::new(None);
        let f = |x: f64, side: Side| match engine.power(n, x, side) {
            Ok(v) => v,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        };
        let mut grid = Self::from_fn(&f, &bps, x_max, h, e)?;
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        grid.n = n;
        Ok(grid)
    }

    pub fn x_max(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// `∫_0^x f(y) dy`.
    pub fn ind_conv(&self, x: f64) -> Result<f64> {
        if x < 0.0 || (x > self.x_max() && !same_point(x, self.x_max())) {
            return Err(Error::Domain(format!("x = {x} outside grid coverage [0, {}]", self.x_max())));
        }
        let rule = panel_rule();
        let mut total = crate::special::KahanSum::default();
        if let Some(fp) = &self.first {
            total.add(fp.integral(x.min(fp.h), self.singular_exponent));
        }
        for p in &self.panels {
            if p.a >= x {
                break;
            }
            if p.b <= x || same_point(p.b, x) {
                let half = 0.5 * (p.b - p.a);
                total.add(half * p.values.iter().zip(&rule.1).map(|(v, w)| v * w).sum::<f64>());
            } else {
                // partial panel: interpolate the nodal values, integrate on [a, x]
                let half = 0.5 * (p.b - p.a);
                let mid = 0.5 * (p.a + p.b);
                let nodes: Vec<f64> = rule.0.iter().map(|t| mid + half * t).collect();
                let v = gl_integrate(rule, p.a, x, |y| lagrange(&nodes, &p.values, y));
                total.add(v);
            }
        }
        Ok(total.value())
    }

    /// CSV rows `x,n,value_left,value_right`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,n,value_left,value_right\n");
        for i in 0..self.nodes.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                crate::fmt_e(self.nodes[i]),
                self.n,
                crate::fmt_e(self.left[i]),
                crate::fmt_e(self.right[i])
            ));
        }
        out
    }
}

impl FirstPanel {
    fn fit(f: &dyn Fn(f64, Side) -> f64, h: f64, e: f64) -> Self {
        let rule = gauss_legendre(8);
        let ts: Vec<f64> = rule.0.iter().map(|t| 0.5 * h * (1.0 + t)).collect();
        let ys: Vec<f64> = ts.iter().map(|&y| f(y, Side::Left) * y.powf(e)).collect();
        let (coefs, _, _) = crate::special::polyfit(&ts, &ys, 4);
        Self { h, coefs }
    }

    fn integral(&self, x: f64, e: f64) -> f64 {
        self.coefs
            .iter()
            .enumerate()
            .map(|(i, c)| c * x.powf(i as f64 + 1.0 - e) / (i as f64 + 1.0 - e))
            .sum()
    }
}

fn lagrange(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for i in 0..nodes.len() {
        let mut l = 1.0;
        for j in 0..nodes.len() {
            if i != j {
                l *= (x - nodes[j]) / (nodes[i] - nodes[j]);
            }
        }
        acc += l * values[i];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy::AtomicPart;
    use crate::special::beta;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn delta1() -> LevyModel {
        LevyModel::atomic(1.0, &[(1.0, 1.0)]).unwrap()
    }

    fn brute_force(locs: &[f64], k: usize, x_max: f64) -> BTreeSet<FKey> {
        let mut out = BTreeSet::new();
        let mut frontier = vec![0.0];
        for _ in 0..k {
            let mut next = Vec::new();
            for &s in &frontier {
                for &a in locs {
                    let v = s + a;
                    if v <= x_max + 1e-12 {
                        next.push(v);
                        out.insert(FKey(v));
                    }
                }
            }
            frontier = next;
        }
        out
    }

    #[test]
    fn sums_of_a_single_atom() {
        let g = atom_sums(delta1().atomic_part(), 3, 10.0).unwrap();
        let got: Vec<(f64, usize)> = g.elements.iter().map(|e| (e.value, e.min_jumps)).collect();
        assert_eq!(got, vec![(1.0, 1), (2.0, 2), (3.0, 3)]);
    }

    #[test]
    fn sums_of_two_atoms() {
        let atomic = AtomicPart::new(&[(0.5, 1.0), (0.7, 1.0)]).unwrap();
        let g = atom_sums(&atomic, 2, 2.0).unwrap();
        let vals = g.values();
        let expect = [0.5, 0.7, 1.0, 1.2, 1.4];
        assert_eq!(vals.len(), expect.len());
        for (a, b) in vals.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reciprocal_family_hits_rationals_exactly() {
        let masses: Vec<f64> = (1..=12).map(|j| (j as f64).powi(-2)).collect();
        let spec = serde_json::json!({"drift": 1.0, "atom_family": {"kind": "reciprocal-integers", "masses": masses, "cap": 12}});
        let m = LevyModel::from_json(&spec.to_string()).unwrap();
        let g = atom_sums(m.atomic_part(), 3, 1.0).unwrap();
        assert!(g.exact);
        // 3/7 = 1/7 + 1/7 + 1/7 needs three jumps, 2/7 two
        assert_eq!(g.min_jumps_exact(Rational::new(3, 7)), Some(3));
        assert_eq!(g.min_jumps_exact(Rational::new(2, 7)), Some(2));
        // 5/6 = 1/2 + 1/3
        assert_eq!(g.min_jumps_exact(Rational::new(5, 6)), Some(2));
        assert_eq!(g.min_jumps(std::f64::consts::FRAC_1_SQRT_2), None);
    }

    #[test]
    fn budget_is_enforced() {
        let atomic = AtomicPart::new(&[(0.01, 1.0), (0.013, 1.0), (0.017, 1.0)]).unwrap();
        let err = atom_sums_with_budget(&atomic, 50, 10.0, 1000).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { k: 50, budget: 1000 }));
    }

    #[test]
    fn representation_counts() {
        // 3 = 1 + 2 = 1 + 1 + 1; the minimal representation {1, 2} is unique
        let atomic = AtomicPart::new(&[(1.0, 1.0), (2.0, 1.0)]).unwrap();
        let g = atom_sums(&atomic, 3, 4.0).unwrap();
        let e = g.elements.iter().find(|e| e.value == 3.0).unwrap();
        assert_eq!((e.min_jumps, e.representations), (2, 1));
        let e = g.elements.iter().find(|e| e.value == 4.0).unwrap();
        // 4 = 2 + 2 with two jumps
        assert_eq!((e.min_jumps, e.representations), (2, 1));
    }

    #[test]
    fn unit_atom_powers() {
        let e = ConvEngine::new(&delta1(), 10.0);
        assert_eq!(e.power(1, 0.5, Side::Left).unwrap(), 1.0);
        assert_eq!(e.power(1, 1.0, Side::Left).unwrap(), 1.0);
        assert_eq!(e.power(1, 1.0, Side::Right).unwrap(), 0.0);
        assert_relative_eq!(e.power(2, 0.5, Side::Left).unwrap(), 0.5);
        assert_relative_eq!(e.power(2, 1.5, Side::Left).unwrap(), 0.5);
        assert_eq!(e.power(2, 2.5, Side::Left).unwrap(), 0.0);
        assert_relative_eq!(e.integral(1, 0.5).unwrap(), 0.5);
        assert_relative_eq!(e.integral(1, 2.0).unwrap(), 1.0);
        assert_relative_eq!(e.integral(3, 9.0).unwrap(), 1.0);
        assert_eq!(conv_tail_power(&delta1(), 1, 3.0, Side::Left).unwrap(), 0.0);
        assert!(conv_tail_power(&delta1(), 1, 0.0, Side::Left).is_err());
    }

    #[test]
    fn stable_square_is_a_beta_power() {
        let (c, alpha) = (1.3, 0.4);
        let m = LevyModel::stable(1.0, c, alpha).unwrap();
        let e = ConvEngine::new(&m, 5.0);
        for x in [0.01f64, 0.7, 4.0] {
            let expect = c * c * beta(1.0 - alpha, 1.0 - alpha) * x.powf(1.0 - 2.0 * alpha);
            assert_relative_eq!(e.power(2, x, Side::Left).unwrap(), expect, max_relative = 1e-12);
            assert_relative_eq!(e.integral(1, x).unwrap(), c * x.powf(1.0 - alpha) / (1.0 - alpha), max_relative = 1e-12);
        }
    }

    #[test]
    fn constant_kernel() {
        let m = LevyModel::pure_drift(1.0).unwrap().with_q(0.7).unwrap();
        let e = ConvEngine::new(&m, 5.0);
        assert_relative_eq!(e.integral(1, 2.0).unwrap(), 1.4, max_relative = 1e-14);
        // q^{*2}(x) = q² x
        assert_relative_eq!(e.power(2, 2.0, Side::Left).unwrap(), 0.98, max_relative = 1e-14);
    }

    fn mixed() -> LevyModel {
        LevyModel::new(
            1.2,
            0.3,
            AtomicPart::new(&[(0.4, 0.8), (1.1, 1.5)]).unwrap(),
            AcTail::Tempered { c: 0.6, alpha: 0.35, b: 0.9 },
        )
        .unwrap()
    }

    fn kernel_breaks(m: &LevyModel) -> Vec<f64> {
        m.atomic_part().atoms().iter().map(|a| a.x).collect()
    }

    #[test]
    fn square_matches_quadrature_oracle() {
        for m in [mixed(), mixed().with_ac(AcTail::Stable { c: 0.5, alpha: 0.7 }).unwrap(), delta1()] {
            let e = ConvEngine::new(&m, 4.0);
            let f = |y: f64| m.kernel(y, Side::Left);
            let br = kernel_breaks(&m);
            for x in [0.3, 0.95, 1.7, 3.3] {
                let (q, _) = convolve_quadrature(&f, &br, &f, &br, x, 1e-12).unwrap();
                assert_relative_eq!(e.power(2, x, Side::Left).unwrap(), q, max_relative = 1e-9, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cube_is_associative() {
        let m = mixed();
        let e = ConvEngine::new(&m, 4.0);
        let f = |y: f64| m.kernel(y, Side::Left);
        let f2 = |y: f64| if y > 0.0 { e.power(2, y, Side::Left).unwrap() } else { 0.0 };
        let br = kernel_breaks(&m);
        let br2 = atom_sums(m.atomic_part(), 2, 4.0).unwrap().values();
        for x in [0.5, 1.5, 2.6] {
            let (a, _) = convolve_quadrature(&f2, &br2, &f, &br, x, 1e-11).unwrap();
            let (b, _) = convolve_quadrature(&f, &br, &f2, &br2, x, 1e-11).unwrap();
            let exact = e.power(3, x, Side::Left).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-8);
            assert_relative_eq!(a, exact, max_relative = 1e-8);
        }
    }

    #[test]
    fn running_integral_and_derivative_are_consistent() {
        let m = mixed();
        let e = ConvEngine::new(&m, 4.0);
        for n in 1..=4 {
            for x in [0.37, 1.77, 3.23] {
                // d/dx 𝟏*f^{*n} = f^{*n}, d/dx f^{*n} = first derivative (away from breakpoints)
                let h = 1e-5;
                let fd = (e.integral(n, x + h).unwrap() - e.integral(n, x - h).unwrap()) / (2.0 * h);
                assert_relative_eq!(fd, e.power(n, x, Side::Left).unwrap(), max_relative = 1e-7);
                if n >= 2 {
                    let fd = (e.power(n, x + h, Side::Left).unwrap() - e.power(n, x - h, Side::Left).unwrap()) / (2.0 * h);
                    assert_relative_eq!(fd, e.derivative(n, 1, x, Side::Left).unwrap(), max_relative = 1e-6);
                }
            }
        }
    }

    #[test]
    fn far_field_matches_direct_sum() {
        // without killing the far-field integral replaces a cancelling shifted sum
        let m = LevyModel::new(1.0, 0.0, AtomicPart::new(&[(0.5, 1.0)]).unwrap(), AcTail::Tempered { c: 0.5, alpha: 0.3, b: 0.5 }).unwrap();
        let e = ConvEngine::new(&m, 10.0);
        let f = |y: f64| m.kernel(y, Side::Left);
        let f2 = |y: f64| if y > 0.0 { e.power(2, y, Side::Left).unwrap() } else { 0.0 };
        let br2 = atom_sums(m.atomic_part(), 2, 10.0).unwrap().values();
        for x in [1.5, 3.0, 7.0] {
            let (q, _) = convolve_quadrature(&f2, &br2, &f, &[0.5], x, 1e-12).unwrap();
            assert_relative_eq!(e.power(3, x, Side::Left).unwrap(), q, max_relative = 1e-8);
        }
    }

    #[test]
    fn grid_integral_matches_engine() {
        let m = mixed();
        let e = ConvEngine::new(&m, 3.0);
        for n in [1usize, 2] {
            let grid = ConvGrid::power(&e, n, 3.0, 0.1).unwrap();
            for b in atom_sums(m.atomic_part(), n, 3.0).unwrap().values() {
                assert!(grid.nodes.contains(&b));
            }
            for x in [0.05, 0.4, 1.3, 2.95, 3.0] {
                assert_relative_eq!(grid.ind_conv(x).unwrap(), e.integral(n, x).unwrap(), max_relative = 1e-6);
            }
        }
        let g = ConvGrid::from_fn(&|_, _| 0.7, &[], 2.0, 0.5, None).unwrap();
        assert_relative_eq!(g.ind_conv(1.3).unwrap(), 0.91, max_relative = 1e-13);
        assert!(g.ind_conv(2.5).is_err());
        let s = LevyModel::stable(1.0, 1.0, 0.5).unwrap();
        let g = ConvGrid::from_fn(&|y, side| s.kernel(y, side), &[], 2.0, 0.5, Some(0.5)).unwrap();
        assert_relative_eq!(g.ind_conv(1.7).unwrap(), 2.0 * 1.7f64.sqrt(), max_relative = 1e-10);
        assert_relative_eq!(ConvGrid::from_fn(&|y, side| delta1().kernel(y, side), &[1.0], 3.0, 0.5, None).unwrap().ind_conv(2.0).unwrap(), 1.0);
    }

    fn arb_atomic() -> impl Strategy<Value = LevyModel> {
        (
            0.5f64..4.0,
            prop::collection::btree_map(5u32..300, 0.1f64..3.0, 1..5),
        )
            .prop_map(|(d, atoms)| {
                let pairs: Vec<(f64, f64)> = atoms.into_iter().map(|(k, m)| (k as f64 / 100.0, m)).collect();
                LevyModel::atomic(d, &pairs).unwrap()
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn atom_sums_match_brute_force(m in arb_atomic(), k in 1usize..4, x_max in 0.5f64..5.0) {
            let locs: Vec<f64> = m.atomic_part().atoms().iter().map(|a| a.x).collect();
            let got: BTreeSet<FKey> = atom_sums(m.atomic_part(), k, x_max).unwrap().values().into_iter().map(FKey).collect();
            let mut bf: Vec<f64> = brute_force(&locs, k, x_max).into_iter().map(|f| f.0).collect();
            bf.dedup_by(|a, b| same_point(*a, *b));
            prop_assert_eq!(got.len(), bf.len());
            for (a, b) in got.iter().zip(&bf) {
                prop_assert!(same_point(a.0, *b));
            }
        }

        #[test]
        fn sums_are_monotone_in_k(m in arb_atomic(), k in 1usize..4) {
            let small = atom_sums(m.atomic_part(), k, 4.0).unwrap();
            let big = atom_sums(m.atomic_part(), k + 1, 4.0).unwrap();
            for v in small.values() {
                prop_assert!(big.contains(v));
            }
        }

        #[test]
        fn iterated_bound_holds(m in arb_atomic(), n in 1usize..6, x in 0.01f64..4.0) {
            let e = ConvEngine::new(&m, 4.0);
            let one = e.integral(1, x).unwrap();
            let lhs = e.integral(n, x).unwrap();
            prop_assert!(lhs <= one.powi(n as i32) * (1.0 + 1e-10) + 1e-12);
        }

        #[test]
        fn powers_are_piecewise_polynomial(m in arb_atomic(), n in 1usize..4) {
            let e = ConvEngine::new(&m, 3.0);
            let g = atom_sums(m.atomic_part(), n, 3.0).unwrap().values();
            let mut edges = vec![0.0];
            edges.extend(g.iter().copied().filter(|&v| v < 3.0));
            edges.push(3.0);
            for w in edges.windows(2) {
                if w[1] - w[0] < 1e-3 {
                    continue;
                }
                let ts: Vec<f64> = (0..(n + 4)).map(|i| w[0] + (w[1] - w[0]) * (i as f64 + 0.5) / (n + 4) as f64).collect();
                let ys: Vec<f64> = ts.iter().map(|&t| e.power(n, t, Side::Left).unwrap()).collect();
                let (_, rms, _) = crate::special::polyfit(&ts, &ys, n - 1);
                prop_assert!(rms < 1e-10, "rms {} on {:?}", rms, w);
            }
        }

        #[test]
        fn higher_powers_are_continuous(m in arb_atomic(), n in 2usize..5) {
            let e = ConvEngine::new(&m, 3.0);
            for b in atom_sums(m.atomic_part(), n, 3.0).unwrap().values() {
                let l = e.power(n, b, Side::Left).unwrap();
                let r = e.power(n, b, Side::Right).unwrap();
                prop_assert!((l - r).abs() < 1e-10 * (1.0 + l.abs()));
            }
        }
    }
}
