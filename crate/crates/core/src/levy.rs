//! Subordinator model: drift, killing rate, atoms and an absolutely continuous tail.
//!
//! The tail `Π̄(y) = Π([y, ∞))` is left-continuous at atoms. [`Side::Left`] returns
//! that canonical value; [`Side::Right`] excludes the atom at `y`.

use crate::error::{Error, Result, Violation};
use crate::special::{gamma, int_pow_exp};
use num_complex::Complex64;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub type Rational = Ratio<i128>;

pub const DEFAULT_FAMILY_CAP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => -1.0,
            Side::Right => 1.0,
        }
    }
}

/// Value of the tail, with `Π̄(0+) = ∞` kept explicit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailValue {
    Finite(f64),
    Unbounded,
}

impl TailValue {
    pub fn as_f64(self) -> f64 {
        match self {
            TailValue::Finite(v) => v,
            TailValue::Unbounded => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, TailValue::Finite(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mean {
    Finite(f64),
    Infinite,
}

impl Mean {
    pub fn finite(self) -> Option<f64> {
        match self {
            Mean::Finite(m) => Some(m),
            Mean::Infinite => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub x: f64,
    /// Exact location when the input was rational (a string like "7/10" or a generated family).
    pub exact: Option<Rational>,
    pub mass: f64,
}

/// Provenance of a generated countable atom family.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomFamily {
    pub kind: String,
    pub masses: Vec<f64>,
    pub cap: usize,
    /// Mass of the supplied family beyond the cap, dropped from the model.
    pub truncated_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AtomicPart {
    atoms: Vec<Atom>,
    family: Option<AtomFamily>,
    // suffix[i] = Σ_{j >= i} mass_j
    suffix_mass: Vec<f64>,
    // prefix[i] = Σ_{j < i} mass_j·x_j, prefix2[i] = Σ_{j < i} mass_j·x_j²
    prefix_mx: Vec<f64>,
    prefix_mx2: Vec<f64>,
}

impl AtomicPart {
    /// Builds the atomic part from `(location, mass)` pairs; pairs are sorted.
    pub fn new(pairs: &[(f64, f64)]) -> Result<Self> {
        let atoms = pairs
            .iter()
            .map(|&(x, mass)| Atom { x, exact: None, mass })
            .collect();
        Self::from_atoms(atoms, None)
    }

    pub fn empty() -> Self {
        Self::from_atoms(Vec::new(), None).expect("empty atomic part is valid")
    }

    fn from_atoms(mut atoms: Vec<Atom>, family: Option<AtomFamily>) -> Result<Self> {
        let mut violations = Vec::new();
        for (i, a) in atoms.iter().enumerate() {
            if !(a.x.is_finite() && a.x > 0.0) {
                violations.push(Violation::new(format!("/atoms/{i}/x"), "location > 0"));
            }
            if !(a.mass.is_finite() && a.mass > 0.0) {
                violations.push(Violation::new(format!("/atoms/{i}/mass"), "mass > 0"));
            }
        }
        if !violations.is_empty() {
            return Err(Error::InvalidModel(violations));
        }
        atoms.sort_by(|a, b| a.x.total_cmp(&b.x));
        for w in atoms.windows(2) {
            let same = match (w[0].exact, w[1].exact) {
                (Some(p), Some(q)) => p == q,
                _ => w[0].x == w[1].x,
            };
            if same {
                return Err(Error::InvalidModel(vec![Violation::new(
                    "/atoms",
                    format!("locations strictly increasing (duplicate location {})", w[0].x),
                )]));
            }
        }
        let n = atoms.len();
        let mut suffix_mass = vec![0.0; n + 1];
        for i in (0..n).rev() {
            suffix_mass[i] = suffix_mass[i + 1] + atoms[i].mass;
        }
        let mut prefix_mx = vec![0.0; n + 1];
        let mut prefix_mx2 = vec![0.0; n + 1];
        for i in 0..n {
            prefix_mx[i + 1] = prefix_mx[i] + atoms[i].mass * atoms[i].x;
            prefix_mx2[i + 1] = prefix_mx2[i] + atoms[i].mass * atoms[i].x * atoms[i].x;
        }
        Ok(Self {
            atoms,
            family,
            suffix_mass,
            prefix_mx,
            prefix_mx2,
        })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn family(&self) -> Option<&AtomFamily> {
        self.family.as_ref()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.suffix_mass[0]
    }

    pub fn max_location(&self) -> Option<f64> {
        self.atoms.last().map(|a| a.x)
    }

    pub fn min_location(&self) -> Option<f64> {
        self.atoms.first().map(|a| a.x)
    }

    /// True when every location is known exactly as a rational.
    pub fn all_exact(&self) -> bool {
        !self.atoms.is_empty() && self.atoms.iter().all(|a| a.exact.is_some())
    }

    /// Mass sitting exactly at `x` (0 away from atoms).
    pub fn mass_at(&self, x: f64) -> f64 {
        match self.atoms.binary_search_by(|a| a.x.total_cmp(&x)) {
            Ok(i) => self.atoms[i].mass,
            Err(_) => 0.0,
        }
    }

    /// Index of the first atom with location `>= y` (Left) or `> y` (Right).
    fn first_index(&self, y: f64, side: Side) -> usize {
        match side {
            Side::Left => self.atoms.partition_point(|a| a.x < y),
            Side::Right => self.atoms.partition_point(|a| a.x <= y),
        }
    }

    pub fn tail(&self, y: f64, side: Side) -> f64 {
        // y <= 0 gives 0 by convention; the Right value at 0 is Π̄(0+)
        if y < 0.0 || (y == 0.0 && side == Side::Left) {
            return 0.0;
        }
        self.suffix_mass[self.first_index(y, side)]
    }

    /// `∫_0^y Σ m·1{t < a} dt = Σ m·min(y, a)`.
    pub fn tail_integral(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let i = self.first_index(y, Side::Left);
        self.prefix_mx[i] + y * self.suffix_mass[i]
    }

    /// `∫_0^y t·Π̄_atoms(t) dt = Σ m·min(y, a)²/2`.
    pub fn tail_first_moment(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let i = self.first_index(y, Side::Left);
        0.5 * (self.prefix_mx2[i] + y * y * self.suffix_mass[i])
    }
}

/// Absolutely continuous part of the tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AcTail {
    None,
    /// `Π̄₂(x) = C x^{-α}`
    Stable { c: f64, alpha: f64 },
    /// `Π̄₂(x) = C x^{-α} e^{-b x}`
    Tempered { c: f64, alpha: f64, b: f64 },
}

impl AcTail {
    pub fn is_none(&self) -> bool {
        matches!(self, AcTail::None)
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            AcTail::None => None,
            AcTail::Stable { alpha, .. } | AcTail::Tempered { alpha, .. } => Some(alpha),
        }
    }

    /// `(C, α, b)` with `b = 0` for the stable family.
    pub fn params(&self) -> Option<(f64, f64, f64)> {
        match *self {
            AcTail::None => None,
            AcTail::Stable { c, alpha } => Some((c, alpha, 0.0)),
            AcTail::Tempered { c, alpha, b } => Some((c, alpha, b)),
        }
    }

    pub fn tail(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        match *self {
            AcTail::None => 0.0,
            AcTail::Stable { c, alpha } => c * y.powf(-alpha),
            AcTail::Tempered { c, alpha, b } => c * y.powf(-alpha) * (-b * y).exp(),
        }
    }

    /// `∫_0^y Π̄₂(t) dt`
    pub fn tail_integral(&self, y: f64) -> f64 {
        match self.params() {
            None => 0.0,
            Some((c, alpha, b)) => c * int_pow_exp(1.0 - alpha, b, y),
        }
    }

    /// `∫_0^y t Π̄₂(t) dt`
    pub fn tail_first_moment(&self, y: f64) -> f64 {
        match self.params() {
            None => 0.0,
            Some((c, alpha, b)) => c * int_pow_exp(2.0 - alpha, b, y),
        }
    }

    /// `∫_0^∞ e^{-s t} Π̄₂(t) dt`, principal branch, `Re s >= 0`, `s != 0` for the stable family.
    pub fn laplace(&self, s: Complex64) -> Complex64 {
        match self.params() {
            None => Complex64::new(0.0, 0.0),
            Some((c, alpha, b)) => {
                let k = c * gamma(1.0 - alpha);
                (s + b).powf(alpha - 1.0) * k
            }
        }
    }
}

/// A drift-positive subordinator with optional exponential killing.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyModel {
    drift: f64,
    q: f64,
    atomic: AtomicPart,
    ac: AcTail,
}

impl LevyModel {
    pub fn new(drift: f64, q: f64, atomic: AtomicPart, ac: AcTail) -> Result<Self> {
        let mut violations = Vec::new();
        if !(drift.is_finite() && drift > 0.0) {
            violations.push(Violation::new("/drift", "drift > 0"));
        }
        if !(q.is_finite() && q >= 0.0) {
            violations.push(Violation::new("/q", "q >= 0"));
        }
        validate_ac(&ac, &mut violations);
        if !violations.is_empty() {
            return Err(Error::InvalidModel(violations));
        }
        Ok(Self { drift, q, atomic, ac })
    }

    /// Purely atomic model from `(location, mass)` pairs.
    pub fn atomic(drift: f64, pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(drift, 0.0, AtomicPart::new(pairs)?, AcTail::None)
    }

    pub fn pure_drift(drift: f64) -> Result<Self> {
        Self::new(drift, 0.0, AtomicPart::empty(), AcTail::None)
    }

    pub fn stable(drift: f64, c: f64, alpha: f64) -> Result<Self> {
        Self::new(drift, 0.0, AtomicPart::empty(), AcTail::Stable { c, alpha })
    }

    pub fn tempered(drift: f64, c: f64, alpha: f64, b: f64) -> Result<Self> {
        Self::new(drift, 0.0, AtomicPart::empty(), AcTail::Tempered { c, alpha, b })
    }

    /// Same model with a different killing rate.
    pub fn with_q(&self, q: f64) -> Result<Self> {
        Self::new(self.drift, q, self.atomic.clone(), self.ac)
    }

    pub fn with_ac(&self, ac: AcTail) -> Result<Self> {
        Self::new(self.drift, self.q, self.atomic.clone(), ac)
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn atomic_part(&self) -> &AtomicPart {
        &self.atomic
    }

    pub fn ac(&self) -> &AcTail {
        &self.ac
    }

    pub fn is_pure_drift(&self) -> bool {
        self.atomic.is_empty() && self.ac.is_none()
    }

    pub fn is_purely_atomic(&self) -> bool {
        !self.atomic.is_empty() && self.ac.is_none()
    }

    /// `Π̄(y)` with the requested one-sided convention; `y <= 0` gives 0 except `Π̄(0+)` on the right.
    pub fn tail(&self, y: f64, side: Side) -> TailValue {
        if y < 0.0 || (y == 0.0 && side == Side::Left) {
            return TailValue::Finite(0.0);
        }
        if y == 0.0 {
            return self.total_mass();
        }
        TailValue::Finite(self.atomic.tail(y, side) + self.ac.tail(y))
    }

    /// `Π(0, ∞) = Π̄(0+)`.
    pub fn total_mass(&self) -> TailValue {
        if self.ac.is_none() {
            TailValue::Finite(self.atomic.total_mass())
        } else {
            TailValue::Unbounded
        }
    }

    /// `Π̄(y) + q` for `y > 0`, 0 for `y <= 0`. This is the renewal kernel.
    pub fn kernel(&self, y: f64, side: Side) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        self.atomic.tail(y, side) + self.ac.tail(y) + self.q
    }

    /// `∫_0^y (Π̄(t) + q) dt`.
    pub fn kernel_integral(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        self.atomic.tail_integral(y) + self.ac.tail_integral(y) + self.q * y
    }

    /// `∫_0^y t (Π̄(t) + q) dt`.
    pub fn kernel_first_moment(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        self.atomic.tail_first_moment(y) + self.ac.tail_first_moment(y) + 0.5 * self.q * y * y
    }

    /// `m(x) = (𝟏 * (Π̄ + q))(x) / δ`.
    pub fn series_ratio(&self, x: f64) -> f64 {
        self.kernel_integral(x) / self.drift
    }

    /// Blumenthal–Getoor index.
    pub fn bg_index(&self) -> Result<f64> {
        let mut beta = self.ac.alpha().unwrap_or(0.0);
        if let Some(fam) = self.atomic.family() {
            beta = beta.max(family_index(&fam.masses)?);
        }
        Ok(beta)
    }

    /// `ψ(λ) = δλ + ∫(1 − e^{−λx}) Π(dx)`.
    pub fn laplace_exponent(&self, lam: f64) -> Result<f64> {
        if !(lam >= 0.0) {
            return Err(Error::Domain(format!("laplace_exponent needs lam >= 0, got {lam}")));
        }
        if lam == 0.0 {
            return Ok(0.0);
        }
        let atoms: f64 = self
            .atomic
            .atoms()
            .iter()
            .map(|a| -a.mass * (-lam * a.x).exp_m1())
            .sum();
        let ac = match self.ac.params() {
            None => 0.0,
            Some((c, alpha, b)) => lam * c * gamma(1.0 - alpha) * (lam + b).powf(alpha - 1.0),
        };
        Ok(self.drift * lam + atoms + ac)
    }

    /// `E[X₁] = δ + ∫_0^∞ Π̄(x) dx`.
    pub fn mean(&self) -> Mean {
        let atoms: f64 = self.atomic.atoms().iter().map(|a| a.x * a.mass).sum();
        match self.ac {
            AcTail::Stable { .. } => Mean::Infinite,
            AcTail::Tempered { c, alpha, b } => {
                Mean::Finite(self.drift + atoms + c * gamma(1.0 - alpha) * b.powf(alpha - 1.0))
            }
            AcTail::None => Mean::Finite(self.drift + atoms),
        }
    }

    /// `ε = min(0.05, (1 − β)/4)`, the slack in the transform decay exponent.
    pub fn decay_slack(&self) -> Result<f64> {
        Ok(0.05f64.min((1.0 - self.bg_index()?) / 4.0))
    }

    /// `ℒ(Π̄ + q)(s)` for `Re s >= 0`, `s != 0`.
    pub fn tail_laplace(&self, s: Complex64) -> Result<Complex64> {
        if s.re < 0.0 {
            return Err(Error::Domain(format!("tail_laplace needs Re(s) >= 0, got {s}")));
        }
        if s.norm() == 0.0 {
            return Err(Error::Pole);
        }
        Ok(self.tail_laplace_unchecked(s))
    }

    pub(crate) fn tail_laplace_unchecked(&self, s: Complex64) -> Complex64 {
        let mut acc = self.ac.laplace(s);
        for a in self.atomic.atoms() {
            acc += crate::special::one_minus_exp_over(s, a.x) * a.mass;
        }
        if self.q > 0.0 {
            acc += self.q / s;
        }
        acc
    }

    /// Canonical JSON form (round-trips through [`LevyModel::from_json`]).
    pub fn to_spec(&self) -> ModelSpec {
        let family_locs = self.atomic.family().is_some();
        let mut atoms = Vec::new();
        for a in self.atomic.atoms() {
            // generated family members are re-derived from the family block
            if family_locs && a.exact.map(is_unit_fraction).unwrap_or(false) && self.family_member(a) {
                continue;
            }
            let x = match a.exact {
                Some(r) => Location::Text(format!("{}/{}", r.numer(), r.denom())),
                None => Location::Number(a.x),
            };
            atoms.push(AtomSpec { x, mass: Some(a.mass) });
        }
        let atom_family = self.atomic.family().map(|f| FamilySpec {
            kind: Some(f.kind.clone()),
            masses: f.masses.clone(),
            cap: Some(f.cap),
        });
        let ac = match self.ac {
            AcTail::None => None,
            AcTail::Stable { c, alpha } => Some(AcSpec {
                kind: Some("stable".into()),
                c: Some(c),
                alpha: Some(alpha),
                b: None,
            }),
            AcTail::Tempered { c, alpha, b } => Some(AcSpec {
                kind: Some("tempered".into()),
                c: Some(c),
                alpha: Some(alpha),
                b: Some(b),
            }),
        };
        ModelSpec {
            drift: Some(self.drift),
            q: Some(self.q),
            atoms,
            atom_family,
            ac,
        }
    }

    fn family_member(&self, a: &Atom) -> bool {
        let Some(f) = self.atomic.family() else { return false };
        let Some(r) = a.exact else { return false };
        let j = *r.denom() as usize;
        *r.numer() == 1 && j >= 1 && j <= f.cap.min(f.masses.len()) && f.masses[j - 1] == a.mass
    }

    /// Hex SHA-256 of the canonical JSON form; includes the family cap.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.to_spec()).expect("model spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.build()
    }
}

fn is_unit_fraction(r: Rational) -> bool {
    *r.numer() == 1
}

fn validate_ac(ac: &AcTail, violations: &mut Vec<Violation>) {
    if let Some((c, alpha, b)) = ac.params() {
        if !(c.is_finite() && c > 0.0) {
            violations.push(Violation::new("/ac/C", "C > 0"));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            violations.push(Violation::new("/ac/alpha", "alpha ∈ (0,1)"));
        }
        if matches!(ac, AcTail::Tempered { .. }) && !(b.is_finite() && b > 0.0) {
            violations.push(Violation::new("/ac/b", "b > 0"));
        }
    }
}

/// Index of the reciprocal-integer family `{(1/j, m_j)}`: `Σ j^{-γ} m_j < ∞` iff `γ > 1 − s`
/// when `m_j ≈ K j^{-s}`. The decay rate `s` is fitted on the upper half of the supplied masses.
fn family_index(masses: &[f64]) -> Result<f64> {
    const MIN_MASSES: usize = 8;
    if masses.len() < MIN_MASSES {
        return Err(Error::IndeterminateIndex(format!(
            "need at least {MIN_MASSES} family masses to estimate the decay rate, got {}",
            masses.len()
        )));
    }
    let start = masses.len() / 2;
    let pts: Vec<(f64, f64)> = (start..masses.len())
        .map(|i| (((i + 1) as f64).ln(), masses[i].ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let max_resid = pts
        .iter()
        .map(|p| (p.1 - (my + slope * (p.0 - mx))).abs())
        .fold(0.0, f64::max);
    if max_resid > 0.5 {
        return Err(Error::IndeterminateIndex(format!(
            "family masses do not follow a power law (max log residual {max_resid:.3})"
        )));
    }
    let s = -slope;
    // round to the 1e-6 resolution of the index
    let beta = ((1.0 - s).clamp(0.0, 1.0) * 1e6).round() / 1e6;
    if beta >= 1.0 {
        return Err(Error::IndeterminateIndex(format!(
            "family masses decay too slowly (fitted rate {s:.4}); index is not below 1"
        )));
    }
    Ok(beta)
}

/// Parses a rational literal: "7/10", "0.7", "3".
pub fn parse_rational(text: &str) -> Option<Rational> {
    let t = text.trim();
    if let Some((n, d)) = t.split_once('/') {
        let n: i128 = n.trim().parse().ok()?;
        let d: i128 = d.trim().parse().ok()?;
        if d == 0 {
            return None;
        }
        return Some(Rational::new(n, d));
    }
    let (int, frac) = t.split_once('.').unwrap_or((t, ""));
    if frac.len() > 30 || !frac.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let neg = int.starts_with('-');
    let digits = format!("{}{}", int.trim_start_matches(['-', '+']), frac);
    let mut num: i128 = digits.parse().ok()?;
    if neg {
        num = -num;
    }
    let den = 10i128.checked_pow(frac.len() as u32)?;
    Some(Rational::new(num, den))
}

pub fn rational_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Location {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSpec {
    pub x: Location,
    #[serde(default)]
    pub mass: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub masses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcSpec {
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub drift: Option<f64>,
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub atoms: Vec<AtomSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atom_family: Option<FamilySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ac: Option<AcSpec>,
}

impl ModelSpec {
    /// Validates every invariant and collects all violations before failing.
    pub fn build(&self) -> Result<LevyModel> {
        let mut v = Vec::new();
        let drift = match self.drift {
            Some(d) if d.is_finite() && d > 0.0 => d,
            _ => {
                v.push(Violation::new("/drift", "drift > 0"));
                f64::NAN
            }
        };
        let q = self.q.unwrap_or(0.0);
        if !(q.is_finite() && q >= 0.0) {
            v.push(Violation::new("/q", "q >= 0"));
        }

        let mut atoms = Vec::new();
        for (i, a) in self.atoms.iter().enumerate() {
            let (x, exact) = match &a.x {
                Location::Number(x) => (*x, None),
                Location::Text(t) => match parse_rational(t) {
                    Some(r) => (rational_to_f64(r), Some(r)),
                    None => {
                        v.push(Violation::new(format!("/atoms/{i}/x"), "location is a number or a rational string \"p/q\""));
                        continue;
                    }
                },
            };
            if !(x.is_finite() && x > 0.0) {
                v.push(Violation::new(format!("/atoms/{i}/x"), "location > 0"));
            }
            let mass = a.mass.unwrap_or(f64::NAN);
            if !(mass.is_finite() && mass > 0.0) {
                v.push(Violation::new(format!("/atoms/{i}/mass"), "mass > 0"));
            }
            atoms.push(Atom { x, exact, mass });
        }

        let mut family = None;
        if let Some(f) = &self.atom_family {
            match f.kind.as_deref() {
                Some("reciprocal-integers") => {}
                _ => v.push(Violation::new("/atom_family/kind", "kind ∈ {reciprocal-integers}")),
            }
            let cap = f.cap.unwrap_or(DEFAULT_FAMILY_CAP);
            if cap == 0 {
                v.push(Violation::new("/atom_family/cap", "cap >= 1"));
            }
            if f.masses.is_empty() {
                v.push(Violation::new("/atom_family/masses", "at least one mass"));
            }
            for (j, m) in f.masses.iter().enumerate() {
                if !(m.is_finite() && *m > 0.0) {
                    v.push(Violation::new(format!("/atom_family/masses/{j}"), "mass > 0"));
                }
            }
            if f.masses.len() >= 8 && family_index(&f.masses).is_err() {
                v.push(Violation::new(
                    "/atom_family/masses",
                    "Σ (1 ∧ location)·mass < ∞ (masses must decay as a power of j)",
                ));
            }
            let keep = cap.min(f.masses.len());
            for j in 1..=keep {
                let r = Rational::new(1, j as i128);
                atoms.push(Atom {
                    x: rational_to_f64(r),
                    exact: Some(r),
                    mass: f.masses[j - 1],
                });
            }
            family = Some(AtomFamily {
                kind: f.kind.clone().unwrap_or_default(),
                masses: f.masses.clone(),
                cap,
                truncated_mass: f.masses.iter().skip(keep).sum(),
            });
        }

        let ac = match &self.ac {
            None => AcTail::None,
            Some(spec) => match spec.kind.as_deref() {
                Some("none") | None => AcTail::None,
                Some("stable") => AcTail::Stable {
                    c: spec.c.unwrap_or(f64::NAN),
                    alpha: spec.alpha.unwrap_or(f64::NAN),
                },
                Some("tempered") => AcTail::Tempered {
                    c: spec.c.unwrap_or(f64::NAN),
                    alpha: spec.alpha.unwrap_or(f64::NAN),
                    b: spec.b.unwrap_or(f64::NAN),
                },
                Some(_) => {
                    v.push(Violation::new("/ac/kind", "kind ∈ {none, stable, tempered}"));
                    AcTail::None
                }
            },
        };
        validate_ac(&ac, &mut v);
        if !v.is_empty() {
            return Err(Error::InvalidModel(v));
        }
        let atomic = AtomicPart::from_atoms(atoms, family)?;
        LevyModel::new(drift, q, atomic, ac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn delta1() -> LevyModel {
        LevyModel::atomic(1.0, &[(1.0, 1.0)]).unwrap()
    }

    #[test]
    fn tail_one_sided_at_unit_atom() {
        let m = delta1();
        assert_eq!(m.tail(0.5, Side::Left), TailValue::Finite(1.0));
        assert_eq!(m.tail(1.0, Side::Left), TailValue::Finite(1.0));
        assert_eq!(m.tail(1.0, Side::Right), TailValue::Finite(0.0));
        assert_eq!(m.tail(-1.0, Side::Right), TailValue::Finite(0.0));
        assert_eq!(m.tail(0.0, Side::Right), TailValue::Finite(1.0));
    }

    #[test]
    fn stable_tail_value_and_unbounded_origin() {
        let m = LevyModel::stable(1.0, 1.0, 0.5).unwrap();
        assert_relative_eq!(m.tail(4.0, Side::Left).as_f64(), 0.5);
        assert_eq!(m.tail(0.0, Side::Right), TailValue::Unbounded);
    }

    #[test]
    fn bg_index_of_supported_families() {
        assert_eq!(delta1().bg_index().unwrap(), 0.0);
        assert_eq!(LevyModel::stable(1.0, 1.0, 0.3).unwrap().bg_index().unwrap(), 0.3);
        assert_eq!(LevyModel::pure_drift(1.0).unwrap().bg_index().unwrap(), 0.0);
    }

    #[test]
    fn reciprocal_family_index_from_mass_decay() {
        // m_j = j^{-1.5}: Σ j^{-γ} j^{-1.5} converges iff γ > -0.5, so the index is 0
        let masses: Vec<f64> = (1..=40).map(|j| (j as f64).powf(-1.5)).collect();
        assert_eq!(family_index(&masses).unwrap(), 0.0);
        // m_j = j^{-0.6}: converges iff γ > 0.4
        let masses: Vec<f64> = (1..=40).map(|j| (j as f64).powf(-0.6)).collect();
        assert_relative_eq!(family_index(&masses).unwrap(), 0.4, epsilon = 1e-6);
        assert!(matches!(family_index(&masses[..4]), Err(Error::IndeterminateIndex(_))));
    }

    #[test]
    fn laplace_exponent_values() {
        assert_relative_eq!(delta1().laplace_exponent(1.0).unwrap(), 2.0 - (-1.0f64).exp(), max_relative = 1e-14);
        assert_eq!(delta1().laplace_exponent(0.0).unwrap(), 0.0);
        let s = LevyModel::stable(1.0, 1.0, 0.5).unwrap();
        for lam in [0.1f64, 1.0, 7.0] {
            let expect = lam + std::f64::consts::PI.sqrt() * lam.sqrt();
            assert_relative_eq!(s.laplace_exponent(lam).unwrap(), expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn stable_exponent_matches_quadrature_oracle() {
        // λ∫e^{-λx} C x^{-α} dx with x = t², GL on [0, T] plus a negligible tail
        let (c, alpha, lam) = (1.0, 0.5, 2.0);
        let rule = crate::special::gauss_legendre(60);
        let mut acc = 0.0;
        let edges = [0.0, 1.0, 2.0, 4.0, 8.0];
        for w in edges.windows(2) {
            acc += crate::special::gl_integrate(&rule, w[0], w[1], |t| {
                2.0 * t * c * (t * t).powf(-alpha) * (-lam * t * t).exp()
            });
        }
        let m = LevyModel::stable(1.0, c, alpha).unwrap();
        assert_relative_eq!(m.laplace_exponent(lam).unwrap(), lam + lam * acc, max_relative = 1e-8);
    }

    #[test]
    fn means() {
        assert_eq!(delta1().mean(), Mean::Finite(2.0));
        assert_eq!(LevyModel::pure_drift(2.0).unwrap().mean(), Mean::Finite(2.0));
        assert_eq!(LevyModel::stable(1.0, 1.0, 0.5).unwrap().mean(), Mean::Infinite);
        // tempered: δ + C Γ(1-α) b^{α-1}; b = 1, α = 0.5 gives 1 + √π
        let t = LevyModel::tempered(1.0, 1.0, 0.5, 1.0).unwrap();
        assert_relative_eq!(t.mean().finite().unwrap(), 1.0 + std::f64::consts::PI.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn tail_laplace_closed_forms() {
        let m = delta1();
        let v = m.tail_laplace(Complex64::new(1.0, 0.0)).unwrap();
        assert_relative_eq!(v.re, 1.0 - (-1.0f64).exp(), max_relative = 1e-14);
        let s = LevyModel::stable(1.0, 1.0, 0.5).unwrap();
        let v = s.tail_laplace(Complex64::new(1.0, 0.0)).unwrap();
        assert_relative_eq!(v.re, std::f64::consts::PI.sqrt(), max_relative = 1e-13);
        assert!(matches!(m.with_q(1.0).unwrap().tail_laplace(Complex64::new(0.0, 0.0)), Err(Error::Pole)));
        let big = m.tail_laplace(Complex64::new(1e6, 0.0)).unwrap();
        assert!(big.norm() < 1e-5);
    }

    #[test]
    fn kernel_moments_match_quadrature() {
        let m = LevyModel::new(
            1.3,
            0.4,
            AtomicPart::new(&[(0.3, 0.5), (1.1, 2.0)]).unwrap(),
            AcTail::Tempered { c: 0.7, alpha: 0.35, b: 0.8 },
        )
        .unwrap();
        let rule = crate::special::gauss_legendre(40);
        let y = 1.7;
        // AC part: t = u^{1/(1-α)} removes the power singularity; the rest is piecewise constant
        let mut k0 = 0.0;
        let mut k1 = 0.0;
        let p = 1.0 / (1.0 - 0.35);
        let ac = *m.ac();
        let edges = [0.0f64, 0.3, 1.1, y];
        for w in edges.windows(2) {
            let (ua, ub) = (w[0].powf(1.0 / p), w[1].powf(1.0 / p));
            k0 += crate::special::gl_integrate(&rule, ua, ub, |u| ac.tail(u.powf(p)) * p * u.powf(p - 1.0));
            k1 += crate::special::gl_integrate(&rule, ua, ub, |u| {
                let t = u.powf(p);
                t * ac.tail(t) * p * u.powf(p - 1.0)
            });
            let rest = |t: f64| m.kernel(t, Side::Left) - ac.tail(t);
            k0 += crate::special::gl_integrate(&rule, w[0], w[1], rest);
            k1 += crate::special::gl_integrate(&rule, w[0], w[1], |t| t * rest(t));
        }
        assert_relative_eq!(m.kernel_integral(y), k0, max_relative = 1e-10);
        assert_relative_eq!(m.kernel_first_moment(y), k1, max_relative = 1e-10);
    }

    #[test]
    fn json_round_trip_and_hash() {
        let text = r#"{"drift": 1.5, "q": 0.25, "atoms": [{"x": "7/10", "mass": 1.0}, {"x": 0.5, "mass": 2}],
            "ac": {"kind": "tempered", "C": 0.3, "alpha": 0.4, "b": 2}}"#;
        let m = LevyModel::from_json(text).unwrap();
        assert_eq!(m.atomic_part().atoms()[1].exact, Some(Rational::new(7, 10)));
        let back = serde_json::to_string(&m.to_spec()).unwrap();
        let m2 = LevyModel::from_json(&back).unwrap();
        assert_eq!(m, m2);
        assert_eq!(m.hash(), m2.hash());
        assert_ne!(m.hash(), m.with_q(0.5).unwrap().hash());
    }

    #[test]
    fn family_cap_enters_hash() {
        let masses: Vec<f64> = (1..=20).map(|j| (j as f64).powi(-2)).collect();
        let mk = |cap: usize| {
            let spec = serde_json::json!({"drift": 1.0, "atom_family": {"kind": "reciprocal-integers", "masses": masses, "cap": cap}});
            LevyModel::from_json(&spec.to_string()).unwrap()
        };
        let (a, b) = (mk(10), mk(12));
        assert_eq!(a.atomic_part().len(), 10);
        assert!(a.atomic_part().family().unwrap().truncated_mass > 0.0);
        assert_ne!(a.hash(), b.hash());
        let back = LevyModel::from_json(&serde_json::to_string(&a.to_spec()).unwrap()).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn validation_names_invariants() {
        let err = LevyModel::from_json(r#"{"drift": 0, "atoms": []}"#).unwrap_err();
        match err {
            Error::InvalidModel(v) => assert_eq!(v[0], Violation::new("/drift", "drift > 0")),
            e => panic!("unexpected {e:?}"),
        }
        let err = LevyModel::from_json(r#"{"drift": 1, "ac": {"kind": "stable", "C": 1, "alpha": 1.2}}"#).unwrap_err();
        match err {
            Error::InvalidModel(v) => assert_eq!(v[0].invariant, "alpha ∈ (0,1)"),
            e => panic!("unexpected {e:?}"),
        }
        let err = LevyModel::from_json(r#"{"drift": 1, "atoms": [{"x": 1, "mass": 1}, {"x": "1/1", "mass": 2}]}"#).unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
        assert!(matches!(LevyModel::from_json("{"), Err(Error::Parse(_))));
    }

    #[test]
    fn rational_parsing() {
        assert_eq!(parse_rational("7/10"), Some(Rational::new(7, 10)));
        assert_eq!(parse_rational("0.7"), Some(Rational::new(7, 10)));
        assert_eq!(parse_rational("3"), Some(Rational::new(3, 1)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("abc"), None);
    }

    fn arb_model() -> impl Strategy<Value = LevyModel> {
        (
            0.5f64..4.0,
            prop::collection::btree_map(1u32..400, 0.1f64..3.0, 0..5),
            prop::option::of((0.1f64..2.0, 0.05f64..0.95)),
        )
            .prop_map(|(d, atoms, ac)| {
                let pairs: Vec<(f64, f64)> = atoms.into_iter().map(|(k, m)| (k as f64 / 100.0, m)).collect();
                let ac = match ac {
                    Some((c, alpha)) => AcTail::Stable { c, alpha },
                    None => AcTail::None,
                };
                LevyModel::new(d, 0.0, AtomicPart::new(&pairs).unwrap(), ac).unwrap()
            })
    }

    proptest! {
        #[test]
        fn tail_is_nonincreasing(m in arb_model(), a in 0.001f64..5.0, b in 0.001f64..5.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(m.tail(lo, Side::Left).as_f64() >= m.tail(hi, Side::Left).as_f64());
            prop_assert!(m.tail(lo, Side::Right).as_f64() >= m.tail(hi, Side::Right).as_f64());
        }

        #[test]
        fn one_sided_gap_is_the_atom_mass(m in arb_model(), y in 0.001f64..5.0) {
            for a in m.atomic_part().atoms() {
                let gap = m.tail(a.x, Side::Left).as_f64() - m.tail(a.x, Side::Right).as_f64();
                prop_assert!((gap - a.mass).abs() <= 1e-12 * (1.0 + m.tail(a.x, Side::Left).as_f64()));
            }
            let gap = m.tail(y, Side::Left).as_f64() - m.tail(y, Side::Right).as_f64();
            prop_assert!((gap - m.atomic_part().mass_at(y)).abs() < 1e-12);
        }

        #[test]
        fn exponent_is_concave_plus_linear(m in arb_model(), l1 in 0.01f64..20.0, l2 in 0.01f64..20.0) {
            let (lo, hi) = if l1 < l2 { (l1, l2) } else { (l2, l1) };
            let (p_lo, p_hi) = (m.laplace_exponent(lo).unwrap(), m.laplace_exponent(hi).unwrap());
            prop_assert!(p_hi >= p_lo - 1e-12);
            prop_assert!(p_hi / hi <= p_lo / lo + 1e-12);
            prop_assert!(p_lo >= m.drift() * lo);
            if !m.is_pure_drift() {
                prop_assert!(p_lo > m.drift() * lo);
            }
        }

        #[test]
        fn atoms_do_not_change_ac_index(m in arb_model()) {
            let ac_only = LevyModel::new(m.drift(), 0.0, AtomicPart::empty(), *m.ac()).unwrap();
            prop_assert_eq!(m.bg_index().unwrap(), ac_only.bg_index().unwrap());
        }
    }
}
