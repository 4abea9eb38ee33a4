use crate::{Failure, Spacing};

/// Parses `min:max:steps`, a comma-separated list, or a single number.
pub fn parse_points(spec: &str, spacing: Spacing) -> Result<Vec<f64>, Failure> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Failure::usage(format!("invalid number '{s}' in --x")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.len() {
        1 => spec.split(',').map(num).collect(),
        3 => {
            let (lo, hi) = (num(parts[0])?, num(parts[1])?);
            let steps: usize = parts[2]
                .trim()
                .parse()
                .map_err(|_| Failure::usage(format!("invalid step count '{}'", parts[2])))?;
            range(lo, hi, steps, spacing)
        }
        _ => Err(Failure::usage(format!("--x must be min:max:steps or a list, got '{spec}'"))),
    }
}

pub fn range(lo: f64, hi: f64, steps: usize, spacing: Spacing) -> Result<Vec<f64>, Failure> {
    if steps < 2 {
        return Err(Failure::usage("steps must be >= 2"));
    }
    if !(hi > lo) {
        return Err(Failure::usage("range needs min < max"));
    }
    let last = (steps - 1) as f64;
    let xs = match spacing {
        Spacing::Linear => (0..steps).map(|i| lo + (hi - lo) * i as f64 / last).collect(),
        Spacing::Geometric => {
            if !(lo > 0.0) {
                return Err(Failure::usage("geometric spacing needs min > 0"));
            }
            let r = (hi / lo).ln();
            (0..steps).map(|i| lo * (r * i as f64 / last).exp()).collect()
        }
    };
    Ok(xs)
}
