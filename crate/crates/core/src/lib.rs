// NaN-rejecting guards are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod conv;
pub mod density;
pub mod error;
pub mod inversion;
pub mod levy;
pub mod mc;
pub mod series;
pub mod smoothness;
pub mod special;
pub mod volterra;

pub use error::{Error, Result};
pub use levy::{AcTail, AtomicPart, LevyModel, Mean, Side, TailValue};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SUBPOT_THREADS";

/// Runs `f` on a thread pool sized by `SUBPOT_THREADS` (the global pool when unset).
pub fn run_in_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0);
    match threads.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok()) {
        Some(pool) => pool.install(f),
        None => f(),
    }
}

/// C-style `%.12e` formatting, e.g. `1.234567890123e-01`.
pub fn fmt_e(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let s = format!("{x:.12e}");
    let (mant, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mant}e{sign}{:02}", exp.abs())
}
