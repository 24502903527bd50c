//! Decimal integerization of transform coefficients.
//!
//! A block's coefficients are scaled by `10^d` and rounded half away from
//! zero. `d` is picked from the largest coefficient magnitude so that it
//! keeps the requested number of significant figures:
//! `d = clamp(s - floor(log10(max|y|) + 1e-4), -6, 12)`, with all-zero blocks
//! pinned to `d = 12`.
//!
//! Hidden bits live in the magnitude of each integer (sign-magnitude), so
//! their meaning does not depend on integer width.

use crate::error::{Error, Result};

pub const EXPONENT_MIN: i32 = -6;
pub const EXPONENT_MAX: i32 = 12;
pub const EXPONENT_GUARD: f64 = 1e-4;
pub const DEFAULT_SIG_FIGS: u32 = 5;
pub const MAX_SIG_FIGS: u32 = 12;
pub const MAX_STABILIZE_ITERATIONS: usize = 4;

/// Largest magnitude whose integer part is exactly representable in f64.
const EXACT_INT_LIMIT: f64 = 9_007_199_254_740_992.0;

pub fn select_exponent(coeffs: &[f64], sig_figs: u32) -> Result<i32> {
    let mut max_abs = 0.0f64;
    for &c in coeffs {
        if !c.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite coefficient {c}")));
        }
        max_abs = max_abs.max(c.abs());
    }
    if max_abs == 0.0 {
        return Ok(EXPONENT_MAX);
    }
    let order = (max_abs.log10() + EXPONENT_GUARD).floor() as i32;
    Ok((sig_figs as i32 - order).clamp(EXPONENT_MIN, EXPONENT_MAX))
}

fn pow10(exp: i32) -> f64 {
    10f64.powi(exp.abs())
}

/// Scaled-integer form of one transform block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntCoeffBlock {
    pub ints: Vec<i64>,
    pub exponent: i32,
}

pub fn integerize(coeffs: &[f64], exponent: i32) -> Result<IntCoeffBlock> {
    if !(EXPONENT_MIN..=EXPONENT_MAX).contains(&exponent) {
        return Err(Error::InvalidArgument(format!(
            "exponent {exponent} outside [{EXPONENT_MIN}, {EXPONENT_MAX}]"
        )));
    }
    let scale = pow10(exponent);
    let ints = coeffs
        .iter()
        .map(|&y| {
            let scaled = if exponent >= 0 { y * scale } else { y / scale };
            let r = scaled.round();
            if !r.is_finite() || r.abs() >= EXACT_INT_LIMIT {
                return Err(Error::Overflow { value: y, exponent });
            }
            Ok(r as i64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IntCoeffBlock { ints, exponent })
}

pub fn deintegerize(block: &IntCoeffBlock) -> Vec<f64> {
    let scale = pow10(block.exponent);
    block
        .ints
        .iter()
        .map(|&v| {
            if block.exponent >= 0 {
                v as f64 / scale
            } else {
                v as f64 * scale
            }
        })
        .collect()
}

/// Bit `bit` of `|v|`.
pub fn magnitude_bit(v: i64, bit: u32) -> bool {
    (v.unsigned_abs() >> bit) & 1 == 1
}

/// `v` with bit `bit` of its magnitude forced to `set`; the sign is kept
/// (zero counts as positive).
pub fn with_magnitude_bit(v: i64, bit: u32, set: bool) -> i64 {
    let mag = v.unsigned_abs();
    let mag = if set { mag | (1 << bit) } else { mag & !(1 << bit) };
    let mag = mag as i64;
    if v < 0 {
        -mag
    } else {
        mag
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stabilized {
    pub block: IntCoeffBlock,
    pub iterations: usize,
}

/// Integerizes `coeffs`, applies `hide`, and repeats with the exponent the
/// hidden block would select until the two agree. A verifier recomputing the
/// exponent from the watermarked coefficients then lands on the same `d`.
pub fn stabilize_exponent<F>(coeffs: &[f64], sig_figs: u32, initial_exponent: i32, hide: F) -> Result<Stabilized>
where
    F: Fn(&mut [i64]),
{
    let mut exponent = initial_exponent;
    for iteration in 1..=MAX_STABILIZE_ITERATIONS {
        let mut block = integerize(coeffs, exponent)?;
        hide(&mut block.ints);
        let reselected = select_exponent(&deintegerize(&block), sig_figs)?;
        if reselected == exponent {
            return Ok(Stabilized {
                block,
                iterations: iteration,
            });
        }
        exponent = reselected;
    }
    Err(Error::NonConvergent {
        iterations: MAX_STABILIZE_ITERATIONS,
        last: exponent,
    })
}
