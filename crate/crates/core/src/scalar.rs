//! Scalar abstractions.
//!
//! Numerical code (tensors, autodiff, losses, model forward passes, bound
//! formulas) is written against [`Scalar`], implemented for `f32` and `f64`.
//! Metric bookkeeping that has to reproduce published two-decimal tables is
//! written against [`Exact`], which additionally admits rational numbers so
//! that sums like `(0.97 + 1.09 + 0.52) / 4` round the way a person would.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Signed, ToPrimitive};

use crate::error::{invalid, Result};

/// Floating-point scalar used by the differentiable core.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + Sum + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite literal")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Signed field used for metric arithmetic: floats or exact rationals.
pub trait Exact: Signed + FromPrimitive + PartialOrd + Clone + Debug {}

impl<T> Exact for T where T: Signed + FromPrimitive + PartialOrd + Clone + Debug {}

/// Exact rational used to reproduce two-decimal tables.
pub type Rational = Ratio<i64>;

/// Parses a decimal literal such as `"-12.60"` into an exact rational.
pub fn decimal(text: &str) -> Result<Rational> {
    let t = text.trim();
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    let (int_part, frac_part) = body.split_once('.').unwrap_or((body, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(invalid(format!("not a decimal: {text:?}")));
    }
    let digits = format!("{int_part}{frac_part}");
    if !digits.chars().all(|c| c.is_ascii_digit()) {
        return Err(invalid(format!("not a decimal: {text:?}")));
    }
    let numer: i64 = digits
        .parse()
        .map_err(|_| invalid(format!("decimal out of range: {text:?}")))?;
    let denom = 10i64
        .checked_pow(frac_part.len() as u32)
        .ok_or_else(|| invalid(format!("too many decimals: {text:?}")))?;
    let r = Ratio::new(numer, denom);
    Ok(if neg { -r } else { r })
}

/// Formats a rational at `places` decimals, rounding half away from zero.
pub fn format_rounded(value: &Rational, places: u32) -> String {
    let scale = 10i64.pow(places);
    let scaled = value * Ratio::from_integer(scale);
    let rounded = scaled.round().to_integer();
    let sign = if rounded < 0 { "-" } else { "" };
    let abs = rounded.abs();
    if places == 0 {
        return format!("{sign}{abs}");
    }
    format!("{sign}{}.{:0width$}", abs / scale, abs % scale, width = places as usize)
}
