//! Multiple-precision scalars and unit-circle geometry.
//!
//! Every real number in the laboratory is a [`Real`] (an MPFR float with
//! round-to-nearest-even). A [`PrecisionContext`] fixes the significand
//! width; all scalars that meet in one computation must carry that width.
//! The circle is `R/Z`, normalized to total length 1.

use std::cmp::Ordering;
use std::fmt;

use rug::float::Constant;
use rug::{Assign, Float};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiple-precision real scalar.
pub type Real = Float;

/// Significand precision shared by every scalar of one computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrecisionContext {
    bits: u32,
}

impl Default for PrecisionContext {
    fn default() -> Self {
        Self {
            bits: Self::DEFAULT_BITS,
        }
    }
}

impl PrecisionContext {
    pub const MIN_BITS: u32 = 64;
    pub const DEFAULT_BITS: u32 = 256;

    pub fn new(bits: u32) -> Result<Self> {
        if bits < Self::MIN_BITS {
            return Err(Error::PrecisionTooLow {
                bits,
                min: Self::MIN_BITS,
            });
        }
        Ok(Self { bits })
    }

    /// Precision for experiments reaching partition level `n_max`:
    /// `max(256, 64 + 24 n_max)` bits.
    pub fn for_depth(n_max: usize) -> Self {
        let wanted = 64usize.saturating_add(24usize.saturating_mul(n_max));
        let bits = wanted.clamp(Self::DEFAULT_BITS as usize, u32::MAX as usize) as u32;
        Self { bits }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn doubled(&self) -> Self {
        Self {
            bits: self.bits.saturating_mul(2),
        }
    }

    pub fn real<T>(&self, value: T) -> Real
    where
        Real: Assign<T>,
    {
        Float::with_val(self.bits, value)
    }

    pub fn zero(&self) -> Real {
        Float::new(self.bits)
    }

    pub fn one(&self) -> Real {
        self.real(1)
    }

    pub fn pi(&self) -> Real {
        self.real(Constant::Pi)
    }

    /// `2^-k` at this precision.
    pub fn pow2_neg(&self, k: u32) -> Real {
        self.one() >> k
    }

    /// Tolerance `2^-(bits - guard)`.
    pub fn tolerance(&self, guard: u32) -> Real {
        self.pow2_neg(self.bits.saturating_sub(guard))
    }

    /// Rounds (or widens) an arbitrary scalar to this precision.
    pub fn convert(&self, x: &Real) -> Real {
        Float::with_val(self.bits, x)
    }

    pub fn check(&self, x: &Real) -> Result<()> {
        if x.prec() != self.bits {
            return Err(Error::MixedPrecision {
                expected: self.bits,
                found: x.prec(),
            });
        }
        Ok(())
    }

    /// Parses a decimal literal, optionally tagged `@bits`. A tag must match
    /// this context; untagged literals are rounded to it.
    pub fn parse(&self, text: &str) -> Result<Real> {
        let (value, tag) = parse_tagged(text, Some(self.bits))?;
        if let Some(bits) = tag {
            if bits != self.bits {
                return Err(Error::MixedPrecision {
                    expected: self.bits,
                    found: bits,
                });
            }
        }
        Ok(value)
    }
}

/// Parses the decimal body at `bits` and returns it with the optional tag.
fn parse_tagged(text: &str, bits: Option<u32>) -> Result<(Real, Option<u32>)> {
    let text = text.trim();
    let (body, tag) = match text.split_once('@') {
        Some((body, tag)) => {
            let bits = tag
                .trim()
                .parse::<u32>()
                .map_err(|_| Error::ParseScalar(text.to_string()))?;
            (body.trim(), Some(bits))
        }
        None => (text, None),
    };
    let parsed = Float::parse(body).map_err(|_| Error::ParseScalar(text.to_string()))?;
    let bits = bits.or(tag).unwrap_or(PrecisionContext::DEFAULT_BITS);
    Ok((Float::with_val(bits, parsed), tag))
}

/// Parses `value@bits` into a scalar of exactly that precision.
pub fn parse_scalar(text: &str) -> Result<Real> {
    let (_, tag) = parse_tagged(text, Some(PrecisionContext::MIN_BITS))?;
    let bits = tag.ok_or_else(|| Error::ParseScalar(format!("{text} (missing @bits tag)")))?;
    PrecisionContext::new(bits)?;
    Ok(parse_tagged(text, Some(bits))?.0)
}

/// Decimal rendering with an explicit precision tag, e.g.
/// `0.61803398874989484820…@256`. Enough digits are emitted to round-trip.
pub fn format_scalar(x: &Real) -> String {
    format!("{}@{}", decimal_string(x), x.prec())
}

/// Round-trippable decimal string without the precision tag.
pub fn decimal_string(x: &Real) -> String {
    if x.is_zero() {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let digits = (f64::from(x.prec()) * std::f64::consts::LOG10_2).ceil() as usize + 1;
    let (negative, mantissa, exp) = x.to_sign_string_exp(10, Some(digits));
    let exp = exp.unwrap_or(0);
    let mantissa = mantissa.trim_end_matches('0');
    let sign = if negative { "-" } else { "" };
    // value = 0.mantissa * 10^exp
    if (-20..=20).contains(&exp) {
        let body = if exp <= 0 {
            format!("0.{}{}", "0".repeat((-exp) as usize), mantissa)
        } else {
            let e = exp as usize;
            if mantissa.len() <= e {
                format!("{}{}", mantissa, "0".repeat(e - mantissa.len()))
            } else {
                format!("{}.{}", &mantissa[..e], &mantissa[e..])
            }
        };
        format!("{sign}{body}")
    } else {
        let (head, tail) = mantissa.split_at(1);
        let tail = if tail.is_empty() { "0" } else { tail };
        format!("{sign}{head}.{tail}e{}", exp - 1)
    }
}

/// A point of `R/Z`, stored as its representative in `[0, 1)`.
#[derive(Clone, Debug, PartialEq, PartialOrd)]
pub struct CirclePoint(Real);

impl CirclePoint {
    pub fn value(&self) -> &Real {
        &self.0
    }

    pub fn into_inner(self) -> Real {
        self.0
    }

    pub fn prec(&self) -> u32 {
        self.0.prec()
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64()
    }
}

impl fmt::Display for CirclePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_scalar(&self.0))
    }
}

/// `x - floor(x)`, computed at the precision of `x`.
pub fn reduce_mod1(x: &Real) -> Result<CirclePoint> {
    if !x.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(CirclePoint(frac(x)))
}

pub(crate) fn frac(x: &Real) -> Real {
    let floor = Float::with_val(x.prec(), x.floor_ref());
    let mut r = Float::with_val(x.prec(), x - &floor);
    // -tiny + 1 can round up to 1.
    if r >= 1 {
        r.assign(0);
    }
    r
}

/// Standard distance on the unit-length circle, in `[0, 1/2]`.
pub fn circle_distance(a: &CirclePoint, b: &CirclePoint) -> Real {
    let prec = a.prec().max(b.prec());
    let d = Float::with_val(prec, &a.0 - &b.0).abs();
    let other = Float::with_val(prec, 1 - &d);
    if other < d {
        other
    } else {
        d
    }
}

/// Length of the positively oriented arc from `from` to `to`, in `[0, 1)`.
pub fn forward_distance(from: &Real, to: &Real) -> Real {
    let prec = from.prec().max(to.prec());
    frac(&Float::with_val(prec, to - from))
}

/// Positively oriented arc `[left, left + length]`. Lengths of 1 or more
/// describe arcs that wind around the circle.
#[derive(Clone, Debug, PartialEq)]
pub struct CircleInterval {
    left: CirclePoint,
    length: Real,
}

impl CircleInterval {
    pub fn new(left: CirclePoint, length: Real) -> Result<Self> {
        if !length.is_finite() || length <= 0 {
            return Err(Error::InvalidInterval(format!(
                "length must be positive, got {}",
                decimal_string(&length)
            )));
        }
        Ok(Self { left, length })
    }

    /// Arc from `left` forward to `right` (both reduced mod 1).
    pub fn between(left: &Real, right: &Real) -> Result<Self> {
        let l = reduce_mod1(left)?;
        let len = forward_distance(left, right);
        Self::new(l, len)
    }

    pub fn left(&self) -> &CirclePoint {
        &self.left
    }

    pub fn length(&self) -> &Real {
        &self.length
    }

    pub fn right(&self) -> CirclePoint {
        CirclePoint(frac(&Float::with_val(
            self.left.prec(),
            self.left.value() + &self.length,
        )))
    }

    /// Offset of `x` from the left endpoint along the positive direction.
    pub fn offset_of(&self, x: &Real) -> Real {
        forward_distance(self.left.value(), x)
    }

    /// Closed containment of a point (arcs shorter than the circle).
    pub fn contains(&self, x: &Real) -> bool {
        self.length >= 1 || self.offset_of(x) <= self.length
    }

    /// Open containment: `x` strictly inside the arc.
    pub fn contains_interior(&self, x: &Real) -> bool {
        if self.length >= 1 {
            return true;
        }
        let o = self.offset_of(x);
        o > 0 && o < self.length
    }

    /// Closed containment of another arc.
    pub fn contains_interval(&self, other: &CircleInterval) -> bool {
        if self.length >= 1 {
            return true;
        }
        let start = self.offset_of(other.left.value());
        let end = Float::with_val(self.length.prec(), &start + &other.length);
        end <= self.length
    }

    /// Same arc translated by `delta`.
    pub fn shifted(&self, delta: &Real) -> Result<Self> {
        let left = reduce_mod1(&Float::with_val(
            self.left.prec(),
            self.left.value() + delta,
        ))?;
        Self::new(left, self.length.clone())
    }
}

/// Total order on circle coordinates that treats `[0,1)` as a line.
pub(crate) fn cmp_real(a: &Real, b: &Real) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> PrecisionContext {
        PrecisionContext::default()
    }

    #[test]
    fn precision_floor() {
        assert!(PrecisionContext::new(63).is_err());
        assert_eq!(PrecisionContext::new(64).unwrap().bits(), 64);
        assert_eq!(PrecisionContext::for_depth(3).bits(), 256);
        assert_eq!(PrecisionContext::for_depth(14).bits(), 400);
    }

    #[test]
    fn mod1_examples() {
        let c = ctx();
        assert_eq!(*reduce_mod1(&c.real(1.25)).unwrap().value(), 0.25);
        assert_eq!(*reduce_mod1(&c.real(-0.25)).unwrap().value(), 0.75);
        assert_eq!(*reduce_mod1(&c.real(3.0)).unwrap().value(), 0.0);
        let tiny_neg = -c.pow2_neg(300);
        let r = reduce_mod1(&tiny_neg).unwrap();
        assert!(*r.value() >= 0 && *r.value() < 1);
    }

    #[test]
    fn mod1_rejects_non_finite() {
        let c = ctx();
        let inf = c.real(rug::float::Special::Infinity);
        assert!(matches!(reduce_mod1(&inf), Err(Error::NonFinite)));
        let nan = c.real(rug::float::Special::Nan);
        assert!(reduce_mod1(&nan).is_err());
    }

    #[test]
    fn distance_examples() {
        let c = ctx();
        let p = |v: f64| reduce_mod1(&c.real(v)).unwrap();
        let d = circle_distance(&p(0.1), &p(0.9));
        assert!((d.to_f64() - 0.2).abs() < 1e-15);
        assert_eq!(circle_distance(&p(0.3), &p(0.3)), 0);
        assert_eq!(circle_distance(&p(0.0), &p(0.5)), 0.5);
    }

    #[test]
    fn mixed_precision_is_rejected() {
        let c = ctx();
        let x = Float::with_val(128, 1);
        assert!(matches!(c.check(&x), Err(Error::MixedPrecision { .. })));
        assert!(c.check(&c.real(1)).is_ok());
    }

    #[test]
    fn scalar_text_format() {
        let c = ctx();
        let g = (c.real(5).sqrt() - 1u32) / 2u32;
        let s = format_scalar(&g);
        assert!(s.starts_with("0.61803398874989484820"), "{s}");
        assert!(s.ends_with("@256"));
        assert_eq!(parse_scalar(&s).unwrap(), g);
        assert!(c.parse("0.5@128").is_err());
        assert_eq!(c.parse("0.5@256").unwrap(), 0.5);
        assert_eq!(c.parse("0.5").unwrap(), 0.5);
        assert!(parse_scalar("0.5").is_err());
        let big = c.real(3) << 80u32;
        assert_eq!(parse_scalar(&format_scalar(&big)).unwrap(), big);
        assert_eq!(format_scalar(&c.real(-2)), "-2@256");
    }

    #[test]
    fn interval_containment() {
        let c = ctx();
        let left = reduce_mod1(&c.real(0.9)).unwrap();
        let arc = CircleInterval::new(left, c.real(0.2)).unwrap();
        assert!(arc.contains(&c.real(0.05)));
        assert!(arc.contains(&c.real(0.9)));
        assert!(!arc.contains_interior(&c.real(0.9)));
        assert!(!arc.contains(&c.real(0.5)));
        assert!((arc.right().to_f64() - 0.1).abs() < 1e-15);
        let inner = CircleInterval::between(&c.real(0.95), &c.real(0.02)).unwrap();
        assert!(arc.contains_interval(&inner));
        assert!(!inner.contains_interval(&arc));
        assert!(CircleInterval::new(reduce_mod1(&c.real(0)).unwrap(), c.zero()).is_err());
    }
}
