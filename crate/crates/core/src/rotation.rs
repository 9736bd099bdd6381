//! Combinatorial comparison against a target rotation number and tuning of
//! the offset `a` by bisection.
//!
//! The comparator looks at the closest-return signs
//! `s_n = sign(F^{q_n}(x) - x - p_n)` at the base point. For an irrational
//! target these alternate `+, -, +, ...`; the first deviation tells on which
//! side of the target the map's rotation number lies. Within a monotone
//! family `F_a = a + G` the verdict is monotone in `a`.

use rug::Float;
use serde::{Deserialize, Serialize};

use crate::arithmetic::{convergents, ContinuedFraction, ConvergentTable};
use crate::circlemap::TrigProductMap;
use crate::error::{Error, Result};
use crate::numerics::{decimal_string, format_scalar, CirclePoint, PrecisionContext, Real};

/// Outcome of a combinatorial comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// Rotation number below the target; first detected at level `n`.
    TooSmall(usize),
    /// Rotation number above the target; first detected at level `n`.
    TooLarge(usize),
    /// Closest-return signs agree with the target for `n = 0..=depth`.
    ConsistentTo(usize),
}

impl Verdict {
    /// Deepest level whose sign agrees with the target.
    pub fn agreeing_depth(self) -> Option<usize> {
        match self {
            Verdict::ConsistentTo(d) => Some(d),
            Verdict::TooSmall(n) | Verdict::TooLarge(n) => n.checked_sub(1),
        }
    }
}

/// Target combinatorics plus the point whose orbit is inspected.
#[derive(Clone, Debug)]
pub struct CombinatorialComparator {
    table: ConvergentTable,
    base_point: Option<CirclePoint>,
}

impl CombinatorialComparator {
    pub fn new(target: &ContinuedFraction) -> Result<Self> {
        let table = convergents(target)?;
        if table.depth() < 1 {
            return Err(Error::Precondition("target depth must be >= 1".into()));
        }
        Ok(Self {
            table,
            base_point: None,
        })
    }

    /// Overrides the default base point (`c_0`, or 0 for rotations).
    pub fn with_base_point(mut self, base: CirclePoint) -> Self {
        self.base_point = Some(base);
        self
    }

    pub fn table(&self) -> &ConvergentTable {
        &self.table
    }

    /// Signs `s_0..s_depth` at the base point, in order, stopping at the
    /// first disagreement.
    pub fn compare(&self, map: &TrigProductMap, depth: usize) -> Result<Verdict> {
        if depth > self.table.depth() {
            return Err(Error::Precondition(format!(
                "comparison depth {depth} exceeds target depth {}",
                self.table.depth()
            )));
        }
        let ctx = map.ctx();
        let prec = ctx.bits();
        let base = self.base_point.clone().unwrap_or_else(|| map.base_point());
        let x0 = ctx.convert(base.value());
        let mut x = x0.clone();
        let mut k = 0usize;
        for n in 0..=depth {
            let q = self.table.return_time(n)?;
            while k < q {
                x = map.eval_lift(&x);
                k += 1;
            }
            let s = Float::with_val(prec, &x - &x0) - self.table.p(n);
            if !s.is_zero() {
                let scale = Float::with_val(prec, x.abs_ref()).max(&ctx.one());
                let floor = ctx.tolerance(32) * scale;
                if Float::with_val(prec, s.abs_ref()) <= floor {
                    return Err(Error::PrecisionExhausted(format!(
                        "|F^q_{n}(x) - x - p_{n}| = {} is below the noise floor",
                        decimal_string(&s)
                    )));
                }
            }
            // s = 0 means a periodic orbit through the base point; it is
            // classified on the violating side so bisection keeps shrinking.
            if n % 2 == 0 && s <= 0 {
                return Ok(Verdict::TooSmall(n));
            }
            if n % 2 == 1 && s >= 0 {
                return Ok(Verdict::TooLarge(n));
            }
        }
        Ok(Verdict::ConsistentTo(depth))
    }
}

/// `compare` with the default base point.
pub fn compare(map: &TrigProductMap, target: &ContinuedFraction, depth: usize) -> Result<Verdict> {
    CombinatorialComparator::new(target)?.compare(map, depth)
}

/// Result of tuning `a` to a target rotation number.
#[derive(Clone, Debug, PartialEq)]
pub struct TuneResult {
    pub a_star: Real,
    /// Largest `n` whose closest-return sign at `a_star` matches the target.
    pub verified_depth: usize,
    pub bracket_width: Real,
    pub lo: Real,
    pub hi: Real,
    pub iterations: usize,
    /// Deepest level consulted to steer the bisection.
    pub search_depth: usize,
    pub target: ContinuedFraction,
}

#[derive(Serialize, Deserialize)]
struct TuneResultJson {
    a_star: String,
    verified_depth: usize,
    bracket_width: String,
    lo: String,
    hi: String,
    iterations: usize,
    search_depth: usize,
    target: ContinuedFraction,
}

impl TuneResult {
    pub fn to_json(&self) -> String {
        let j = TuneResultJson {
            a_star: format_scalar(&self.a_star),
            verified_depth: self.verified_depth,
            bracket_width: format_scalar(&self.bracket_width),
            lo: format_scalar(&self.lo),
            hi: format_scalar(&self.hi),
            iterations: self.iterations,
            search_depth: self.search_depth,
            target: self.target.clone(),
        };
        serde_json::to_string_pretty(&j).expect("plain data serializes")
    }

    pub fn from_json(ctx: &PrecisionContext, text: &str) -> Result<Self> {
        let j: TuneResultJson = serde_json::from_str(text)?;
        Ok(Self {
            a_star: ctx.parse(&j.a_star)?,
            verified_depth: j.verified_depth,
            bracket_width: ctx.parse(&j.bracket_width)?,
            lo: ctx.parse(&j.lo)?,
            hi: ctx.parse(&j.hi)?,
            iterations: j.iterations,
            search_depth: j.search_depth,
            target: j.target,
        })
    }
}

/// Bisects `a` in `[0, 1]` until the bracket is at most
/// `2^-resolution_bits` and the midpoint is consistent with `target` to
/// `depth`. Shape data of `template` is reused; its offset is ignored.
pub fn tune(
    template: &TrigProductMap,
    target: &ContinuedFraction,
    depth: usize,
    resolution_bits: u32,
) -> Result<TuneResult> {
    let ctx = template.ctx();
    tune_within(template, target, depth, resolution_bits, &ctx.zero(), &ctx.one())
}

/// [`tune`] starting from the bracket `[lo, hi]`.
///
/// When the midpoint agrees with the target to the current search depth,
/// the search depth grows by one (the target must then be extendable); the
/// total number of comparisons is capped at `4 * resolution_bits`.
pub fn tune_within(
    template: &TrigProductMap,
    target: &ContinuedFraction,
    depth: usize,
    resolution_bits: u32,
    lo: &Real,
    hi: &Real,
) -> Result<TuneResult> {
    let ctx = template.ctx();
    if resolution_bits == 0 || resolution_bits + 32 > ctx.bits() {
        return Err(Error::Precondition(format!(
            "resolution of {resolution_bits} bits needs 1..={} at {} bits of precision",
            ctx.bits().saturating_sub(32),
            ctx.bits()
        )));
    }
    if depth == 0 {
        return Err(Error::Precondition("tuning depth must be >= 1".into()));
    }
    ctx.check(lo)?;
    ctx.check(hi)?;
    if lo >= hi {
        return Err(Error::Precondition("empty tuning bracket".into()));
    }
    let resolution = ctx.pow2_neg(resolution_bits);
    let cap = 4 * resolution_bits as usize;
    let prec = ctx.bits();

    let mut lo = lo.clone();
    let mut hi = hi.clone();
    let mut search_depth = depth;
    let mut cf = extend(target, search_depth + 1)?;
    let mut comparator = CombinatorialComparator::new(&cf)?;
    let mut iterations = 0usize;
    let failed = |iterations: usize, reason: String, lo: &Real, hi: &Real| Error::TuningFailed {
        iterations,
        reason,
        lo: format_scalar(lo),
        hi: format_scalar(hi),
    };

    loop {
        let mid = Float::with_val(prec, &lo + &hi) / 2u32;
        let width = Float::with_val(prec, &hi - &lo);
        if iterations >= cap {
            return Err(failed(
                iterations,
                "iteration cap reached".into(),
                &lo,
                &hi,
            ));
        }
        iterations += 1;
        let map = template.with_offset(mid.clone())?;
        match comparator.compare(&map, search_depth)? {
            Verdict::TooSmall(_) => lo = mid,
            Verdict::TooLarge(_) => hi = mid,
            Verdict::ConsistentTo(_) => {
                if width <= resolution {
                    return Ok(TuneResult {
                        a_star: mid,
                        verified_depth: search_depth,
                        bracket_width: width,
                        lo,
                        hi,
                        iterations,
                        search_depth,
                        target: target.clone(),
                    });
                }
                search_depth += 1;
                cf = extend(target, search_depth + 1).map_err(|e| {
                    failed(
                        iterations,
                        format!("bracket still wide and target cannot be deepened: {e}"),
                        &lo,
                        &hi,
                    )
                })?;
                comparator = CombinatorialComparator::new(&cf)?;
            }
        }
    }
}

fn extend(target: &ContinuedFraction, len: usize) -> Result<ContinuedFraction> {
    target.extend_to(len).filter(|cf| cf.len() >= len).ok_or_else(|| {
        Error::Precondition(format!(
            "target has {} partial quotients and cannot be extended to {len}",
            target.len()
        ))
    })
}

/// Birkhoff average `(F^n(x) - x)/n` at the base point. Error is `O(1/n)`.
pub fn rotation_number_estimate(map: &TrigProductMap, iterations: usize) -> Result<Real> {
    if iterations == 0 {
        return Err(Error::Precondition("iterations must be >= 1".into()));
    }
    let ctx = map.ctx();
    let x0 = ctx.convert(map.base_point().value());
    let x = map.iterate_lift(&x0, iterations);
    Ok((x - x0) / iterations as u64)
}
