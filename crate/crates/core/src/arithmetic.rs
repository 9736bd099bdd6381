//! Continued fractions, convergents and return times.
//!
//! Conventions: `rho = [a_0, a_1, ...] = 1/(a_0 + 1/(a_1 + ...))` with
//! `0 < rho < 1`; `p_0 = 0, p_1 = 1, q_0 = 1, q_1 = a_0` and
//! `p_{n+1} = a_n p_n + p_{n-1}`, `q_{n+1} = a_n q_n + q_{n-1}`.

use std::io::Write;

use rug::{Float, Integer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    cmp_real, format_scalar, frac, reduce_mod1, CircleInterval, PrecisionContext, Real,
};

/// Where a list of partial quotients came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CfSource {
    ExplicitList,
    Periodic { head: Vec<u64>, cycle: Vec<u64> },
    FromReal { value: String, requested_depth: usize },
}

/// Finite prefix `a_0, ..., a_{m-1}` of a continued-fraction expansion.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContinuedFraction {
    partial_quotients: Vec<u64>,
    source: CfSource,
}

impl ContinuedFraction {
    pub fn new(partial_quotients: Vec<u64>) -> Result<Self> {
        Self::with_source(partial_quotients, CfSource::ExplicitList)
    }

    fn with_source(partial_quotients: Vec<u64>, source: CfSource) -> Result<Self> {
        if partial_quotients.is_empty() {
            return Err(Error::InvalidContinuedFraction(
                "no partial quotients".into(),
            ));
        }
        if let Some(i) = partial_quotients.iter().position(|&a| a == 0) {
            return Err(Error::InvalidContinuedFraction(format!(
                "a_{i} = 0; partial quotients must be positive"
            )));
        }
        Ok(Self {
            partial_quotients,
            source,
        })
    }

    /// `head` followed by `cycle` repeated, truncated to `depth` terms.
    pub fn periodic(head: &[u64], cycle: &[u64], depth: usize) -> Result<Self> {
        if cycle.is_empty() {
            return Err(Error::InvalidContinuedFraction("empty cycle".into()));
        }
        let quotients = head
            .iter()
            .chain(cycle.iter().cycle())
            .take(depth)
            .copied()
            .collect();
        Self::with_source(
            quotients,
            CfSource::Periodic {
                head: head.to_vec(),
                cycle: cycle.to_vec(),
            },
        )
    }

    /// `(sqrt(5) - 1)/2 = [1, 1, 1, ...]`.
    pub fn golden(depth: usize) -> Result<Self> {
        Self::periodic(&[], &[1], depth)
    }

    /// `sqrt(2) - 1 = [2, 2, 2, ...]`.
    pub fn silver(depth: usize) -> Result<Self> {
        Self::periodic(&[], &[2], depth)
    }

    pub fn quotients(&self) -> &[u64] {
        &self.partial_quotients
    }

    pub fn len(&self) -> usize {
        self.partial_quotients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partial_quotients.is_empty()
    }

    pub fn source(&self) -> &CfSource {
        &self.source
    }

    pub fn max_partial_quotient(&self) -> u64 {
        self.partial_quotients.iter().copied().max().unwrap_or(0)
    }

    /// True when an expansion of a real stopped before the requested depth
    /// because the number is rational at working precision.
    pub fn terminated_early(&self) -> bool {
        match &self.source {
            CfSource::FromReal {
                requested_depth, ..
            } => self.partial_quotients.len() < *requested_depth,
            _ => false,
        }
    }

    /// Longer prefix of the same expansion, when the source allows it.
    pub fn extend_to(&self, depth: usize) -> Option<Self> {
        match &self.source {
            CfSource::Periodic { head, cycle } => Self::periodic(head, cycle, depth).ok(),
            _ if depth <= self.len() => Some(self.clone()),
            _ => None,
        }
    }

    /// Value of the truncated expansion `p_m / q_m` at the given precision.
    pub fn value(&self, ctx: &PrecisionContext) -> Real {
        let table = convergents(self).expect("non-empty by construction");
        let last = table.rows.last().expect("non-empty table");
        ctx.real(&last.p) / ctx.real(&last.q)
    }
}

/// Gauss-map expansion of `rho` at its own precision.
///
/// Stops early (without error) when a remainder falls below
/// `2^-(bits/2)`: `rho` is then rational at working precision and the
/// returned fraction reports [`ContinuedFraction::terminated_early`].
/// The quotients are recomputed at doubled precision; any disagreement is
/// reported as [`Error::PrecisionExhausted`].
pub fn expand(rho: &Real, depth: usize) -> Result<ContinuedFraction> {
    if !rho.is_finite() {
        return Err(Error::NonFinite);
    }
    if *rho <= 0 || *rho >= 1 {
        return Err(Error::InvalidContinuedFraction(format!(
            "rho must lie in (0, 1), got {}",
            format_scalar(rho)
        )));
    }
    if depth == 0 {
        return Err(Error::InvalidContinuedFraction("depth must be >= 1".into()));
    }
    let bits = rho.prec();
    let threshold_exp = bits / 2;
    let base = gauss_quotients(rho, depth, bits, threshold_exp)?;
    let wide = gauss_quotients(&Float::with_val(2 * bits, rho), depth, 2 * bits, threshold_exp)?;
    if base != wide {
        let first = base
            .iter()
            .zip(wide.iter())
            .position(|(a, b)| a != b)
            .unwrap_or(base.len().min(wide.len()));
        return Err(Error::PrecisionExhausted(format!(
            "partial quotient a_{first} unstable under precision doubling"
        )));
    }
    ContinuedFraction::with_source(
        base,
        CfSource::FromReal {
            value: format_scalar(rho),
            requested_depth: depth,
        },
    )
}

fn gauss_quotients(rho: &Real, depth: usize, bits: u32, threshold_exp: u32) -> Result<Vec<u64>> {
    let threshold = Float::with_val(bits, 1) >> threshold_exp;
    let mut x = Float::with_val(bits, rho);
    let mut out = Vec::with_capacity(depth);
    while out.len() < depth {
        let y = Float::with_val(bits, 1 / &x);
        let a = Float::with_val(bits, y.floor_ref());
        let rem = Float::with_val(bits, &y - &a);
        let mut quotient = a;
        let mut stop = false;
        if rem < threshold {
            stop = true;
        } else if Float::with_val(bits, 1 - &rem) < threshold {
            quotient += 1;
            stop = true;
        }
        let q = quotient
            .to_integer()
            .and_then(|i| i.to_u64())
            .ok_or_else(|| Error::InvalidContinuedFraction("partial quotient overflows u64".into()))?;
        out.push(q);
        if stop {
            break;
        }
        x = rem;
    }
    Ok(out)
}

/// One row `(n, a_n, p_n, q_n)` of a convergent table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvergentRow {
    pub n: usize,
    /// `a_n`, absent on the last row.
    pub a: Option<u64>,
    pub p: Integer,
    pub q: Integer,
}

/// Convergents `p_n / q_n` for `n = 0..=m` of an `m`-term fraction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvergentTable {
    cf: ContinuedFraction,
    rows: Vec<ConvergentRow>,
}

pub fn convergents(cf: &ContinuedFraction) -> Result<ConvergentTable> {
    let a = cf.quotients();
    if a.is_empty() {
        return Err(Error::InvalidContinuedFraction("no partial quotients".into()));
    }
    let m = a.len();
    let mut p: Vec<Integer> = Vec::with_capacity(m + 1);
    let mut q: Vec<Integer> = Vec::with_capacity(m + 1);
    p.push(Integer::from(0));
    p.push(Integer::from(1));
    q.push(Integer::from(1));
    q.push(Integer::from(a[0]));
    for n in 1..m {
        let pn = Integer::from(&p[n] * a[n]) + &p[n - 1];
        let qn = Integer::from(&q[n] * a[n]) + &q[n - 1];
        p.push(pn);
        q.push(qn);
    }
    let rows = p
        .into_iter()
        .zip(q)
        .enumerate()
        .map(|(n, (p, q))| ConvergentRow {
            n,
            a: a.get(n).copied(),
            p,
            q,
        })
        .collect();
    Ok(ConvergentTable {
        cf: cf.clone(),
        rows,
    })
}

/// Sign of a non-zero real.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn alternating(n: usize) -> Self {
        if n % 2 == 0 {
            Sign::Positive
        } else {
            Sign::Negative
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Positive => '+',
            Sign::Negative => '-',
        }
    }
}

impl ConvergentTable {
    pub fn continued_fraction(&self) -> &ContinuedFraction {
        &self.cf
    }

    pub fn rows(&self) -> &[ConvergentRow] {
        &self.rows
    }

    /// Largest `n` with a stored row.
    pub fn depth(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn p(&self, n: usize) -> &Integer {
        &self.rows[n].p
    }

    pub fn q(&self, n: usize) -> &Integer {
        &self.rows[n].q
    }

    /// `q_n` as an iteration count.
    pub fn return_time(&self, n: usize) -> Result<usize> {
        let row = self.rows.get(n).ok_or_else(|| {
            Error::Precondition(format!(
                "return time q_{n} requested but the table stops at n = {}",
                self.depth()
            ))
        })?;
        row.q
            .to_usize()
            .ok_or_else(|| Error::Precondition(format!("q_{n} does not fit in usize")))
    }

    /// `q_n p_{n+1} - q_{n+1} p_n`, which equals `(-1)^n`.
    pub fn determinant(&self, n: usize) -> Integer {
        Integer::from(&self.rows[n].q * &self.rows[n + 1].p)
            - Integer::from(&self.rows[n + 1].q * &self.rows[n].p)
    }

    pub fn verify_determinants(&self) -> Result<()> {
        for n in 0..self.depth() {
            let expected = if n % 2 == 0 { 1 } else { -1 };
            let det = self.determinant(n);
            if det != expected {
                return Err(Error::InvalidContinuedFraction(format!(
                    "determinant at n = {n} is {det}, expected {expected}"
                )));
            }
        }
        Ok(())
    }

    /// `q_n rho - p_n` at the precision of `rho`.
    pub fn approximation_error(&self, rho: &Real, n: usize) -> Real {
        let prec = rho.prec();
        Float::with_val(prec, rho * &self.rows[n].q) - &self.rows[n].p
    }

    /// CSV with columns `n, a_n, p_n, q_n, sign` (sign of `q_n rho - p_n`,
    /// left blank without `rho`).
    pub fn write_csv<W: Write>(&self, out: W, rho: Option<&Real>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "a_n", "p_n", "q_n", "sign"])?;
        for row in &self.rows {
            let sign = match rho {
                Some(r) => {
                    let e = self.approximation_error(r, row.n);
                    if e.is_zero() {
                        "0".to_string()
                    } else if e.is_sign_positive() {
                        "+".to_string()
                    } else {
                        "-".to_string()
                    }
                }
                None => String::new(),
            };
            w.write_record([
                row.n.to_string(),
                row.a.map(|a| a.to_string()).unwrap_or_default(),
                row.p.to_string(),
                row.q.to_string(),
                sign,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Signs of `q_n rho - p_n` for `n = 0..=depth`.
pub fn closest_return_signs(rho: &Real, depth: usize) -> Result<Vec<Sign>> {
    let cf = expand(rho, depth.max(1))?;
    if cf.len() < depth {
        return Err(Error::PrecisionExhausted(format!(
            "rho is rational at working precision (expansion stops after {} terms)",
            cf.len()
        )));
    }
    let table = convergents(&cf)?;
    (0..=depth)
        .map(|n| {
            let e = table.approximation_error(rho, n);
            if e.is_zero() {
                Err(Error::PrecisionExhausted(format!("q_{n} rho - p_{n} vanished")))
            } else if e.is_sign_positive() {
                Ok(Sign::Positive)
            } else {
                Ok(Sign::Negative)
            }
        })
        .collect()
}

/// Atoms of the level-`n` dynamical partition of the rigid rotation by
/// `rho`, based at 0, computed from the sorted points `{k rho mod 1}`,
/// `0 <= k < q_n + q_{n+1}`. Atoms are returned in circle order from 0.
pub fn rotation_partition_oracle(rho: &Real, n: usize) -> Result<Vec<CircleInterval>> {
    let cf = expand(rho, n + 1)?;
    if cf.len() < n + 1 {
        return Err(Error::PrecisionExhausted(format!(
            "rho is rational at working precision (expansion stops after {} terms)",
            cf.len()
        )));
    }
    let table = convergents(&cf)?;
    let count = table.return_time(n)? + table.return_time(n + 1)?;
    let prec = rho.prec();
    let mut points: Vec<Real> = (0..count)
        .map(|k| frac(&Float::with_val(prec, rho * k as u64)))
        .collect();
    points.sort_by(cmp_real);
    let floor = Float::with_val(prec, 1) >> prec.saturating_sub(32);
    let mut atoms = Vec::with_capacity(count);
    for i in 0..count {
        let left = &points[i];
        let length = if i + 1 < count {
            Float::with_val(prec, &points[i + 1] - left)
        } else {
            Float::with_val(prec, 1 - left) + &points[0]
        };
        if length <= floor {
            return Err(Error::PrecisionExhausted(format!(
                "orbit points collide at level {n}"
            )));
        }
        atoms.push(CircleInterval::new(reduce_mod1(left)?, length)?);
    }
    Ok(atoms)
}
