//! Cross-ratio distortion, Schwarzian derivatives of iterates, C¹ bounds of
//! return maps, Koebe checks and the block decomposition of long
//! compositions.
//!
//! Nested intervals `M ⋐ T` are handled on the lift as four points
//! `a < b < c < d` with `T = [a, d]`, `M = [b, c]`, `L = [a, b]`,
//! `R = [c, d]`, and `[M, T] = |L||R| / (|L ∪ M||M ∪ R|)`.

use std::sync::Arc;

use rayon::prelude::*;
use rug::Float;
use serde::Serialize;

use crate::circlemap::{JetValue, LiftMap, TrigProductMap};
use crate::error::{Error, Result};
use crate::numerics::{
    format_scalar, forward_distance, CircleInterval, PrecisionContext, Real,
};
use crate::partition::{multiplicity, DynamicalPartition, Orbit, WingIndices};

/// Four ordered lift points `a < b < c < d`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalPair {
    points: [Real; 4],
}

impl IntervalPair {
    pub fn new(a: Real, b: Real, c: Real, d: Real) -> Result<Self> {
        if !(a < b && b < c && c < d) {
            return Err(Error::InvalidInterval(format!(
                "M must be compactly contained in T (got {} <= {} <= {} <= {})",
                format_scalar(&a),
                format_scalar(&b),
                format_scalar(&c),
                format_scalar(&d)
            )));
        }
        Ok(Self {
            points: [a, b, c, d],
        })
    }

    /// Pair from arcs on the circle; `T` is lifted to start at its left
    /// endpoint in `[0, 1)`.
    pub fn from_arcs(m: &CircleInterval, t: &CircleInterval) -> Result<Self> {
        if *t.length() >= 1 {
            return Err(Error::InvalidInterval("T must be shorter than the circle".into()));
        }
        let prec = t.length().prec();
        let a = t.left().value().clone();
        let off = t.offset_of(m.left().value());
        let b = Float::with_val(prec, &a + &off);
        let c = Float::with_val(prec, &b + m.length());
        let d = Float::with_val(prec, &a + t.length());
        Self::new(a, b, c, d)
    }

    pub fn points(&self) -> &[Real; 4] {
        &self.points
    }

    fn len(&self, i: usize, j: usize) -> Real {
        Float::with_val(self.points[0].prec(), &self.points[j] - &self.points[i])
    }

    pub fn left_wing(&self) -> Real {
        self.len(0, 1)
    }

    pub fn middle(&self) -> Real {
        self.len(1, 2)
    }

    pub fn right_wing(&self) -> Real {
        self.len(2, 3)
    }

    pub fn whole(&self) -> Real {
        self.len(0, 3)
    }

    /// Image under a lift; the images must stay strictly ordered.
    pub fn image<M: LiftMap + ?Sized>(&self, map: &M) -> Result<Self> {
        let [a, b, c, d] = &self.points;
        Self::new(map.lift(a), map.lift(b), map.lift(c), map.lift(d)).map_err(|_| {
            Error::InjectivityViolation("image endpoints are out of order".into())
        })
    }

    /// Same pair shifted by an integer so that `a ∈ [0, 1)`.
    pub fn normalized(&self) -> Self {
        let prec = self.points[0].prec();
        let k = Float::with_val(prec, self.points[0].floor_ref());
        Self {
            points: self
                .points
                .clone()
                .map(|p| Float::with_val(prec, &p - &k)),
        }
    }
}

/// `|L||R| / (|L ∪ M||M ∪ R|)`, in `(0, 1)`.
pub fn cross_ratio(pair: &IntervalPair) -> Real {
    let [a, b, c, d] = pair.points();
    cross_ratio_of_points(a, b, c, d)
}

fn cross_ratio_of_points(a: &Real, b: &Real, c: &Real, d: &Real) -> Real {
    let prec = a.prec();
    let l = Float::with_val(prec, b - a);
    let r = Float::with_val(prec, d - c);
    let lm = Float::with_val(prec, c - a);
    let mr = Float::with_val(prec, d - b);
    l * r / (lm * mr)
}

/// Cross ratio of four circle points taken in positive order from `a`.
pub fn cross_ratio_on_circle(a: &Real, b: &Real, c: &Real, d: &Real) -> Real {
    let prec = a.prec();
    let zero = Float::new(prec);
    let b = forward_distance(a, b);
    let c = forward_distance(a, c);
    let d = forward_distance(a, d);
    cross_ratio_of_points(&zero, &b, &c, &d)
}

/// `CrD(f^j; M, T)` by direct iteration and by the product of one-step
/// distortions along the orbit.
#[derive(Clone, Debug, PartialEq)]
pub struct CrdValue {
    pub direct: Real,
    pub chained: Real,
}

pub fn crd<M: LiftMap + ?Sized>(map: &M, j: usize, pair: &IntervalPair) -> Result<CrdValue> {
    let before = cross_ratio(pair);
    let mut current = pair.normalized();
    let mut chained = map.context().one();
    for _ in 0..j {
        let next = current.image(map)?;
        chained *= cross_ratio(&next) / cross_ratio(&current);
        current = next.normalized();
    }
    let mut direct = pair.clone();
    for _ in 0..j {
        direct = direct.image(map)?;
    }
    Ok(CrdValue {
        direct: cross_ratio(&direct) / before,
        chained,
    })
}

/// Product of one-step distortions `CrD(f; M_i, T_i)` and the
/// intersection multiplicity of the `T_i`.
pub fn cri_product<M: LiftMap + ?Sized>(map: &M, pairs: &[IntervalPair]) -> Result<(Real, usize)> {
    let mut product = map.context().one();
    let mut arcs = Vec::with_capacity(pairs.len());
    for pair in pairs {
        product *= crd(map, 1, pair)?.direct;
        let t_len = pair.whole();
        let left = crate::numerics::reduce_mod1(&pair.points()[0])?;
        arcs.push(CircleInterval::new(left, t_len)?);
    }
    Ok((product, multiplicity(&arcs)))
}

/// Grid estimate of the total variation of `log Df` on `[left, right]`.
pub fn log_df_variation<M: LiftMap + ?Sized>(map: &M, left: &Real, right: &Real, grid: usize) -> Real {
    let ctx = map.context();
    let prec = ctx.bits();
    let width = Float::with_val(prec, right - left);
    let mut total = ctx.zero();
    let mut prev: Option<Real> = None;
    for i in 0..=grid {
        let x = Float::with_val(prec, &width * i as u64) / grid as u64 + left;
        let v = map.derivative(&x).ln();
        if let Some(p) = &prev {
            total += Float::with_val(prec, &v - p).abs();
        }
        prev = Some(v);
    }
    total
}

/// Chebyshev nodes of the first kind inside `[left, left + length]`; they
/// cluster near, but never hit, the endpoints.
pub fn chebyshev_grid(left: &Real, length: &Real, m: usize) -> Vec<Real> {
    let prec = left.prec();
    let pi = Float::with_val(prec, rug::float::Constant::Pi);
    (0..m)
        .map(|i| {
            let theta = Float::with_val(prec, &pi * (2 * i + 1) as u64) / (2 * m) as u64;
            let t = (1 - theta.cos()) / 2u32;
            Float::with_val(prec, length * t) + left
        })
        .collect()
}

/// `Df^k(x)` on the lift.
pub fn iterate_derivative<M: LiftMap + ?Sized>(map: &M, x: &Real, k: usize) -> Real {
    let ctx = map.context();
    let mut p = ctx.convert(x);
    let mut d = ctx.one();
    for _ in 0..k {
        let jet = map.jet(&p);
        d *= &jet.d1;
        p = jet.f;
    }
    d
}

/// `Sf^j(x)` split by orbit points near critical points (`sigma1`) and
/// the rest (`sigma2`).
#[derive(Clone, Debug, PartialEq)]
pub struct SchwarzianSum {
    pub total: Real,
    pub sigma1: Real,
    pub sigma2: Real,
}

/// `Sf^j(x) = sum_{k<j} Sf(f^k x) (Df^k x)^2`, accumulated left to right.
/// Orbit points within the critical radius of some `c_i` go to `sigma1`.
pub fn schwarzian_iterate(map: &TrigProductMap, j: usize, x: &Real) -> Result<SchwarzianSum> {
    let ctx = map.ctx();
    let mut total = ctx.zero();
    let mut sigma1 = ctx.zero();
    let mut sigma2 = ctx.zero();
    let mut p = ctx.convert(x);
    let mut df = ctx.one();
    let radii = map.critical_radii();
    for k in 0..j {
        let jet = map.eval_jet(&p);
        let s = jet.schwarzian().map_err(|_| {
            Error::Singular(format!("orbit hits a critical point at step {k}"))
        })?;
        let term = s * Float::with_val(ctx.bits(), df.square_ref());
        let near = {
            let cp = crate::numerics::reduce_mod1(&p)?;
            map.critical_points()
                .iter()
                .zip(radii)
                .any(|(c, r)| crate::numerics::circle_distance(&c.position, &cp) < *r)
        };
        if near {
            sigma1 += &term;
        } else {
            sigma2 += &term;
        }
        total += &term;
        df *= &jet.d1;
        p = jet.f;
    }
    Ok(SchwarzianSum {
        total,
        sigma1,
        sigma2,
    })
}

/// Sign check of `Sf^j` on a grid, for every `j` up to a bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SchwarzianScan {
    pub grid_points: usize,
    pub iterates: usize,
    /// Sampled `(x, j)` pairs.
    pub samples: usize,
    pub all_negative: bool,
    /// Largest sampled value of `Sf^j(x)`.
    pub worst: f64,
    /// Grid points whose orbit met a critical point.
    pub singular_points: usize,
}

/// Result of the negative-Schwarzian check at one level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NegativeSchwarzianReport {
    pub level: usize,
    /// `Sf ≡ 0` (rigid rotation): negativity fails trivially.
    pub zero_family: bool,
    /// `x ∈ I_n`, `1 <= j <= q_{n+1}`.
    pub long: SchwarzianScan,
    /// `x ∈ I_{n+1}`, `1 <= j <= q_n`.
    pub short: SchwarzianScan,
}

impl NegativeSchwarzianReport {
    pub fn all_negative(&self) -> bool {
        !self.zero_family && self.long.all_negative && self.short.all_negative
    }
}

fn scan_schwarzian(map: &TrigProductMap, arc: &CircleInterval, j_max: usize, grid: usize) -> SchwarzianScan {
    let ctx = map.ctx();
    let prec = ctx.bits();
    let points = chebyshev_grid(arc.left().value(), arc.length(), grid);
    let results: Vec<(usize, bool, f64, bool)> = points
        .par_iter()
        .map(|x| {
            let mut p = x.clone();
            let mut df = ctx.one();
            let mut s = ctx.zero();
            let mut all_negative = true;
            let mut worst = f64::NEG_INFINITY;
            for j in 1..=j_max {
                let jet = map.eval_jet(&p);
                let sf = match jet.schwarzian() {
                    Ok(v) => v,
                    Err(_) => return (j - 1, false, worst, true),
                };
                s += sf * Float::with_val(prec, df.square_ref());
                df *= &jet.d1;
                p = jet.f;
                let v = s.to_f64();
                worst = worst.max(v);
                if s >= 0 {
                    all_negative = false;
                }
            }
            (j_max, all_negative, worst, false)
        })
        .collect();
    SchwarzianScan {
        grid_points: grid,
        iterates: j_max,
        samples: results.iter().map(|r| r.0).sum(),
        all_negative: results.iter().all(|r| r.1 && !r.3),
        worst: results.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max),
        singular_points: results.iter().filter(|r| r.3).count(),
    }
}

/// Checks `Sf^j < 0` at `grid` Chebyshev points of `I_n` for every
/// `j = 1..=q_{n+1}` (all iterates are accumulated incrementally, so none
/// is skipped), and likewise on `I_{n+1}` for `j = 1..=q_n`.
pub fn verify_negative_schwarzian(
    map: &TrigProductMap,
    partition: &DynamicalPartition,
    grid: usize,
) -> NegativeSchwarzianReport {
    let long = scan_schwarzian(map, &partition.i_n().interval, partition.q_next(), grid);
    let short = scan_schwarzian(map, &partition.i_next().interval, partition.q_n(), grid);
    NegativeSchwarzianReport {
        level: partition.level(),
        zero_family: map.is_rigid(),
        long,
        short,
    }
}

/// Smallest level from which every later report is all-negative.
pub fn empirical_n1(reports: &[NegativeSchwarzianReport]) -> Option<usize> {
    let mut sorted: Vec<&NegativeSchwarzianReport> = reports.iter().collect();
    sorted.sort_by_key(|r| r.level);
    let mut n1 = None;
    for r in sorted.iter().rev() {
        if r.all_negative() {
            n1 = Some(r.level);
        } else {
            break;
        }
    }
    n1
}

/// C¹ bound data of the first-return map to `I_n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct C1Bound {
    pub level: usize,
    /// `max Df^j(x) |I_n| / |f^j(I_n)|` over grid `x ∈ I_n`,
    /// `0 <= j <= q_{n+1}`.
    pub k_n: f64,
    /// Max derivative of `f^{q_{n+1}}` on `I_n` after affine rescaling of
    /// domain and image to unit length.
    pub c1_norm: f64,
}

pub fn c1_bound_constant(map: &TrigProductMap, partition: &DynamicalPartition, grid: usize) -> Result<C1Bound> {
    let ctx = map.ctx();
    let prec = ctx.bits();
    let i_n = partition.i_n();
    let q = partition.q_next();
    let orbit = partition.orbit();
    let (l, r) = (i_n.left_index, i_n.right_index);
    if orbit.len() <= r.max(l) + q {
        return Err(Error::Precondition("orbit too short for the C1 bound".into()));
    }
    // |I_n| / |f^j(I_n)| for j = 0..=q
    let scale: Vec<Real> = (0..=q)
        .map(|j| {
            let img = orbit.arc(l + j, r + j)?;
            Ok(Float::with_val(prec, i_n.length() / img.length()))
        })
        .collect::<Result<_>>()?;
    let points = chebyshev_grid(i_n.interval.left().value(), i_n.length(), grid);
    let per_point: Vec<(f64, f64)> = points
        .par_iter()
        .map(|x| {
            let mut p = x.clone();
            let mut df = ctx.one();
            let mut best = Float::with_val(prec, &scale[0]);
            for s in scale.iter().skip(1) {
                let jet = map.eval_jet(&p);
                df *= &jet.d1;
                p = jet.f;
                let v = Float::with_val(prec, &df * s);
                if v > best {
                    best = v;
                }
            }
            let last = Float::with_val(prec, &df * &scale[q]);
            (best.to_f64(), last.to_f64())
        })
        .collect();
    Ok(C1Bound {
        level: partition.level(),
        k_n: per_point.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max),
        c1_norm: per_point.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max),
    })
}

/// `(1 + 1/tau)^2 exp(c0 ell)`.
pub fn koebe_bound(tau: f64, c0: f64, ell: f64) -> f64 {
    (1.0 + 1.0 / tau).powi(2) * (c0 * ell).exp()
}

/// Outcome of a Koebe check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KoebeCheck {
    /// `max/min Df^k` over the grid in `M`.
    pub measured: f64,
    pub bound: f64,
    /// Total length `sum_{j<k} |f^j(T)|`.
    pub ell: f64,
    /// Space of `f^k(M)` inside `f^k(T)`.
    pub tau: f64,
    /// Why the check was skipped, if a precondition failed.
    pub skipped: Option<String>,
}

impl KoebeCheck {
    pub fn holds(&self) -> bool {
        self.skipped.is_some() || self.measured <= self.bound
    }
}

/// Distortion of `f^k` on `M` against `(1 + 1/tau)^2 exp(c0 ell)`.
/// Preconditions (no critical point in `f^j(T)` for `j < k`, total length
/// at most `ell`, space `tau` around `f^k(M)`) are checked; a failure
/// skips the comparison rather than erroring.
pub fn koebe_check(
    map: &TrigProductMap,
    k: usize,
    pair: &IntervalPair,
    tau: f64,
    ell: f64,
    c0: f64,
    grid: usize,
) -> Result<KoebeCheck> {
    let ctx = map.ctx();
    let prec = ctx.bits();
    let mut current = pair.clone();
    let mut total = 0.0f64;
    let mut skipped = None;
    for j in 0..k {
        let [a, _, _, d] = current.points();
        if contains_critical(map, a, d).is_some() {
            skipped = Some(format!("f^{j}(T) contains a critical point"));
            break;
        }
        total += current.whole().to_f64();
        current = current.image(map)?;
    }
    if skipped.is_none() && total > ell {
        skipped = Some(format!("total length {total} exceeds ell = {ell}"));
    }
    let m = current.middle();
    let space = Float::with_val(prec, current.left_wing().min(&current.right_wing()) / &m).to_f64();
    if skipped.is_none() && space < tau {
        skipped = Some(format!("space {space} of f^k(M) is below tau = {tau}"));
    }
    let [_, b, c, _] = pair.points();
    let width = Float::with_val(prec, c - b);
    let values: Vec<Real> = chebyshev_grid(b, &width, grid)
        .iter()
        .map(|x| iterate_derivative(map, x, k))
        .collect();
    let max = values.iter().max_by(|a, b| a.partial_cmp(b).expect("finite")).expect("grid");
    let min = values.iter().min_by(|a, b| a.partial_cmp(b).expect("finite")).expect("grid");
    let measured = if min.is_zero() {
        f64::INFINITY
    } else {
        Float::with_val(prec, max / min).to_f64()
    };
    Ok(KoebeCheck {
        measured,
        bound: koebe_bound(tau, c0, ell),
        ell: total,
        tau: space,
        skipped,
    })
}

/// Smallest `c0 >= 0` with `measured <= (1 + 1/tau)^2 exp(c0 ell)` for all
/// samples `(measured, tau, ell)`.
pub fn fit_koebe_constant(samples: &[(f64, f64, f64)]) -> f64 {
    samples
        .iter()
        .filter(|s| s.2 > 0.0)
        .map(|&(m, tau, ell)| (m / (1.0 + 1.0 / tau).powi(2)).ln() / ell)
        .fold(0.0, f64::max)
}

/// Index of a critical point lying in the lift interval `[a, d]`.
fn contains_critical(map: &TrigProductMap, a: &Real, d: &Real) -> Option<usize> {
    let prec = a.prec();
    map.critical_points().iter().position(|cp| {
        // smallest lift c + m >= a
        let shift = Float::with_val(prec, a - cp.position.value()).ceil();
        let lifted = Float::with_val(prec, cp.position.value() + &shift);
        lifted <= *d
    })
}

/// `Df(x) |J| / |f(J)|` maximized over a grid of `J = [left, right]`.
pub fn comparability_ratio_max(map: &TrigProductMap, left: &Real, right: &Real, grid: usize) -> Real {
    let prec = left.prec();
    let len = Float::with_val(prec, right - left);
    let img = Float::with_val(prec, map.eval_lift(right) - map.eval_lift(left));
    let scale = Float::with_val(prec, &len / &img);
    let mut points = chebyshev_grid(left, &len, grid);
    points.push(left.clone());
    points.push(right.clone());
    points
        .iter()
        .map(|x| map.eval_df(x) * &scale)
        .max_by(|a, b| a.partial_cmp(b).expect("finite"))
        .expect("grid")
}

/// Steps `j < q_{n+1}` at which `f^j(T_n)` contains a critical point, with
/// that point's index.
pub fn critical_times(map: &TrigProductMap, partition: &DynamicalPartition) -> Result<Vec<(usize, usize)>> {
    let w = WingIndices::of(partition);
    let orbit = partition.orbit();
    let mut out = Vec::new();
    for j in 0..partition.q_next() {
        let s = w.shifted(j);
        for (l, r) in [s.left_wing, s.middle, s.right_wing] {
            let arc = orbit.arc(l, r)?;
            if let Some(i) = map
                .critical_points()
                .iter()
                .position(|c| arc.contains(c.position.value()))
            {
                out.push((j, i));
                break;
            }
        }
    }
    Ok(out)
}

/// One factor of the decomposition of `f^k` on `Δ*`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Block {
    /// Diffeomorphic stretch of `len` steps from `start`; measured
    /// `max/min Df^len` on the image of `Δ*`.
    Diffeo { start: usize, len: usize, distortion: f64 },
    /// Single step through the critical neighborhood of `c_index`.
    Critical { start: usize, c_index: usize },
    /// Diffeomorphic stretch with negative Schwarzian derivative.
    NegativeSchwarzian { start: usize, len: usize },
}

impl Block {
    pub fn len(&self) -> usize {
        match self {
            Block::Diffeo { len, .. } | Block::NegativeSchwarzian { len, .. } => *len,
            Block::Critical { .. } => 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Decomposition of `f^k|Δ*`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecompositionTrace {
    pub level: usize,
    pub coarse_level: usize,
    pub k: usize,
    pub blocks: Vec<Block>,
    pub diffeo_count: usize,
    pub critical_count: usize,
    pub diffeo_limit: usize,
    pub critical_limit: usize,
    /// Largest measured distortion over diffeomorphic blocks.
    pub max_diffeo_distortion: f64,
    pub epsilon: f64,
}

impl DecompositionTrace {
    pub fn counts_ok(&self) -> bool {
        self.diffeo_count <= self.diffeo_limit && self.critical_count <= self.critical_limit
    }

    pub fn distortion_ok(&self) -> bool {
        self.max_diffeo_distortion <= 1.0 + self.epsilon
    }

    pub fn total_len(&self) -> usize {
        self.blocks.iter().map(Block::len).sum()
    }
}

/// Orbit-index arc `(left, right)` as a circle interval.
fn index_arc(orbit: &Orbit, (l, r): (usize, usize), shift: usize) -> Result<CircleInterval> {
    orbit.arc(l + shift, r + shift)
}

fn critical_in(map: &TrigProductMap, arc: &CircleInterval) -> Option<usize> {
    map.critical_points()
        .iter()
        .position(|c| arc.contains(c.position.value()))
}

/// `(Δ*.left, Δ*.right)` orbit indices of the atom at `pos`.
fn enlarged(partition: &DynamicalPartition, pos: usize) -> (usize, usize) {
    let (prev, next) = partition.neighbors(pos);
    (
        partition.atoms()[prev].left_index,
        partition.atoms()[next].right_index,
    )
}

/// Decomposes `f^k` on `Δ*` for the atom at `pos` of `fine = P_n`, with
/// the ambient interval `J_{n1}` taken from `coarse = P_{n1}` (both built
/// on the same base orbit). Steps are classified as in the standard
/// argument: while the image of the ambient interval avoids the critical
/// set the step starts a diffeomorphic block that lasts until it meets
/// one; when it meets a critical point `c`, a single critical step is
/// taken if the image of `Δ*` contains `c`, and otherwise a
/// negative-Schwarzian block runs until the image of `Δ*` next contains a
/// critical point.
pub fn decompose(
    map: &TrigProductMap,
    fine: &DynamicalPartition,
    coarse: &DynamicalPartition,
    pos: usize,
    k: usize,
    epsilon: f64,
    grid: usize,
) -> Result<DecompositionTrace> {
    if fine.len() < 4 {
        return Err(Error::Precondition("partition too coarse for Δ*".into()));
    }
    if !Arc::ptr_eq(fine.orbit(), coarse.orbit()) && fine.orbit().base() != coarse.orbit().base() {
        return Err(Error::Precondition("partitions have different base points".into()));
    }
    let orbit = fine.orbit();
    let atom = &fine.atoms()[pos];
    let delta = (atom.left_index, atom.right_index);
    let star = enlarged(fine, pos);
    if orbit.len() <= star.0.max(star.1) + k {
        return Err(Error::Precondition("orbit too short for the requested k".into()));
    }
    for j in 1..=k {
        if fine.arc_in_single_atom(delta.0 + j, delta.1 + j).is_none() {
            return Err(Error::Precondition(format!(
                "f^{j}(Δ) is not inside an atom of P_{}",
                fine.level()
            )));
        }
    }
    // Ambient interval: hull of J_{n1} and Δ*.
    let star_arc = index_arc(orbit, star, 0)?;
    let j_pos = coarse.locate(atom.interval.left().value());
    let j_atom = &coarse.atoms()[j_pos];
    let left = if j_atom.interval.contains(orbit.point(star.0)) {
        j_atom.left_index
    } else {
        star.0
    };
    let right = if j_atom.interval.contains(orbit.point(star.1)) {
        j_atom.right_index
    } else {
        star.1
    };
    let ambient = (left, right);
    let _ = star_arc;

    let ambient_hits = |i: usize| -> Result<Option<usize>> {
        Ok(critical_in(map, &index_arc(orbit, ambient, i)?))
    };
    let star_hits =
        |i: usize| -> Result<Option<usize>> { Ok(critical_in(map, &index_arc(orbit, star, i)?)) };

    let mut blocks = Vec::new();
    let mut max_distortion = 1.0f64;
    let mut i = 0usize;
    while i < k {
        if ambient_hits(i)?.is_none() {
            let mut s = 1;
            while i + s < k && ambient_hits(i + s)?.is_none() {
                s += 1;
            }
            let arc = index_arc(orbit, star, i)?;
            let distortion = block_distortion(map, &arc, s, grid);
            max_distortion = max_distortion.max(distortion);
            blocks.push(Block::Diffeo {
                start: i,
                len: s,
                distortion,
            });
            i += s;
        } else if let Some(c_index) = star_hits(i)? {
            blocks.push(Block::Critical { start: i, c_index });
            i += 1;
        } else {
            let mut s = 1;
            while i + s < k && star_hits(i + s)?.is_none() {
                s += 1;
            }
            blocks.push(Block::NegativeSchwarzian { start: i, len: s });
            i += s;
        }
    }
    let n = map.critical_count();
    let diffeo_count = blocks.iter().filter(|b| matches!(b, Block::Diffeo { .. })).count();
    let critical_count = blocks.iter().filter(|b| matches!(b, Block::Critical { .. })).count();
    Ok(DecompositionTrace {
        level: fine.level(),
        coarse_level: coarse.level(),
        k,
        blocks,
        diffeo_count,
        critical_count,
        diffeo_limit: 3 * n + 1,
        critical_limit: 3 * n,
        max_diffeo_distortion: max_distortion,
        epsilon,
    })
}

/// `max/min Df^s` over a Chebyshev grid of `arc`.
fn block_distortion(map: &TrigProductMap, arc: &CircleInterval, s: usize, grid: usize) -> f64 {
    let values: Vec<Real> = chebyshev_grid(arc.left().value(), arc.length(), grid)
        .iter()
        .map(|x| iterate_derivative(map, x, s))
        .collect();
    let max = values.iter().max_by(|a, b| a.partial_cmp(b).expect("finite")).expect("grid");
    let min = values.iter().min_by(|a, b| a.partial_cmp(b).expect("finite")).expect("grid");
    if min.is_zero() {
        f64::INFINITY
    } else {
        Float::with_val(max.prec(), max / min).to_f64()
    }
}

/// Maximal admissible `k` for the atom at `pos`: `f^j(Δ)` lies in a
/// single atom for every `1 <= j <= k`. Capped at `q_n + q_{n+1} + 1`.
pub fn admissible_k(partition: &DynamicalPartition, pos: usize) -> usize {
    let atom = &partition.atoms()[pos];
    let (l, r) = (atom.left_index, atom.right_index);
    let cap = partition.endpoint_count() + 1;
    let limit = partition.orbit().len().saturating_sub(1);
    let mut k = 0;
    while k < cap
        && l.max(r) + k + 1 <= limit
        && partition.arc_in_single_atom(l + k + 1, r + k + 1).is_some()
    {
        k += 1;
    }
    k
}

/// Largest `CrD(f^k; Δ, Δ*)` at one level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrdMax {
    pub level: usize,
    pub max: f64,
    /// Position of the maximizing atom and the iterate.
    pub atom: usize,
    pub k: usize,
    /// Largest admissible `k` over all atoms.
    pub max_admissible_k: usize,
}

/// Max over atoms `Δ ∈ P_n` and all admissible `k` of `CrD(f^k; Δ, Δ*)`,
/// with `Δ*` the union of `Δ` and its two neighbors. All lengths come
/// from orbit points.
pub fn crd_return_map_max(partition: &DynamicalPartition) -> Result<CrdMax> {
    if partition.len() < 4 {
        return Err(Error::Precondition(format!(
            "level {} has {} atoms; Δ* needs at least 4",
            partition.level(),
            partition.len()
        )));
    }
    let orbit = partition.orbit();
    let per_atom: Vec<(Real, usize, usize)> = (0..partition.len())
        .into_par_iter()
        .map(|pos| {
            let atom = &partition.atoms()[pos];
            let (a, d) = enlarged(partition, pos);
            let (b, c) = (atom.left_index, atom.right_index);
            let base = cross_ratio_on_circle(orbit.point(a), orbit.point(b), orbit.point(c), orbit.point(d));
            let kmax = admissible_k(partition, pos);
            let mut best = partition.ctx().one();
            let mut best_k = 0;
            for k in 1..=kmax {
                let v = cross_ratio_on_circle(
                    orbit.point(a + k),
                    orbit.point(b + k),
                    orbit.point(c + k),
                    orbit.point(d + k),
                ) / &base;
                if v > best {
                    best = v;
                    best_k = k;
                }
            }
            (best, best_k, kmax)
        })
        .collect();
    let mut out = CrdMax {
        level: partition.level(),
        max: 1.0,
        atom: 0,
        k: 0,
        max_admissible_k: 0,
    };
    let mut best: Option<&Real> = None;
    for (pos, (v, k, kmax)) in per_atom.iter().enumerate() {
        out.max_admissible_k = out.max_admissible_k.max(*kmax);
        if best.is_none_or(|b| v > b) {
            best = Some(v);
            out.max = v.to_f64();
            out.atom = pos;
            out.k = *k;
        }
    }
    Ok(out)
}

/// `(3/2)^{2(3N+1)} (9 d^2)^{3N}`.
pub fn explicit_crd_ceiling(n: usize, d: u32) -> f64 {
    let n = n as i32;
    1.5f64.powi(2 * (3 * n + 1)) * (9.0 * f64::from(d) * f64::from(d)).powi(3 * n)
}

/// Synthetic Möbius lift `x -> (alpha x + beta)/(gamma x + delta)` for
/// testing cross-ratio invariance; valid where `gamma x + delta > 0`.
#[derive(Clone, Debug)]
pub struct MobiusMap {
    ctx: PrecisionContext,
    coefficients: [Real; 4],
}

impl MobiusMap {
    pub fn new(ctx: &PrecisionContext, alpha: Real, beta: Real, gamma: Real, delta: Real) -> Result<Self> {
        let det = Float::with_val(ctx.bits(), &alpha * &delta) - Float::with_val(ctx.bits(), &beta * &gamma);
        if det <= 0 {
            return Err(Error::Precondition("Möbius map must preserve orientation".into()));
        }
        Ok(Self {
            ctx: *ctx,
            coefficients: [alpha, beta, gamma, delta],
        })
    }
}

impl LiftMap for MobiusMap {
    fn context(&self) -> PrecisionContext {
        self.ctx
    }

    fn lift(&self, x: &Real) -> Real {
        let p = self.ctx.bits();
        let [a, b, c, d] = &self.coefficients;
        let num = Float::with_val(p, a * x) + b;
        let den = Float::with_val(p, c * x) + d;
        num / den
    }

    fn jet(&self, x: &Real) -> JetValue {
        let p = self.ctx.bits();
        let [a, b, c, d] = &self.coefficients;
        let det = Float::with_val(p, a * d) - Float::with_val(p, b * c);
        let den = Float::with_val(p, c * x) + d;
        let den2 = Float::with_val(p, den.square_ref());
        let den3 = Float::with_val(p, &den2 * &den);
        let den4 = Float::with_val(p, den2.square_ref());
        JetValue {
            f: self.lift(x),
            d1: Float::with_val(p, &det / &den2),
            d2: Float::with_val(p, c * &det) * -2i32 / den3,
            d3: Float::with_val(p, c.square_ref()) * &det * 6u32 / den4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arithmetic::{convergents, ContinuedFraction};
    use crate::circlemap::{build, MapSpec};
    use crate::partition::build_partition;
    use crate::rotation::tune;

    fn ctx() -> PrecisionContext {
        PrecisionContext::default()
    }

    fn pair(c: &PrecisionContext, v: [f64; 4]) -> IntervalPair {
        IntervalPair::new(c.real(v[0]), c.real(v[1]), c.real(v[2]), c.real(v[3])).unwrap()
    }

    fn tuned_arnold(c: &PrecisionContext) -> TrigProductMap {
        let template = build(&MapSpec::arnold(c, c.zero()), c).unwrap();
        let res = tune(&template, &ContinuedFraction::golden(1).unwrap(), 12, 24).unwrap();
        template.with_offset(res.a_star).unwrap()
    }

    #[test]
    fn cross_ratio_examples() {
        let c = ctx();
        let v = cross_ratio(&pair(&c, [0.0, 0.25, 0.75, 1.0]));
        assert!(Float::with_val(256, v - c.real(1) / 9u32).abs() < c.tolerance(8));
        let tiny = cross_ratio(&pair(&c, [0.0, 1e-9, 1.0, 1.0 + 1e-9]));
        assert!(tiny < 1e-8);
        let a = cross_ratio(&pair(&c, [0.125, 0.25, 0.5, 0.625]));
        let b = cross_ratio(&pair(&c, [0.5, 0.75, 1.25, 1.5]));
        assert!(Float::with_val(256, a - b).abs() < c.tolerance(16));
        assert!(IntervalPair::new(c.real(0), c.real(0), c.real(0.5), c.real(1)).is_err());
    }

    #[test]
    fn mobius_and_rotation_are_neutral() {
        let c = ctx();
        let mob = MobiusMap::new(&c, c.real(2), c.real(0.5), c.real(0.75), c.real(1)).unwrap();
        let p = pair(&c, [0.1, 0.3, 0.4, 0.8]);
        let v = crd(&mob, 3, &p).unwrap();
        assert!(Float::with_val(256, &v.direct - 1u32).abs() < c.tolerance(40));
        let rot = build(&MapSpec::rigid(c.real(0.377)), &c).unwrap();
        let v = crd(&rot, 50, &p).unwrap();
        assert!(Float::with_val(256, &v.direct - 1u32).abs() < c.tolerance(40));
        assert!(Float::with_val(256, &v.chained - 1u32).abs() < c.tolerance(40));
        let jet = mob.jet(&c.real(0.3));
        assert!(jet.schwarzian().unwrap().abs() < c.tolerance(40));
    }

    #[test]
    fn power_law_constants_near_critical_point() {
        let c = ctx();
        let arnold = build(&MapSpec::arnold(&c, c.real(0.3)), &c).unwrap();
        let r = comparability_ratio_max(&arnold, &c.real(-0.05), &c.real(0.1), 32).to_f64();
        assert!(r <= 9.0, "{r}");
        let v = crd(&arnold, 1, &pair(&c, [-0.1, -0.01, 0.01, 0.1])).unwrap();
        assert!(v.direct.to_f64() <= 81.0);
        assert!(v.direct > 1);
    }

    #[test]
    fn schwarzian_iterate_examples() {
        let c = ctx();
        let arnold = build(&MapSpec::arnold(&c, c.real(0.3)), &c).unwrap();
        let x = c.real(0.41);
        let one = schwarzian_iterate(&arnold, 1, &x).unwrap();
        assert_eq!(one.total, arnold.schwarzian(&x).unwrap());
        let rot = build(&MapSpec::rigid(c.real(0.3)), &c).unwrap();
        assert_eq!(schwarzian_iterate(&rot, 20, &x).unwrap().total, 0);
        // composition
        let (j, jp) = (5, 7);
        let whole = schwarzian_iterate(&arnold, j + jp, &x).unwrap().total;
        let first = schwarzian_iterate(&arnold, j, &x).unwrap().total;
        let y = arnold.iterate_lift(&x, j);
        let second = schwarzian_iterate(&arnold, jp, &y).unwrap().total;
        let dfj = iterate_derivative(&arnold, &x, j);
        let recombined = second * Float::with_val(256, dfj.square_ref()) + first;
        let rel = Float::with_val(256, &whole - &recombined).abs() / whole.clone().abs();
        assert!(rel < c.tolerance(48), "{}", rel.to_f64());
        let s = schwarzian_iterate(&arnold, 9, &x).unwrap();
        let parts = Float::with_val(256, &s.sigma1 + &s.sigma2);
        assert!(Float::with_val(256, parts - &s.total).abs() < c.tolerance(64));
        assert!(schwarzian_iterate(&arnold, 2, &c.zero()).is_err());
    }

    #[test]
    fn rigid_rotation_bounds() {
        let c = ctx();
        let g = (c.real(5).sqrt() - 1u32) / 2u32;
        let rot = build(&MapSpec::rigid(g), &c).unwrap();
        let t = convergents(&ContinuedFraction::golden(10).unwrap()).unwrap();
        let p = build_partition(&rot, &rot.base_point(), &t, 5).unwrap();
        let k = c1_bound_constant(&rot, &p, 8).unwrap();
        assert!((k.k_n - 1.0).abs() < 1e-12 && (k.c1_norm - 1.0).abs() < 1e-12);
        let report = verify_negative_schwarzian(&rot, &p, 4);
        assert!(report.zero_family && !report.all_negative());
        let m = crd_return_map_max(&p).unwrap();
        assert!((m.max - 1.0).abs() < 1e-12);
        let coarse = build_partition(&rot, &rot.base_point(), &t, 2).unwrap();
        let kmax = admissible_k(&p, 3);
        assert!(kmax >= 1);
        let trace = decompose(&rot, &p, &coarse, 3, kmax, 0.1, 8).unwrap();
        assert_eq!(trace.blocks.len(), 1);
        assert_eq!(trace.blocks[0].len(), kmax);
        assert!(matches!(trace.blocks[0], Block::Diffeo { .. }));
        assert!((trace.max_diffeo_distortion - 1.0).abs() < 1e-12);
        assert!(trace.counts_ok());
    }

    #[test]
    fn tuned_arnold_checks() {
        let c = ctx();
        let map = tuned_arnold(&c);
        let t = convergents(&ContinuedFraction::golden(12).unwrap()).unwrap();
        let p = build_partition(&map, &map.base_point(), &t, 6).unwrap();
        let report = verify_negative_schwarzian(&map, &p, 8);
        assert!(report.all_negative());
        let k = c1_bound_constant(&map, &p, 8).unwrap();
        assert!(k.k_n >= 1.0 && k.k_n.is_finite());
        let m = crd_return_map_max(&p).unwrap();
        assert!(m.max >= 1.0 && m.max < explicit_crd_ceiling(1, 3));
        let coarse = build_partition(&map, &map.base_point(), &t, 3).unwrap();
        // atom starting at the critical point: Δ* contains c
        let pos = p.position_of_left(0).unwrap();
        let trace = decompose(&map, &p, &coarse, pos, 1, 0.1, 8).unwrap();
        assert_eq!(trace.blocks, vec![Block::Critical { start: 0, c_index: 0 }]);
        let kmax = admissible_k(&p, pos);
        let trace = decompose(&map, &p, &coarse, pos, kmax, 0.1, 8).unwrap();
        assert_eq!(trace.total_len(), kmax);
        assert!(trace.counts_ok(), "{trace:?}");
        assert!(decompose(&map, &p, &coarse, pos, kmax + 1, 0.1, 8).is_err());
        let times = critical_times(&map, &p).unwrap();
        assert!(!times.is_empty() && times[0].0 == 0);
    }

    #[test]
    fn koebe_examples() {
        assert!((koebe_bound(1.0, 3.0, 0.0) - 4.0).abs() < 1e-15);
        let c = ctx();
        let rot = build(&MapSpec::rigid(c.real(0.3)), &c).unwrap();
        let chk = koebe_check(&rot, 5, &pair(&c, [0.1, 0.2, 0.3, 0.4]), 1.0, 5.0, 0.0, 8).unwrap();
        assert!(chk.skipped.is_none() && (chk.measured - 1.0).abs() < 1e-12 && chk.holds());
        let arnold = build(&MapSpec::arnold(&c, c.real(0.3)), &c).unwrap();
        let chk = koebe_check(&arnold, 1, &pair(&c, [-0.1, 0.0, 0.1, 0.2]), 0.1, 1.0, 0.0, 8).unwrap();
        assert!(chk.skipped.is_some());
        assert_eq!(fit_koebe_constant(&[(4.0, 1.0, 0.5)]), 0.0);
        let c0 = fit_koebe_constant(&[(8.0, 1.0, 0.5)]);
        assert!((c0 - 2.0f64.ln() / 0.5).abs() < 1e-12);
    }

    #[test]
    fn ceiling_value() {
        let b = explicit_crd_ceiling(1, 3);
        assert!((b / 1.36e7 - 1.0).abs() < 0.01, "{b}");
        assert_eq!(explicit_crd_ceiling(0, 3), 1.5f64.powi(2));
    }

    #[test]
    fn variation_bounds_smooth_products() {
        let c = ctx();
        let arnold = build(&MapSpec::arnold(&c, c.real(0.3)), &c).unwrap();
        let pairs = vec![pair(&c, [0.2, 0.25, 0.3, 0.35]), pair(&c, [0.5, 0.55, 0.6, 0.7])];
        let (product, m) = cri_product(&arnold, &pairs).unwrap();
        assert_eq!(m, 1);
        let var = log_df_variation(&arnold, &c.real(0.2), &c.real(0.35), 256)
            + log_df_variation(&arnold, &c.real(0.5), &c.real(0.7), 256);
        assert!(product.to_f64().ln().abs() <= 2.0 * var.to_f64() * 1.01);
        let single = crd(&arnold, 1, &pairs[0]).unwrap().direct;
        assert_eq!(cri_product(&arnold, &pairs[..1]).unwrap().0, single);
    }
}
