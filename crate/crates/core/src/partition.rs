//! Dynamical partitions `P_n(x)` built from the orbit of a base point.
//!
//! `P_n` consists of the `q_{n+1}` atoms `f^i(I_n)` and the `q_n` atoms
//! `f^j(I_{n+1})`, where `I_n` has endpoints `x` and `f^{q_n}(x)`. Every
//! endpoint is an orbit point `f^k(x)` with `k < q_n + q_{n+1}`, so atoms are
//! stored by orbit index and adjacency is decided on indices; coordinates are
//! only used for lengths.

use std::cmp::Ordering;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use rug::Float;

use crate::arithmetic::ConvergentTable;
use crate::circlemap::TrigProductMap;
use crate::error::{Error, Result};
use crate::numerics::{
    circle_distance, cmp_real, forward_distance, format_scalar, reduce_mod1, CircleInterval,
    CirclePoint, PrecisionContext, Real,
};

/// Circle orbit `f^k(x)`, `k = 0..len`, as coordinates in `[0, 1)`.
#[derive(Clone, Debug)]
pub struct Orbit {
    points: Vec<Real>,
}

impl Orbit {
    pub fn compute(map: &TrigProductMap, base: &CirclePoint, len: usize) -> Self {
        let mut orbit = Self {
            points: vec![map.ctx().convert(base.value())],
        };
        orbit.extend(map, len);
        orbit
    }

    /// Continues the orbit until it holds at least `len` points.
    pub fn extend(&mut self, map: &TrigProductMap, len: usize) {
        self.points.reserve(len.saturating_sub(self.points.len()));
        while self.points.len() < len {
            let last = reduce_mod1(self.points.last().expect("non-empty orbit")).expect("finite");
            self.points.push(map.step(&last).into_inner());
        }
    }

    /// Orbit of a rigid rotation, `k rho mod 1`, computed without iteration.
    pub fn rotation(rho: &Real, len: usize) -> Self {
        let prec = rho.prec();
        let points = (0..len)
            .map(|k| {
                reduce_mod1(&Float::with_val(prec, rho * k as u64))
                    .expect("finite")
                    .into_inner()
            })
            .collect();
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, k: usize) -> &Real {
        &self.points[k]
    }

    pub fn points(&self) -> &[Real] {
        &self.points
    }

    pub fn base(&self) -> &Real {
        &self.points[0]
    }

    /// Times `k >= 1` at which `f^k(x)` comes strictly closer to `x` than
    /// every earlier iterate.
    pub fn closest_return_times(&self) -> Vec<usize> {
        let base = reduce_mod1(self.base()).expect("finite");
        let mut best: Option<Real> = None;
        let mut out = Vec::new();
        for (k, p) in self.points.iter().enumerate().skip(1) {
            let d = circle_distance(&base, &reduce_mod1(p).expect("finite"));
            if best.as_ref().is_none_or(|b| d < *b) {
                out.push(k);
                best = Some(d);
            }
        }
        out
    }

    /// Positive arc from orbit point `left` to orbit point `right`.
    pub fn arc(&self, left: usize, right: usize) -> Result<CircleInterval> {
        CircleInterval::between(&self.points[left], &self.points[right])
    }

    /// `|I_n|` oriented so that it contains `f^{q_n + q_{n+1}}(x)`, and
    /// whether it runs forward from `x`.
    pub fn closest_return_arc(&self, q_n: usize, q_next: usize) -> Result<(CircleInterval, bool)> {
        let needed = q_n + q_next + 1;
        if self.len() < needed {
            return Err(Error::Precondition(format!(
                "orbit has {} points, orientation of I_n needs {needed}",
                self.len()
            )));
        }
        let forward = forward_distance(self.base(), &self.points[q_n + q_next])
            < forward_distance(self.base(), &self.points[q_n]);
        let arc = if forward {
            self.arc(0, q_n)?
        } else {
            self.arc(q_n, 0)?
        };
        Ok((arc, forward))
    }
}

/// Distinct return times `q_n <= max` of a convergent table.
pub fn expected_return_times(table: &ConvergentTable, max: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=table.depth())
        .filter_map(|n| table.return_time(n).ok())
        .filter(|&q| q <= max)
        .collect();
    out.dedup();
    out
}

/// Which family an atom belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Generation {
    /// `f^i(I_n)`, `0 <= i < q_{n+1}`.
    Long,
    /// `f^j(I_{n+1})`, `0 <= j < q_n`.
    Short,
}

/// One atom `f^i(I)` of a partition.
#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub interval: CircleInterval,
    pub generation: Generation,
    /// The `i` in `f^i(I)`.
    pub orbit_index: usize,
    pub left_index: usize,
    pub right_index: usize,
    /// Forward distance from the base point to the left endpoint.
    pub offset: Real,
}

impl Atom {
    pub fn length(&self) -> &Real {
        self.interval.length()
    }
}

/// Level-`n` dynamical partition; atoms ordered forward from the base.
#[derive(Clone, Debug)]
pub struct DynamicalPartition {
    level: usize,
    q_n: usize,
    q_next: usize,
    forward: bool,
    orbit: Arc<Orbit>,
    atoms: Vec<Atom>,
    by_left: Vec<usize>,
    ctx: PrecisionContext,
}

/// Orbit length needed by partitions of level `n` (including wing images).
pub fn orbit_length_for(table: &ConvergentTable, n: usize) -> Result<usize> {
    let k = table.return_time(n)? + table.return_time(n + 1)?;
    Ok(2 * k + 2)
}

/// Orbit of `base` long enough for [`build_partition_with_orbit`] at `n`.
pub fn partition_orbit(
    map: &TrigProductMap,
    base: &CirclePoint,
    table: &ConvergentTable,
    n: usize,
) -> Result<Arc<Orbit>> {
    Ok(Arc::new(Orbit::compute(map, base, orbit_length_for(table, n)?)))
}

pub fn build_partition(
    map: &TrigProductMap,
    base: &CirclePoint,
    table: &ConvergentTable,
    n: usize,
) -> Result<DynamicalPartition> {
    let orbit = partition_orbit(map, base, table, n)?;
    build_partition_with_orbit(orbit, table, n, &map.ctx())
}

/// Builds `P_n` from a precomputed orbit of its base point.
pub fn build_partition_with_orbit(
    orbit: Arc<Orbit>,
    table: &ConvergentTable,
    n: usize,
    ctx: &PrecisionContext,
) -> Result<DynamicalPartition> {
    let q_n = table.return_time(n)?;
    let q_next = table.return_time(n + 1)?;
    let count = q_n + q_next;
    if orbit.len() < count + 1 {
        return Err(Error::Precondition(format!(
            "level {n} needs an orbit of {} points, got {}",
            count + 1,
            orbit.len()
        )));
    }
    let (_, forward) = orbit.closest_return_arc(q_n, q_next)?;
    let tolerance = ctx.tolerance(32);

    let mut atoms = Vec::with_capacity(count);
    let mut push = |generation, i: usize, left: usize, right: usize| -> Result<()> {
        let interval = orbit.arc(left, right)?;
        let offset = forward_distance(orbit.base(), orbit.point(left));
        atoms.push(Atom {
            interval,
            generation,
            orbit_index: i,
            left_index: left,
            right_index: right,
            offset,
        });
        Ok(())
    };
    for i in 0..q_next {
        let (l, r) = if forward { (i, i + q_n) } else { (i + q_n, i) };
        push(Generation::Long, i, l, r)?;
    }
    for j in 0..q_n {
        let (l, r) = if forward { (j + q_next, j) } else { (j, j + q_next) };
        push(Generation::Short, j, l, r)?;
    }
    atoms.sort_by(|a, b| cmp_real(&a.offset, &b.offset));

    let mut by_left = vec![usize::MAX; count];
    for (pos, atom) in atoms.iter().enumerate() {
        by_left[atom.left_index] = pos;
    }
    let mut total = ctx.zero();
    for (pos, atom) in atoms.iter().enumerate() {
        let next = &atoms[(pos + 1) % count];
        if atom.right_index != next.left_index {
            return Err(Error::TilingViolation {
                level: n,
                detail: format!(
                    "atom ending at f^{}(x) is followed by an atom starting at f^{}(x)",
                    atom.right_index, next.left_index
                ),
            });
        }
        if *atom.length() <= tolerance {
            return Err(Error::TilingViolation {
                level: n,
                detail: format!("atom at f^{}(x) is degenerate", atom.left_index),
            });
        }
        total += atom.length();
    }
    let defect = Float::with_val(ctx.bits(), &total - 1u32).abs();
    if defect > tolerance {
        return Err(Error::TilingViolation {
            level: n,
            detail: format!("atom lengths sum to 1 + {}", format_scalar(&defect)),
        });
    }
    if by_left.contains(&usize::MAX) {
        return Err(Error::TilingViolation {
            level: n,
            detail: "some orbit point starts no atom".into(),
        });
    }

    Ok(DynamicalPartition {
        level: n,
        q_n,
        q_next,
        forward,
        orbit,
        atoms,
        by_left,
        ctx: *ctx,
    })
}

impl DynamicalPartition {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn orbit(&self) -> &Arc<Orbit> {
        &self.orbit
    }

    pub fn ctx(&self) -> PrecisionContext {
        self.ctx
    }

    pub fn q_n(&self) -> usize {
        self.q_n
    }

    pub fn q_next(&self) -> usize {
        self.q_next
    }

    /// Whether `I_n` runs forward from the base point.
    pub fn forward(&self) -> bool {
        self.forward
    }

    /// Number of orbit points used as endpoints, `q_n + q_{n+1}`.
    pub fn endpoint_count(&self) -> usize {
        self.q_n + self.q_next
    }

    pub fn tolerance(&self) -> Real {
        self.ctx.tolerance(32)
    }

    /// Position (in the ordered atom list) of the atom starting at orbit
    /// point `k`.
    pub fn position_of_left(&self, k: usize) -> Option<usize> {
        self.by_left.get(k).copied()
    }

    /// `I_n` itself.
    pub fn i_n(&self) -> &Atom {
        let left = if self.forward { 0 } else { self.q_n };
        &self.atoms[self.by_left[left]]
    }

    /// `I_{n+1}` itself.
    pub fn i_next(&self) -> &Atom {
        let left = if self.forward { self.q_next } else { 0 };
        &self.atoms[self.by_left[left]]
    }

    /// Atom containing `x` (left-closed, right-open).
    pub fn locate(&self, x: &Real) -> usize {
        let off = forward_distance(self.orbit.base(), x);
        match self
            .atoms
            .binary_search_by(|a| cmp_real(&a.offset, &off))
        {
            Ok(pos) => pos,
            Err(pos) => pos - 1,
        }
    }

    /// Neighbors `(previous, next)` of the atom at `pos`.
    pub fn neighbors(&self, pos: usize) -> (usize, usize) {
        let n = self.atoms.len();
        ((pos + n - 1) % n, (pos + 1) % n)
    }

    /// Whether the arc between orbit points `left` and `right` lies inside
    /// a single atom. Endpoints that are partition points are matched by
    /// index; others by coordinates with a margin of the tiling tolerance.
    pub fn arc_in_single_atom(&self, left: usize, right: usize) -> Option<usize> {
        let k = self.endpoint_count();
        let tol = self.tolerance();
        let pos = if left < k {
            self.by_left[left]
        } else {
            let p = self.orbit.point(left);
            let pos = self.locate(p);
            let atom = &self.atoms[pos];
            let off = atom.interval.offset_of(p);
            if off <= tol || Float::with_val(self.ctx.bits(), atom.length() - &off) <= tol {
                return None;
            }
            pos
        };
        let atom = &self.atoms[pos];
        if right < k {
            return (atom.right_index == right).then_some(pos);
        }
        let start = atom.interval.offset_of(self.orbit.point(left));
        let len = forward_distance(self.orbit.point(left), self.orbit.point(right));
        let end = Float::with_val(self.ctx.bits(), &start + &len);
        let limit = Float::with_val(self.ctx.bits(), atom.length() - &tol);
        (end < limit).then_some(pos)
    }

    /// Copy with the atom at `pos` translated by `delta`; for fault
    /// injection in validation tests.
    pub fn perturbed(&self, pos: usize, delta: &Real) -> Result<Self> {
        let mut out = self.clone();
        let atom = &mut out.atoms[pos];
        atom.interval = atom.interval.shifted(delta)?;
        atom.offset = forward_distance(out.orbit.base(), atom.interval.left().value());
        Ok(out)
    }

    /// CSV `index, generation, orbit_index, left, length` in circle order.
    pub fn write_atoms_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "generation", "orbit_index", "left", "length"])?;
        for (pos, atom) in self.atoms.iter().enumerate() {
            let generation = match atom.generation {
                Generation::Long => self.level,
                Generation::Short => self.level + 1,
            };
            w.write_record([
                pos.to_string(),
                generation.to_string(),
                atom.orbit_index.to_string(),
                format_scalar(atom.interval.left().value()),
                format_scalar(atom.length()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Worst defects found by [`validate_partition`].
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionReport {
    pub level: usize,
    pub atom_count: usize,
    pub expected_count: usize,
    pub max_overlap: Real,
    pub max_gap: Real,
    /// `|sum of lengths - 1|`.
    pub measure_defect: Real,
    /// Largest amount by which a finer atom sticks out of its coarse atom.
    pub refinement_defect: Option<Real>,
    /// Coarse atoms that reappear unchanged in the finer partition.
    pub unrefined_atoms: Option<usize>,
    pub tolerance: Real,
}

impl PartitionReport {
    pub fn passed(&self) -> bool {
        self.atom_count == self.expected_count
            && self.max_overlap <= self.tolerance
            && self.max_gap <= self.tolerance
            && self.measure_defect <= self.tolerance
            && self
                .refinement_defect
                .as_ref()
                .is_none_or(|d| *d <= self.tolerance)
    }
}

/// Geometric validation from coordinates only: overlaps and gaps between
/// circle-consecutive atoms, total measure, and optionally refinement of a
/// coarser partition.
pub fn validate_partition(
    p: &DynamicalPartition,
    coarser: Option<&DynamicalPartition>,
) -> PartitionReport {
    let prec = p.ctx.bits();
    let mut atoms: Vec<&Atom> = p.atoms.iter().collect();
    atoms.sort_by(|a, b| cmp_real(&a.offset, &b.offset));
    let mut max_overlap = p.ctx.zero();
    let mut max_gap = p.ctx.zero();
    let mut total = p.ctx.zero();
    let count = atoms.len();
    for (i, atom) in atoms.iter().enumerate() {
        total += atom.length();
        let next = atoms[(i + 1) % count];
        let end = Float::with_val(prec, &atom.offset + atom.length());
        let mut next_start = next.offset.clone();
        if i + 1 == count {
            next_start += 1u32;
        }
        let diff = Float::with_val(prec, &next_start - &end);
        match diff.cmp0() {
            Some(Ordering::Less) => {
                let d = -diff;
                if d > max_overlap {
                    max_overlap = d;
                }
            }
            Some(Ordering::Greater) => {
                if diff > max_gap {
                    max_gap = diff;
                }
            }
            _ => {}
        }
    }
    let measure_defect = Float::with_val(prec, &total - 1u32).abs();

    let (refinement_defect, unrefined_atoms) = match coarser {
        Some(c) => {
            let mut worst = p.ctx.zero();
            let mut unrefined = 0usize;
            for atom in &p.atoms {
                let pos = c.locate(atom.interval.left().value());
                let coarse = &c.atoms[pos];
                let start = coarse.interval.offset_of(atom.interval.left().value());
                let end = Float::with_val(prec, &start + atom.length());
                let excess = Float::with_val(prec, &end - coarse.length());
                if excess > worst {
                    worst = excess;
                }
                if atom.left_index == coarse.left_index && atom.right_index == coarse.right_index {
                    unrefined += 1;
                }
            }
            (Some(worst), Some(unrefined))
        }
        None => (None, None),
    };

    PartitionReport {
        level: p.level,
        atom_count: count,
        expected_count: p.q_n + p.q_next,
        max_overlap,
        max_gap,
        measure_defect,
        refinement_defect,
        unrefined_atoms,
        tolerance: p.tolerance(),
    }
}

/// Largest number of arcs covering a single point, arcs taken half-open
/// `[left, left + length)`. Arcs of length `>= 1` wind and cover every point
/// `floor(length)` times plus once on the remainder.
pub fn multiplicity(intervals: &[CircleInterval]) -> usize {
    let mut base = 0usize;
    // (coordinate, +1 / -1)
    let mut events: Vec<(Real, i32)> = Vec::new();
    for iv in intervals {
        let prec = iv.length().prec();
        let whole = Float::with_val(prec, iv.length().floor_ref());
        base += whole.to_f64() as usize;
        let rest = Float::with_val(prec, iv.length() - &whole);
        if rest.is_zero() {
            continue;
        }
        let start = iv.left().value().clone();
        let end = Float::with_val(prec, &start + &rest);
        if end <= 1 {
            events.push((start, 1));
            events.push((end, -1));
        } else {
            events.push((start, 1));
            events.push((Float::with_val(prec, 1), -1));
            events.push((Float::with_val(prec, 0), 1));
            events.push((end - 1u32, -1));
        }
    }
    events.sort_by(|a, b| cmp_real(&a.0, &b.0).then(a.1.cmp(&b.1)));
    let mut current = 0i64;
    let mut best = 0i64;
    for (_, delta) in &events {
        current += i64::from(*delta);
        best = best.max(current);
    }
    base + best as usize
}

/// `L_n = I_{n+1}`, `I_n`, `R_n = f^{q_n}(I_n)` as orbit-index arcs, and
/// `T_n = L_n ∪ I_n ∪ R_n`; each entry is `(left_index, right_index)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WingIndices {
    pub left_wing: (usize, usize),
    pub middle: (usize, usize),
    pub right_wing: (usize, usize),
    pub whole: (usize, usize),
}

impl WingIndices {
    pub fn of(p: &DynamicalPartition) -> Self {
        let (q, qn1) = (p.q_n, p.q_next);
        if p.forward {
            Self {
                left_wing: (qn1, 0),
                middle: (0, q),
                right_wing: (q, 2 * q),
                whole: (qn1, 2 * q),
            }
        } else {
            Self {
                left_wing: (0, qn1),
                middle: (q, 0),
                right_wing: (2 * q, q),
                whole: (2 * q, qn1),
            }
        }
    }

    pub fn shifted(self, j: usize) -> Self {
        let s = |(a, b): (usize, usize)| (a + j, b + j);
        Self {
            left_wing: s(self.left_wing),
            middle: s(self.middle),
            right_wing: s(self.right_wing),
            whole: s(self.whole),
        }
    }
}

/// `f^j(T_n)` for `j = 0..q_{n+1}`.
pub fn t_n_family(p: &DynamicalPartition) -> Result<Vec<CircleInterval>> {
    let w = WingIndices::of(p);
    (0..p.q_next)
        .map(|j| {
            let (l, _) = w.shifted(j).whole;
            let left = reduce_mod1(p.orbit.point(l))?;
            // T_n may wind at level 0; rebuild the true length from parts.
            let parts = [w.shifted(j).left_wing, w.shifted(j).middle, w.shifted(j).right_wing];
            let mut len = p.ctx.zero();
            for (a, b) in parts {
                len += p.orbit.arc(a, b)?.length();
            }
            CircleInterval::new(left, len)
        })
        .collect()
}

/// `(|L_n^j| / |I_n^j|, |R_n^j| / |I_n^j|)` for `0 <= j <= q_{n+1}`.
pub fn wing_spaces(p: &DynamicalPartition, j: usize) -> Result<(Real, Real)> {
    if j > p.q_next {
        return Err(Error::Precondition(format!(
            "wing index j = {j} exceeds q_(n+1) = {}",
            p.q_next
        )));
    }
    let w = WingIndices::of(p).shifted(j);
    let needed = w.right_wing.0.max(w.right_wing.1) + 1;
    if p.orbit.len() < needed {
        return Err(Error::Precondition(format!(
            "orbit too short for wing index {j}"
        )));
    }
    let len = |(a, b): (usize, usize)| -> Result<Real> { Ok(p.orbit.arc(a, b)?.length().clone()) };
    let mid = len(w.middle)?;
    let l = len(w.left_wing)? / &mid;
    let r = len(w.right_wing)? / &mid;
    Ok((l, r))
}

/// `min_j min(|L^j|, |R^j|) / |I^j|` over `j = 0..=q_{n+1}`.
pub fn empirical_tau(p: &DynamicalPartition) -> Result<Real> {
    let mut best: Option<Real> = None;
    for j in 0..=p.q_next {
        let (l, r) = wing_spaces(p, j)?;
        let m = if l < r { l } else { r };
        if best.as_ref().is_none_or(|b| m < *b) {
            best = Some(m);
        }
    }
    Ok(best.expect("at least one index"))
}

/// Measured constants of one level.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundsRow {
    pub level: usize,
    /// Max length ratio over circle-adjacent atom pairs of `P_n`.
    pub b_n: f64,
    /// Max `|Δ|/|Δ′|` over `Δ ∈ P_{n+2}` inside `Δ′ ∈ P_n`.
    pub mu_n: f64,
    /// `|I_{n+1}(c_i)| / |I_n(c_i)|` for each critical point (the base point
    /// for rigid rotations).
    pub scaling: Vec<f64>,
}

/// Max ratio of lengths over circle-adjacent pairs.
pub fn adjacent_ratio_max(p: &DynamicalPartition) -> Real {
    let prec = p.ctx.bits();
    let mut best = p.ctx.one();
    for (pos, atom) in p.atoms.iter().enumerate() {
        let next = &p.atoms[(pos + 1) % p.atoms.len()];
        let r1 = Float::with_val(prec, atom.length() / next.length());
        let r2 = Float::with_val(prec, next.length() / atom.length());
        let r = if r1 > r2 { r1 } else { r2 };
        if r > best {
            best = r;
        }
    }
    best
}

/// Max `|Δ|/|Δ′|` over atoms `Δ` of `fine` and the atom `Δ′` of `coarse`
/// containing them. Both partitions must share the base point.
pub fn nested_ratio_max(fine: &DynamicalPartition, coarse: &DynamicalPartition) -> Result<Real> {
    let prec = fine.ctx.bits();
    let mut best = fine.ctx.zero();
    for atom in &fine.atoms {
        let pos = coarse.locate(atom.interval.left().value());
        let parent = &coarse.atoms[pos];
        if !parent.interval.contains_interval(&atom.interval)
            && !close_containment(parent, atom, &coarse.tolerance())
        {
            return Err(Error::TilingViolation {
                level: fine.level,
                detail: format!(
                    "atom at f^{}(x) is not inside a level-{} atom",
                    atom.left_index, coarse.level
                ),
            });
        }
        let r = Float::with_val(prec, atom.length() / parent.length());
        if r > best {
            best = r;
        }
    }
    Ok(best)
}

fn close_containment(parent: &Atom, atom: &Atom, tol: &Real) -> bool {
    let prec = tol.prec();
    let start = parent.interval.offset_of(atom.interval.left().value());
    let end = Float::with_val(prec, &start + atom.length());
    end <= Float::with_val(prec, parent.length() + tol)
}

/// `|I_{n+1}| / |I_n|` from an orbit of at least `q_{n+1} + q_{n+2} + 1`
/// points.
pub fn scaling_ratio(orbit: &Orbit, table: &ConvergentTable, n: usize) -> Result<Real> {
    let (q0, q1, q2) = (
        table.return_time(n)?,
        table.return_time(n + 1)?,
        table.return_time(n + 2)?,
    );
    let (i_n, _) = orbit.closest_return_arc(q0, q1)?;
    let (i_next, _) = orbit.closest_return_arc(q1, q2)?;
    Ok(Float::with_val(
        i_n.length().prec(),
        i_next.length() / i_n.length(),
    ))
}

/// Base points for scaling ratios: every critical point, or 0.
pub fn scaling_bases(map: &TrigProductMap) -> Vec<CirclePoint> {
    if map.is_rigid() {
        vec![map.base_point()]
    } else {
        map.critical_points()
            .iter()
            .map(|c| c.position.clone())
            .collect()
    }
}

/// Measures `B_n`, `mu_n` and `s_n(c_i)`. Needs the table to depth `n + 3`.
pub fn bounds_row(map: &TrigProductMap, table: &ConvergentTable, n: usize) -> Result<BoundsRow> {
    let base = map.base_point();
    let orbit = partition_orbit(map, &base, table, n + 2)?;
    bounds_row_with_orbit(map, &orbit, table, n)
}

/// [`bounds_row`] reusing an orbit of the base point long enough for level
/// `n + 2`.
pub fn bounds_row_with_orbit(
    map: &TrigProductMap,
    orbit: &Arc<Orbit>,
    table: &ConvergentTable,
    n: usize,
) -> Result<BoundsRow> {
    let ctx = map.ctx();
    let coarse = build_partition_with_orbit(Arc::clone(orbit), table, n, &ctx)?;
    let fine = build_partition_with_orbit(Arc::clone(orbit), table, n + 2, &ctx)?;
    let b_n = adjacent_ratio_max(&coarse).to_f64();
    let mu_n = nested_ratio_max(&fine, &coarse)?.to_f64();
    let q_needed = table.return_time(n + 1)? + table.return_time(n + 2)? + 1;
    let base = map.base_point();
    let scaling = scaling_bases(map)
        .par_iter()
        .map(|c| {
            if *c == base && orbit.len() >= q_needed {
                scaling_ratio(orbit, table, n).map(|r| r.to_f64())
            } else {
                let o = Orbit::compute(map, c, q_needed);
                scaling_ratio(&o, table, n).map(|r| r.to_f64())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundsRow {
        level: n,
        b_n,
        mu_n,
        scaling,
    })
}
