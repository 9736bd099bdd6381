//! Batch experiments: tune a family of maps to one rotation number, then
//! measure real bounds, cross-ratio distortion of return maps, scaling
//! ratios and the distortion of conjugacies level by level.
//!
//! Every task is single-threaded and deterministic; parallelism only maps
//! over maps and levels and results are collected in input order, so equal
//! configurations give byte-identical output files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use rug::Float;
use serde::{Deserialize, Serialize};

use crate::arithmetic::{convergents, ContinuedFraction, ConvergentTable};
use crate::circlemap::{build, MapSpec, RawSpec, TrigProductMap};
use crate::distortion::{
    admissible_k, c1_bound_constant, crd_return_map_max, decompose, explicit_crd_ceiling,
    verify_negative_schwarzian,
};
use crate::error::{Error, Result};
use crate::numerics::{cmp_real, format_scalar, forward_distance, PrecisionContext, Real};
use crate::partition::{
    bounds_row_with_orbit, build_partition_with_orbit, empirical_tau, multiplicity,
    partition_orbit, t_n_family, validate_partition, Orbit,
};
use crate::rotation::{tune, TuneResult};
use crate::svg::{line_chart, Series};

pub const DEFAULT_GRID: usize = 16;

/// Levels measured on top of the deepest requested one: `P_{n+2}` and the
/// return time `q_{n+3}` are needed for `mu_n` and scaling ratios.
const LOOKAHEAD: usize = 3;

/// A map family member with its offset still to be tuned.
#[derive(Clone, Debug, PartialEq)]
pub struct MapTemplate {
    pub id: String,
    pub spec: MapSpec,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub maps: Vec<MapTemplate>,
    pub target: ContinuedFraction,
    pub target_label: String,
    /// Inclusive range of partition levels.
    pub levels: (usize, usize),
    pub grid: usize,
    pub ctx: PrecisionContext,
    pub resolution_bits: u32,
    pub output: Option<PathBuf>,
    /// Map id pairs for conjugacy estimates.
    pub qs_pairs: Vec<(String, String)>,
    /// Levels at which conjugacies are probed.
    pub qs_levels: (usize, usize),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMapEntry {
    id: String,
    #[serde(flatten)]
    spec: RawSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    target: String,
    levels: Option<[usize; 2]>,
    grid: Option<usize>,
    bits: Option<u32>,
    resolution_bits: Option<u32>,
    output: Option<String>,
    #[serde(default)]
    qs_pairs: Vec<[String; 2]>,
    qs_levels: Option<[usize; 2]>,
    #[serde(default)]
    maps: Vec<RawMapEntry>,
}

/// Parses `golden`, `silver`, `cf:[a1,a2,...]` or
/// `periodic:[h1,...;c1,c2,...]` (the part before `;` is a non-repeating
/// head and may be omitted).
pub fn parse_target(label: &str, depth: usize) -> Result<ContinuedFraction> {
    let label = label.trim();
    let list = |body: &str| -> Result<Vec<u64>> {
        body.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<u64>()
                    .map_err(|_| Error::Config(format!("bad partial quotient `{s}`")))
            })
            .collect()
    };
    let bracketed = |rest: &str| -> Result<String> {
        let rest = rest.trim();
        rest.strip_prefix('[')
            .and_then(|r| r.strip_suffix(']'))
            .map(str::to_owned)
            .ok_or_else(|| Error::Config(format!("expected `[...]` in target `{label}`")))
    };
    match label {
        "golden" => ContinuedFraction::golden(depth),
        "silver" => ContinuedFraction::silver(depth),
        _ => {
            if let Some(rest) = label.strip_prefix("cf:") {
                ContinuedFraction::new(list(&bracketed(rest)?)?)
            } else if let Some(rest) = label.strip_prefix("periodic:") {
                let body = bracketed(rest)?;
                let (head, cycle) = match body.split_once(';') {
                    Some((h, c)) => (list(h)?, list(c)?),
                    None => (Vec::new(), list(&body)?),
                };
                ContinuedFraction::periodic(&head, &cycle, depth)
            } else {
                Err(Error::Config(format!(
                    "unknown target `{label}` (golden, silver, cf:[..], periodic:[..])"
                )))
            }
        }
    }
}

impl ExperimentConfig {
    /// Configuration with precision raised for `levels.1` and default grid
    /// and resolution.
    pub fn new(target_label: &str, maps: Vec<(String, Vec<(f64, u32)>)>, levels: (usize, usize)) -> Result<Self> {
        let ctx = PrecisionContext::for_depth(levels.1 + 2);
        let maps = maps
            .into_iter()
            .map(|(id, pts)| {
                Ok(MapTemplate {
                    id,
                    spec: MapSpec::with_points(&ctx, &pts, ctx.zero())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(target_label, maps, levels, DEFAULT_GRID, ctx, None, None)
    }

    fn assemble(
        target_label: &str,
        maps: Vec<MapTemplate>,
        levels: (usize, usize),
        grid: usize,
        ctx: PrecisionContext,
        resolution_bits: Option<u32>,
        output: Option<PathBuf>,
    ) -> Result<Self> {
        if levels.0 > levels.1 {
            return Err(Error::Config(format!("empty level range {levels:?}")));
        }
        if grid == 0 {
            return Err(Error::Config("grid must be positive".into()));
        }
        let depth = levels.1 + LOOKAHEAD;
        let target = parse_target(target_label, depth + 1)?;
        let mut ids: Vec<&str> = maps.iter().map(|m| m.id.as_str()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("map ids must be unique".into()));
        }
        // each level shrinks parameter windows by a factor of roughly 3, so
        // deep geometry needs about two bits per level beyond the depth
        let resolution_bits = resolution_bits.unwrap_or((2 * depth + 10) as u32);
        if resolution_bits + 32 > ctx.bits() {
            return Err(Error::Config(format!(
                "resolution of {resolution_bits} bits needs more than {} bits of precision",
                ctx.bits()
            )));
        }
        let hi = levels.1.saturating_sub(1).max(levels.0);
        Ok(Self {
            maps,
            target,
            target_label: target_label.to_owned(),
            levels,
            grid,
            ctx,
            resolution_bits,
            output,
            qs_pairs: Vec::new(),
            qs_levels: (hi.saturating_sub(2).max(levels.0), hi),
        })
    }

    /// Cubic maps at three positions, a bicritical map and a quintic map.
    pub fn default_suite(target_label: &str, max_level: usize) -> Result<Self> {
        let mut cfg = Self::new(
            target_label,
            vec![
                ("cubic_c0".into(), vec![(0.0, 3)]),
                ("cubic_c03".into(), vec![(0.3, 3)]),
                ("cubic_c07".into(), vec![(0.7, 3)]),
                ("bicritical".into(), vec![(0.0, 3), (0.5, 3)]),
                ("quintic".into(), vec![(0.0, 5)]),
            ],
            (1, max_level),
        )?;
        cfg.qs_pairs = vec![
            ("cubic_c0".into(), "cubic_c03".into()),
            ("cubic_c0".into(), "quintic".into()),
        ];
        Ok(cfg)
    }

    /// The three cubic maps of the default suite.
    pub fn beau_suite(target_label: &str, max_level: usize) -> Result<Self> {
        Self::default_suite(target_label, max_level)?.subset(&["cubic_c0", "cubic_c03", "cubic_c07"])
    }

    /// Same configuration restricted to the listed map ids, in that order.
    pub fn subset(&self, ids: &[&str]) -> Result<Self> {
        let maps = ids
            .iter()
            .map(|id| {
                self.maps
                    .iter()
                    .find(|m| m.id == *id)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("no map with id `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = self.clone();
        out.qs_pairs
            .retain(|(f, g)| ids.contains(&f.as_str()) && ids.contains(&g.as_str()));
        out.maps = maps;
        Ok(out)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let levels = raw.levels.map(|l| (l[0], l[1])).unwrap_or((1, 10));
        let ctx = match raw.bits {
            Some(b) => PrecisionContext::new(b)?,
            None => PrecisionContext::for_depth(levels.1 + 2),
        };
        let maps = raw
            .maps
            .iter()
            .map(|m| {
                if m.spec.a.is_some() {
                    return Err(Error::Config(format!(
                        "map `{}` sets `a`; experiment maps are templates whose offset is tuned",
                        m.id
                    )));
                }
                Ok(MapTemplate {
                    id: m.id.clone(),
                    spec: m.spec.to_spec(&ctx)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cfg = Self::assemble(
            &raw.target,
            maps,
            levels,
            raw.grid.unwrap_or(DEFAULT_GRID),
            ctx,
            raw.resolution_bits,
            raw.output.map(PathBuf::from),
        )?;
        for [f, g] in raw.qs_pairs {
            for id in [&f, &g] {
                if !cfg.maps.iter().any(|m| &m.id == id) {
                    return Err(Error::Config(format!("qs pair names unknown map `{id}`")));
                }
            }
            cfg.qs_pairs.push((f, g));
        }
        if let Some([a, b]) = raw.qs_levels {
            if a > b || b > cfg.levels.1 {
                return Err(Error::Config(format!("qs levels [{a}, {b}] outside the level range")));
            }
            cfg.qs_levels = (a, b);
        }
        Ok(cfg)
    }

    /// Depth to which every map is tuned.
    pub fn tuning_depth(&self) -> usize {
        self.levels.1 + LOOKAHEAD
    }
}

/// A tuned map with the orbit of its base point and the target's table.
#[derive(Clone, Debug)]
pub struct LabMap {
    pub id: String,
    pub map: TrigProductMap,
    /// `None` for rigid rotations, whose offset is the target itself.
    pub tune: Option<TuneResult>,
    pub table: ConvergentTable,
    pub orbit: Arc<Orbit>,
}

/// Per-map status line of a report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MapOutcome {
    pub id: String,
    pub criticalities: Vec<u32>,
    pub positions: Vec<f64>,
    pub a_star: Option<String>,
    pub verified_depth: Option<usize>,
    pub tune_iterations: Option<usize>,
    pub error: Option<String>,
}

fn outcome(template: &MapTemplate, lab: Option<&LabMap>, error: Option<String>) -> MapOutcome {
    MapOutcome {
        id: template.id.clone(),
        criticalities: template.spec.criticalities(),
        positions: template
            .spec
            .critical_points
            .iter()
            .map(|c| c.position.to_f64())
            .collect(),
        a_star: lab.map(|l| format_scalar(l.map.offset())),
        verified_depth: lab.and_then(|l| l.tune.as_ref().map(|t| t.verified_depth)),
        tune_iterations: lab.and_then(|l| l.tune.as_ref().map(|t| t.iterations)),
        error,
    }
}

/// Tunes one template and computes its base orbit for the deepest level.
pub fn prepare_map(template: &MapTemplate, config: &ExperimentConfig) -> Result<LabMap> {
    let ctx = config.ctx;
    let depth = config.tuning_depth();
    let shape = build(&template.spec, &ctx)?;
    let (map, tune) = if shape.is_rigid() {
        // rho(x -> x + a) = a: take the target at full precision
        let exact = config
            .target
            .extend_to(ctx.bits() as usize)
            .unwrap_or_else(|| config.target.clone());
        (shape.with_offset(exact.value(&ctx))?, None)
    } else {
        let res = tune(&shape, &config.target, depth, config.resolution_bits)?;
        (shape.with_offset(res.a_star.clone())?, Some(res))
    };
    let cf = config
        .target
        .extend_to(depth + 1)
        .filter(|cf| cf.len() > depth)
        .ok_or_else(|| {
            Error::Config(format!(
                "target has {} partial quotients; levels up to {} need {}",
                config.target.len(),
                config.levels.1,
                depth + 1
            ))
        })?;
    let table = convergents(&cf)?;
    let orbit = partition_orbit(&map, &map.base_point(), &table, config.levels.1 + 2)?;
    Ok(LabMap {
        id: template.id.clone(),
        map,
        tune,
        table,
        orbit,
    })
}

/// Tunes all maps in parallel; failures are reported, not fatal.
pub fn prepare(config: &ExperimentConfig) -> (Vec<LabMap>, Vec<MapOutcome>) {
    let results: Vec<Result<LabMap>> = config
        .maps
        .par_iter()
        .map(|t| prepare_map(t, config))
        .collect();
    let mut labs = Vec::new();
    let mut outcomes = Vec::new();
    for (template, r) in config.maps.iter().zip(results) {
        match r {
            Ok(lab) => {
                outcomes.push(outcome(template, Some(&lab), None));
                labs.push(lab);
            }
            Err(e) => outcomes.push(outcome(template, None, Some(e.to_string()))),
        }
    }
    (labs, outcomes)
}

/// Which measurements to take per level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MeasureSet {
    pub crd: bool,
    pub c1: bool,
    pub schwarzian: bool,
    pub decomposition: bool,
}

impl MeasureSet {
    pub const ALL: Self = Self {
        crd: true,
        c1: true,
        schwarzian: true,
        decomposition: true,
    };
    pub const BOUNDS_ONLY: Self = Self {
        crd: false,
        c1: false,
        schwarzian: false,
        decomposition: false,
    };
    pub const CRD: Self = Self {
        crd: true,
        ..Self::BOUNDS_ONLY
    };
}

/// Everything measured for one map at one level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelRecord {
    pub map_id: String,
    pub level: usize,
    pub atoms: usize,
    pub partition_valid: bool,
    pub b_n: f64,
    pub mu_n: f64,
    /// `s_n(c_i)` per critical point.
    pub scaling: Vec<f64>,
    pub tau: f64,
    /// Multiplicity of `{f^j(T_n)}`, `j < q_{n+1}`.
    pub multiplicity: usize,
    pub crd_max: Option<f64>,
    pub crd_k: Option<usize>,
    pub ceiling: f64,
    pub k_n: Option<f64>,
    pub c1_norm: Option<f64>,
    pub schwarzian_negative: Option<bool>,
    pub schwarzian_worst: Option<f64>,
    pub diffeo_blocks: Option<usize>,
    pub critical_steps: Option<usize>,
    pub decomposition_counts_ok: Option<bool>,
    pub max_diffeo_distortion: Option<f64>,
}

/// Measures one level of a prepared map.
pub fn measure_level(lab: &LabMap, n: usize, grid: usize, what: MeasureSet) -> Result<LevelRecord> {
    let map = &lab.map;
    let ctx = map.ctx();
    let p = build_partition_with_orbit(Arc::clone(&lab.orbit), &lab.table, n, &ctx)?;
    let bounds = bounds_row_with_orbit(map, &lab.orbit, &lab.table, n)?;
    let valid = validate_partition(&p, None).passed();
    let tau = empirical_tau(&p)?.to_f64();
    let mult = multiplicity(&t_n_family(&p)?);
    let ceiling = explicit_crd_ceiling(map.critical_count(), map.spec().max_criticality());
    let crd = if what.crd || what.decomposition {
        crd_return_map_max(&p).ok()
    } else {
        None
    };
    let c1 = if what.c1 {
        Some(c1_bound_constant(map, &p, grid)?)
    } else {
        None
    };
    let schwarz = if what.schwarzian && !map.is_rigid() {
        Some(verify_negative_schwarzian(map, &p, grid))
    } else {
        None
    };
    let trace = match (&crd, what.decomposition) {
        (Some(c), true) => {
            let coarse = build_partition_with_orbit(Arc::clone(&lab.orbit), &lab.table, n / 2, &ctx)?;
            let k = admissible_k(&p, c.atom);
            decompose(map, &p, &coarse, c.atom, k, 0.1, grid.min(8)).ok()
        }
        _ => None,
    };
    Ok(LevelRecord {
        map_id: lab.id.clone(),
        level: n,
        atoms: p.len(),
        partition_valid: valid,
        b_n: bounds.b_n,
        mu_n: bounds.mu_n,
        scaling: bounds.scaling,
        tau,
        multiplicity: mult,
        crd_max: crd.as_ref().filter(|_| what.crd).map(|c| c.max),
        crd_k: crd.as_ref().filter(|_| what.crd).map(|c| c.k),
        ceiling,
        k_n: c1.as_ref().map(|c| c.k_n),
        c1_norm: c1.as_ref().map(|c| c.c1_norm),
        schwarzian_negative: schwarz.as_ref().map(|s| s.all_negative()),
        schwarzian_worst: schwarz.as_ref().map(|s| s.long.worst.max(s.short.worst)),
        diffeo_blocks: trace.as_ref().map(|t| t.diffeo_count),
        critical_steps: trace.as_ref().map(|t| t.critical_count),
        decomposition_counts_ok: trace.as_ref().map(|t| t.counts_ok()),
        max_diffeo_distortion: trace.as_ref().map(|t| t.max_diffeo_distortion),
    })
}

/// All levels of all maps, in map order then level order.
pub fn measure_all(labs: &[LabMap], config: &ExperimentConfig, what: MeasureSet) -> Result<Vec<LevelRecord>> {
    let tasks: Vec<(usize, usize)> = (0..labs.len())
        .flat_map(|i| (config.levels.0..=config.levels.1).map(move |n| (i, n)))
        .collect();
    tasks
        .par_iter()
        .map(|&(i, n)| measure_level(&labs[i], n, config.grid, what))
        .collect()
}

/// `max_f B_n(f) / min_f B_n(f)` for one group of maps.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpreadRow {
    pub group: String,
    pub level: usize,
    pub spread: f64,
}

/// Estimated quasi-symmetric distortion of the conjugacy between two maps.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConjugacyEstimate {
    pub pair_id: String,
    pub f_id: String,
    pub g_id: String,
    pub level: usize,
    /// Orbit points on which `h` is defined.
    pub points: usize,
    pub sigma_max: f64,
    /// Orbit index of the worst endpoint.
    pub worst_index: usize,
}

/// Named check recorded in the summary.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundsReport {
    pub target: String,
    pub bits: u32,
    pub levels: (usize, usize),
    pub maps: Vec<MapOutcome>,
    pub rows: Vec<LevelRecord>,
    pub spread: Vec<SpreadRow>,
    pub qs: Vec<ConjugacyEstimate>,
    pub assertions: Vec<Assertion>,
}

impl BoundsReport {
    pub fn empty(config: &ExperimentConfig) -> Self {
        Self {
            target: config.target_label.clone(),
            bits: config.ctx.bits(),
            levels: config.levels,
            maps: Vec::new(),
            rows: Vec::new(),
            spread: Vec::new(),
            qs: Vec::new(),
            assertions: Vec::new(),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn rows_for<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a LevelRecord> + 'a {
        self.rows.iter().filter(move |r| r.map_id == id)
    }
}

fn group_key(t: &MapTemplate) -> String {
    let mut d = t.spec.criticalities();
    d.sort_unstable();
    let ds: Vec<String> = d.iter().map(u32::to_string).collect();
    format!("N={} d=({})", d.len(), ds.join(","))
}

/// Spread per level for each group of at least two maps sharing `N` and
/// the multiset of criticalities.
pub fn spreads(config: &ExperimentConfig, rows: &[LevelRecord]) -> Vec<SpreadRow> {
    let mut groups: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for t in &config.maps {
        groups.entry(group_key(t)).or_default().push(&t.id);
    }
    let mut out = Vec::new();
    for (group, ids) in groups.iter().filter(|(_, ids)| ids.len() >= 2) {
        for n in config.levels.0..=config.levels.1 {
            let bs: Vec<f64> = rows
                .iter()
                .filter(|r| r.level == n && ids.contains(&r.map_id.as_str()))
                .map(|r| r.b_n)
                .collect();
            if bs.len() == ids.len() {
                let max = bs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let min = bs.iter().copied().fold(f64::INFINITY, f64::min);
                out.push(SpreadRow {
                    group: group.clone(),
                    level: n,
                    spread: max / min,
                });
            }
        }
    }
    out
}

/// `values[i+1] <= values[i] (1 + slack)` over the last `window` values.
pub fn non_increasing_tail(values: &[f64], window: usize, slack: f64) -> bool {
    let tail = &values[values.len().saturating_sub(window)..];
    tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + slack))
}

/// Every value of the last `window` lies within `tol` (relative) of their
/// mean.
pub fn stable_tail(values: &[f64], window: usize, tol: f64) -> bool {
    let tail = &values[values.len().saturating_sub(window)..];
    if tail.is_empty() {
        return false;
    }
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    tail.iter().all(|v| (v - mean).abs() <= tol * mean.abs())
}

fn beau_assertions(spread: &[SpreadRow]) -> Vec<Assertion> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for s in spread {
        groups.entry(&s.group).or_default().push(s.spread);
    }
    groups
        .into_iter()
        .map(|(g, v)| {
            let tail: Vec<String> = v[v.len().saturating_sub(5)..]
                .iter()
                .map(|x| format!("{x:.6}"))
                .collect();
            Assertion {
                name: format!("beau_trend[{g}]"),
                passed: v.len() >= 2 && non_increasing_tail(&v, 5, 0.05),
                detail: format!("spread over the last levels: {}", tail.join(", ")),
            }
        })
        .collect()
}

fn crd_assertions(report: &BoundsReport) -> Vec<Assertion> {
    let mut out = Vec::new();
    for m in &report.maps {
        let rows: Vec<&LevelRecord> = report.rows_for(&m.id).filter(|r| r.crd_max.is_some()).collect();
        if rows.is_empty() {
            continue;
        }
        let worst = rows
            .iter()
            .map(|r| (r.crd_max.unwrap_or(1.0), r.ceiling))
            .fold((0.0f64, 0.0f64), |a, b| if b.0 > a.0 { b } else { a });
        out.push(Assertion {
            name: format!("crd_ceiling[{}]", m.id),
            passed: rows.iter().all(|r| r.crd_max.is_some_and(|c| c <= r.ceiling)),
            detail: format!("max measured {:.6} against ceiling {:.6e}", worst.0, worst.1),
        });
        let values: Vec<f64> = rows.iter().filter_map(|r| r.crd_max).collect();
        out.push(Assertion {
            name: format!("crd_stable[{}]", m.id),
            passed: stable_tail(&values, 3, 0.2),
            detail: format!(
                "last levels: {:?}",
                &values[values.len().saturating_sub(3)..]
            ),
        });
    }
    out
}

fn tuning_assertion(maps: &[MapOutcome]) -> Assertion {
    let failed: Vec<&str> = maps
        .iter()
        .filter(|m| m.error.is_some())
        .map(|m| m.id.as_str())
        .collect();
    Assertion {
        name: "tuning".into(),
        passed: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{} maps tuned", maps.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    }
}

fn check_homogeneous(config: &ExperimentConfig) -> Result<()> {
    if config.maps.len() < 2 {
        return Err(Error::Config("a beau experiment needs at least two maps".into()));
    }
    let key = group_key(&config.maps[0]);
    if let Some(m) = config.maps.iter().find(|m| group_key(m) != key) {
        return Err(Error::Config(format!(
            "map `{}` has {} but `{}` has {key}; beau maps must share N and criticalities",
            m.id,
            group_key(m),
            config.maps[0].id
        )));
    }
    Ok(())
}

/// Real and beau bounds: full per-level measurements plus spread across
/// maps. Requires maps sharing `N` and criticalities.
pub fn run_beau(config: &ExperimentConfig) -> Result<BoundsReport> {
    check_homogeneous(config)?;
    let (labs, maps) = prepare(config);
    let rows = measure_all(&labs, config, MeasureSet::ALL)?;
    let spread = spreads(config, &rows);
    let mut report = BoundsReport {
        maps,
        rows,
        spread,
        ..BoundsReport::empty(config)
    };
    report.assertions.push(tuning_assertion(&report.maps));
    report.assertions.extend(beau_assertions(&report.spread));
    report.assertions.extend(crd_assertions(&report));
    Ok(report)
}

/// Largest return-map cross-ratio distortion per map and level. A value
/// above the explicit ceiling is a hard error.
pub fn run_crd_universal(config: &ExperimentConfig) -> Result<BoundsReport> {
    let (labs, maps) = prepare(config);
    let rows = measure_all(&labs, config, MeasureSet::CRD)?;
    let mut report = BoundsReport {
        maps,
        rows,
        ..BoundsReport::empty(config)
    };
    report.assertions.push(tuning_assertion(&report.maps));
    report.assertions.extend(crd_assertions(&report));
    if let Some(r) = report
        .rows
        .iter()
        .find(|r| r.crd_max.is_some_and(|c| c > r.ceiling))
    {
        return Err(Error::CeilingViolation(format!(
            "map `{}` level {}: CrD {} exceeds {}",
            r.map_id,
            r.level,
            r.crd_max.unwrap_or(f64::NAN),
            r.ceiling
        )));
    }
    Ok(report)
}

/// Scaling ratios at every critical point.
pub fn run_scaling(config: &ExperimentConfig) -> Result<BoundsReport> {
    let (labs, maps) = prepare(config);
    let rows = measure_all(&labs, config, MeasureSet::BOUNDS_ONLY)?;
    let mut report = BoundsReport {
        maps,
        rows,
        ..BoundsReport::empty(config)
    };
    report.assertions.push(tuning_assertion(&report.maps));
    report.assertions.extend(scaling_assertions(&report));
    Ok(report)
}

fn scaling_assertions(report: &BoundsReport) -> Vec<Assertion> {
    report
        .maps
        .iter()
        .filter(|m| m.error.is_none())
        .map(|m| {
            let rows: Vec<&LevelRecord> = report.rows_for(&m.id).collect();
            let ok = rows
                .iter()
                .all(|r| r.scaling.iter().all(|s| s.is_finite() && *s > 0.0));
            let trend: Vec<String> = rows
                .windows(2)
                .map(|w| {
                    let d = w[1]
                        .scaling
                        .iter()
                        .zip(&w[0].scaling)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    format!("{d:.3e}")
                })
                .collect();
            Assertion {
                name: format!("scaling_bounded[{}]", m.id),
                passed: ok,
                detail: format!("|s_(n+1) - s_n|: {}", trend.join(", ")),
            }
        })
        .collect()
}

/// Distortion of the conjugacy `h` with `h(f^k(c_0^f)) = g^k(c_0^g)` for
/// `k < q_n + q_{n+1}`, extended piecewise affinely. At each orbit point
/// `x` the ratio `|h(x+t) - h(x)| / |h(x) - h(x-t)|` and its reciprocal are
/// probed at `t = s 2^-m`, `m = 0..=3`, where `s` is the larger of the two
/// adjacent atom lengths.
pub fn run_qs(f: &LabMap, g: &LabMap, level: usize) -> Result<ConjugacyEstimate> {
    if f.table.continued_fraction().quotients() != g.table.continued_fraction().quotients() {
        return Err(Error::CombinatoricsMismatch("maps were tuned to different targets".into()));
    }
    if f.map.critical_count() != g.map.critical_count() {
        return Err(Error::CombinatoricsMismatch(format!(
            "{} critical points against {}",
            f.map.critical_count(),
            g.map.critical_count()
        )));
    }
    let k = f.table.return_time(level)? + f.table.return_time(level + 1)?;
    if f.orbit.len() < k || g.orbit.len() < k {
        return Err(Error::Precondition(format!("orbits too short for level {level}")));
    }
    let (sigma, worst) = conjugacy_distortion(&f.orbit, &g.orbit, k)?;
    Ok(ConjugacyEstimate {
        pair_id: format!("{}~{}", f.id, g.id),
        f_id: f.id.clone(),
        g_id: g.id.clone(),
        level,
        points: k,
        sigma_max: sigma,
        worst_index: worst,
    })
}

/// `(sigma_max, orbit index of the worst point)` of the piecewise-affine
/// conjugacy matching the first `k` points of two orbits.
pub fn conjugacy_distortion(f: &Orbit, g: &Orbit, k: usize) -> Result<(f64, usize)> {
    if k < 2 {
        return Err(Error::Precondition("need at least two orbit points".into()));
    }
    let u: Vec<Real> = (0..k).map(|j| forward_distance(f.base(), f.point(j))).collect();
    let v: Vec<Real> = (0..k).map(|j| forward_distance(g.base(), g.point(j))).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| cmp_real(&u[a], &u[b]));
    for w in order.windows(2) {
        if u[w[0]] >= u[w[1]] || v[w[0]] >= v[w[1]] {
            return Err(Error::CombinatoricsMismatch(format!(
                "orbit points {} and {} are ordered differently",
                w[0], w[1]
            )));
        }
    }
    let prec = u[0].prec();
    let one = Float::with_val(prec, 1);
    // piece i runs from sorted point i to sorted point i+1 (point 0 + 1 at the end)
    let piece = |xs: &[Real], i: usize| -> Real {
        let a = &xs[order[i]];
        let b = if i + 1 < k { &xs[order[i + 1]] } else { &one };
        Float::with_val(prec, b - a)
    };
    let lens: Vec<Real> = (0..k).map(|i| piece(&u, i)).collect();
    let slopes: Vec<Real> = (0..k)
        .map(|i| piece(&v, i) / &lens[i])
        .collect();
    // mean slope over length t starting at piece `start`, stepping by `step`
    let mean_slope = |start: usize, forward: bool, t: &Real| -> Real {
        let mut num = Float::new(prec);
        let mut den = Float::new(prec);
        let mut remaining = t.clone();
        let mut i = start;
        loop {
            if lens[i] >= remaining {
                num += Float::with_val(prec, &slopes[i] * &remaining);
                den += &remaining;
                break;
            }
            num += Float::with_val(prec, &slopes[i] * &lens[i]);
            den += &lens[i];
            remaining -= &lens[i];
            i = if forward { (i + 1) % k } else { (i + k - 1) % k };
        }
        num / den
    };
    let per_point: Vec<(Real, usize)> = (0..k)
        .into_par_iter()
        .map(|i| {
            let prev = (i + k - 1) % k;
            let scale = if lens[i] > lens[prev] { &lens[i] } else { &lens[prev] };
            let mut best = one.clone();
            for m in 0..4u32 {
                let t = Float::with_val(prec, scale >> m);
                let r = mean_slope(i, true, &t) / mean_slope(prev, false, &t);
                let r = if r < 1 { Float::with_val(prec, 1 / r) } else { r };
                if r > best {
                    best = r;
                }
            }
            (best, order[i])
        })
        .collect();
    let (best, idx) = per_point
        .into_iter()
        .fold((one.clone(), 0usize), |acc, p| if p.0 > acc.0 { p } else { acc });
    Ok((best.to_f64(), idx))
}

/// Conjugacy estimates for each configured pair and qs level.
pub fn qs_rows(labs: &[LabMap], config: &ExperimentConfig) -> Result<Vec<ConjugacyEstimate>> {
    let mut tasks = Vec::new();
    for (f, g) in &config.qs_pairs {
        let (Some(fl), Some(gl)) = (
            labs.iter().find(|l| &l.id == f),
            labs.iter().find(|l| &l.id == g),
        ) else {
            continue;
        };
        for n in config.qs_levels.0..=config.qs_levels.1 {
            tasks.push((fl, gl, n));
        }
    }
    tasks.par_iter().map(|(f, g, n)| run_qs(f, g, *n)).collect()
}

fn qs_assertions(qs: &[ConjugacyEstimate]) -> Vec<Assertion> {
    let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for e in qs {
        groups.entry(&e.pair_id).or_default().push(e.sigma_max);
    }
    groups
        .into_iter()
        .map(|(id, v)| Assertion {
            name: format!("qs_stable[{id}]"),
            passed: v.iter().all(|s| s.is_finite() && *s >= 1.0) && stable_tail(&v, 3, 0.1),
            detail: format!("sigma_max by level: {v:?}"),
        })
        .collect()
}

/// Every experiment on one set of tuned maps.
pub fn run_suite(config: &ExperimentConfig) -> Result<BoundsReport> {
    let (labs, maps) = prepare(config);
    let rows = measure_all(&labs, config, MeasureSet::ALL)?;
    let spread = spreads(config, &rows);
    let qs = qs_rows(&labs, config)?;
    let mut report = BoundsReport {
        maps,
        rows,
        spread,
        qs,
        ..BoundsReport::empty(config)
    };
    report.assertions.push(tuning_assertion(&report.maps));
    report.assertions.extend(beau_assertions(&report.spread));
    report.assertions.extend(crd_assertions(&report));
    report.assertions.extend(scaling_assertions(&report));
    report.assertions.extend(qs_assertions(&report.qs));
    let valid = report.rows.iter().all(|r| r.partition_valid);
    report.assertions.push(Assertion {
        name: "partitions_tile".into(),
        passed: valid,
        detail: format!("{} partitions checked", report.rows.len()),
    });
    let mult = report.rows.iter().map(|r| r.multiplicity).max().unwrap_or(0);
    report.assertions.push(Assertion {
        name: "t_n_multiplicity".into(),
        passed: mult <= 3,
        detail: format!("largest multiplicity {mult}"),
    });
    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Serialize)]
struct Summary<'a> {
    target: &'a str,
    bits: u32,
    levels: (usize, usize),
    rows: usize,
    maps: &'a [MapOutcome],
    maxima: BTreeMap<String, f64>,
    assertions: &'a [Assertion],
    all_passed: bool,
}

/// Writes `bounds.csv`, `crd.csv`, `scaling.csv`, `spread.csv`, `qs.csv`,
/// `summary.json` and one SVG chart per table into `dir`.
pub fn emit_report(report: &BoundsReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let max_points = report.rows.iter().map(|r| r.scaling.len()).max().unwrap_or(1).max(1);

    let path = dir.join("bounds.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header: Vec<String> = ["map_id", "n", "atoms", "B_n", "mu_n"].map(String::from).to_vec();
    header.extend((0..max_points).map(|i| format!("s_n_c{i}")));
    header.extend(
        [
            "tau",
            "multiplicity",
            "K_n",
            "c1_norm",
            "schwarzian_negative",
            "schwarzian_worst",
            "diffeo_blocks",
            "critical_steps",
            "max_diffeo_distortion",
            "partition_valid",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    for r in &report.rows {
        let mut rec = vec![
            r.map_id.clone(),
            r.level.to_string(),
            r.atoms.to_string(),
            r.b_n.to_string(),
            r.mu_n.to_string(),
        ];
        rec.extend((0..max_points).map(|i| opt(r.scaling.get(i).copied())));
        rec.extend([
            r.tau.to_string(),
            r.multiplicity.to_string(),
            opt(r.k_n),
            opt(r.c1_norm),
            r.schwarzian_negative.map(|b| b.to_string()).unwrap_or_default(),
            opt(r.schwarzian_worst),
            opt_usize(r.diffeo_blocks),
            opt_usize(r.critical_steps),
            opt(r.max_diffeo_distortion),
            r.partition_valid.to_string(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("crd.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["map_id", "n", "crd_max", "k", "ceiling"])?;
    for r in report.rows.iter().filter(|r| r.crd_max.is_some()) {
        w.write_record([
            r.map_id.clone(),
            r.level.to_string(),
            opt(r.crd_max),
            opt_usize(r.crd_k),
            r.ceiling.to_string(),
        ])?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("scaling.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["map_id", "n", "critical_index", "s_n"])?;
    for r in &report.rows {
        for (i, s) in r.scaling.iter().enumerate() {
            w.write_record([r.map_id.clone(), r.level.to_string(), i.to_string(), s.to_string()])?;
        }
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("spread.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["group", "n", "spread"])?;
    for s in &report.spread {
        w.write_record([s.group.clone(), s.level.to_string(), s.spread.to_string()])?;
    }
    w.flush()?;
    written.push(path);

    let path = dir.join("qs.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["pair_id", "level", "points", "sigma_max", "worst_index"])?;
    for q in &report.qs {
        w.write_record([
            q.pair_id.clone(),
            q.level.to_string(),
            q.points.to_string(),
            q.sigma_max.to_string(),
            q.worst_index.to_string(),
        ])?;
    }
    w.flush()?;
    written.push(path);

    let mut maxima = BTreeMap::new();
    let mut note = |key: &str, v: Option<f64>| {
        if let Some(v) = v {
            maxima.insert(key.to_owned(), v);
        }
    };
    let fold = |f: &dyn Fn(&LevelRecord) -> Option<f64>| {
        report.rows.iter().filter_map(f).reduce(f64::max)
    };
    note("B_n", fold(&|r| Some(r.b_n)));
    note("mu_n", fold(&|r| Some(r.mu_n)));
    note("crd_max", fold(&|r| r.crd_max));
    note("K_n", fold(&|r| r.k_n));
    note("spread", report.spread.iter().map(|s| s.spread).reduce(f64::max));
    note("sigma_max", report.qs.iter().map(|q| q.sigma_max).reduce(f64::max));
    let summary = Summary {
        target: &report.target,
        bits: report.bits,
        levels: report.levels,
        rows: report.rows.len(),
        maps: &report.maps,
        maxima,
        assertions: &report.assertions,
        all_passed: report.all_passed(),
    };
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
    written.push(path);

    let per_map = |f: &dyn Fn(&LevelRecord) -> Option<f64>| -> Vec<Series> {
        report
            .maps
            .iter()
            .map(|m| Series {
                name: m.id.clone(),
                points: report
                    .rows_for(&m.id)
                    .filter_map(|r| f(r).map(|y| (r.level as f64, y)))
                    .collect(),
            })
            .filter(|s| !s.points.is_empty())
            .collect()
    };
    let mut groups: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for s in &report.spread {
        groups.entry(&s.group).or_default().push((s.level as f64, s.spread));
    }
    let spread_series: Vec<Series> = groups
        .into_iter()
        .map(|(g, points)| Series {
            name: g.to_owned(),
            points,
        })
        .collect();
    let mut pairs: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for q in &report.qs {
        pairs.entry(&q.pair_id).or_default().push((q.level as f64, q.sigma_max));
    }
    let qs_series: Vec<Series> = pairs
        .into_iter()
        .map(|(p, points)| Series {
            name: p.to_owned(),
            points,
        })
        .collect();
    let charts = [
        ("bounds.svg", line_chart("Adjacent atom ratio B_n", "level n", "B_n", &per_map(&|r| Some(r.b_n)), false)),
        ("spread.svg", line_chart("Spread of B_n across maps", "level n", "max B_n / min B_n", &spread_series, false)),
        ("crd.svg", line_chart("Return-map cross-ratio distortion", "level n", "max CrD", &per_map(&|r| r.crd_max), true)),
        ("scaling.svg", line_chart("Scaling ratio at c_0", "level n", "s_n", &per_map(&|r| r.scaling.first().copied()), false)),
        ("qs.svg", line_chart("Conjugacy distortion", "level n", "sigma_max", &qs_series, false)),
    ];
    for (name, svg) in charts {
        let path = dir.join(name);
        fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
