use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use multicrit::arithmetic::convergents;
use multicrit::circlemap::{build, MapSpec, TrigProductMap};
use multicrit::distortion::{
    admissible_k, c1_bound_constant, crd_return_map_max, decompose, explicit_crd_ceiling,
    verify_negative_schwarzian,
};
use multicrit::experiments::{
    emit_report, parse_target, prepare, run_beau, run_crd_universal, run_qs, run_scaling,
    run_suite, BoundsReport, ExperimentConfig,
};
use multicrit::partition::{build_partition, validate_partition, DynamicalPartition, Generation};
use multicrit::rotation::{tune, TuneResult};
use multicrit::{PrecisionContext, Real};
use serde_json::json;

#[derive(Parser)]
#[command(name = "multicrit", version, about = "Numerical laboratory for multicritical circle maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the convergent table of a target rotation number.
    Convergents {
        #[arg(long, default_value = "golden")]
        target: String,
        #[arg(long, default_value_t = 20)]
        depth: usize,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Tune the offset of a map to a target rotation number.
    Tune {
        #[command(flatten)]
        map: MapArgs,
        #[arg(long, default_value_t = 12)]
        depth: usize,
        #[arg(long, default_value_t = 24)]
        res: u32,
        /// Write the tuning result as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build and validate a dynamical partition.
    Partition {
        #[command(flatten)]
        map: MapArgs,
        #[arg(long)]
        level: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Largest cross-ratio distortion of return maps at one level.
    Crd {
        #[command(flatten)]
        map: MapArgs,
        #[arg(long)]
        level: usize,
    },
    /// Sign check of the Schwarzian derivative of first-return iterates.
    Schwarz {
        #[command(flatten)]
        map: MapArgs,
        #[arg(long)]
        level: usize,
        #[arg(long, default_value_t = 64)]
        grid: usize,
    },
    /// C¹ bound constant of the first-return map to I_n.
    C1 {
        #[command(flatten)]
        map: MapArgs,
        #[arg(long)]
        level: usize,
        #[arg(long, default_value_t = 16)]
        grid: usize,
    },
    /// Block decomposition of f^k on the enlarged atom around one atom.
    Decompose {
        #[command(flatten)]
        map: MapArgs,
        #[arg(long)]
        level: usize,
        /// Level of the ambient partition (defaults to level/2).
        #[arg(long)]
        coarse: Option<usize>,
        /// Position of the atom in circle order from the base point.
        #[arg(long, default_value_t = 0)]
        atom: usize,
        /// Iterate count (defaults to the largest admissible one).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
    },
    /// Real and beau bounds across maps sharing N and criticalities.
    Beau(ExperimentArgs),
    /// Universal cross-ratio bound of return maps.
    Crduni(ExperimentArgs),
    /// Scaling ratios at each critical point.
    Scaling(ExperimentArgs),
    /// Quasi-symmetric distortion of the conjugacy between two maps.
    Qs {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        f: String,
        #[arg(long)]
        g: String,
        #[arg(long)]
        level: usize,
    },
    /// Run every experiment and write the full report.
    Report(ExperimentArgs),
}

#[derive(Args)]
struct MapArgs {
    /// Map spec TOML (`a` and `critical_points`).
    #[arg(long, conflicts_with = "critical")]
    spec: Option<PathBuf>,
    /// Critical point as `position:criticality`; repeatable. None gives a
    /// rigid rotation.
    #[arg(long = "critical", value_name = "C:D")]
    critical: Vec<String>,
    /// Use this offset instead of tuning.
    #[arg(long)]
    offset: Option<String>,
    /// Reuse a tuning result written by `tune --out`.
    #[arg(long, conflicts_with = "offset")]
    tuned: Option<PathBuf>,
    #[arg(long, default_value = "golden")]
    target: String,
    /// Working precision (default grows with the level).
    #[arg(long)]
    bits: Option<u32>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment TOML; without it the default suite is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "golden")]
    target: String,
    #[arg(long, default_value_t = 10)]
    max_level: usize,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl MapArgs {
    fn context(&self, level: usize) -> Result<PrecisionContext> {
        Ok(match self.bits {
            Some(b) => PrecisionContext::new(b)?,
            None => PrecisionContext::for_depth(level + 2),
        })
    }

    fn template(&self, ctx: &PrecisionContext) -> Result<MapSpec> {
        if let Some(path) = &self.spec {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            return Ok(MapSpec::from_toml(ctx, &text)?);
        }
        let points = self
            .critical
            .iter()
            .map(|s| {
                let (c, d) = s.split_once(':').with_context(|| format!("`{s}` is not C:D"))?;
                Ok((c.trim().parse::<f64>()?, d.trim().parse::<u32>()?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MapSpec::with_points(ctx, &points, ctx.zero())?)
    }

    /// Map with its offset fixed by `--offset`, `--tuned`, a spec file
    /// carrying `a`, or tuning to `depth`.
    fn resolve(&self, ctx: &PrecisionContext, depth: usize, res: u32) -> Result<(TrigProductMap, Option<TuneResult>)> {
        let spec = self.template(ctx)?;
        let shape = build(&spec, ctx)?;
        if let Some(a) = &self.offset {
            return Ok((shape.with_offset(ctx.parse(a)?)?, None));
        }
        if let Some(path) = &self.tuned {
            let t = TuneResult::from_json(ctx, &fs::read_to_string(path)?)?;
            return Ok((shape.with_offset(ctx.convert(&t.a_star))?, Some(t)));
        }
        if self.spec.is_some() && !spec.offset.is_zero() {
            return Ok((shape, None));
        }
        let cf = parse_target(&self.target, depth + 2)?;
        if shape.is_rigid() {
            let exact = cf.extend_to(ctx.bits() as usize).unwrap_or(cf);
            return Ok((shape.with_offset(exact.value(ctx))?, None));
        }
        let t = tune(&shape, &cf, depth, res)?;
        Ok((shape.with_offset(t.a_star.clone())?, Some(t)))
    }

    fn partition(&self, level: usize) -> Result<(TrigProductMap, DynamicalPartition)> {
        let ctx = self.context(level)?;
        let depth = level + 3;
        let (map, _) = self.resolve(&ctx, depth, (depth + 10) as u32)?;
        let table = convergents(&parse_target(&self.target, depth + 1)?)?;
        let p = build_partition(&map, &map.base_point(), &table, level)?;
        Ok((map, p))
    }
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_toml(
                &fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
            )?,
            None => ExperimentConfig::default_suite(&self.target, self.max_level)?,
        };
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
        Ok(cfg)
    }
}

fn finish(report: &BoundsReport, cfg: &ExperimentConfig) -> Result<()> {
    if let Some(dir) = &cfg.output {
        let files = emit_report(report, dir)?;
        eprintln!("wrote {} files to {}", files.len(), dir.display());
    }
    for a in &report.assertions {
        println!("{} {}: {}", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail);
    }
    Ok(())
}

fn scalar(x: &Real) -> String {
    multicrit::numerics::format_scalar(x)
}

fn partition_svg(p: &DynamicalPartition) -> String {
    use std::f64::consts::TAU;
    let (cx, cy, r) = (220.0, 220.0, 170.0);
    let mut out = String::from(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"440\" height=\"440\" viewBox=\"0 0 440 440\" font-family=\"sans-serif\" font-size=\"13\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
    );
    for a in p.atoms() {
        let t0 = a.interval.left().to_f64();
        let t1 = t0 + a.length().to_f64();
        let color = match a.generation {
            Generation::Long => "#1f77b4",
            Generation::Short => "#d62728",
        };
        let pt = |t: f64, rad: f64| (cx + rad * (TAU * t).cos(), cy - rad * (TAU * t).sin());
        let (x0, y0) = pt(t0, r);
        let (x1, y1) = pt(t1, r);
        let large = u8::from(t1 - t0 > 0.5);
        out.push_str(&format!(
            "<path d=\"M {x0:.2} {y0:.2} A {r} {r} 0 {large} 0 {x1:.2} {y1:.2}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"10\"/>\n"
        ));
        let (tx0, ty0) = pt(t0, r - 9.0);
        let (tx1, ty1) = pt(t0, r + 9.0);
        out.push_str(&format!(
            "<line x1=\"{tx0:.2}\" y1=\"{ty0:.2}\" x2=\"{tx1:.2}\" y2=\"{ty1:.2}\" stroke=\"black\"/>\n"
        ));
    }
    out.push_str(&format!(
        "<text x=\"{cx}\" y=\"{cy}\" text-anchor=\"middle\">P_{} ({} atoms)</text>\n",
        p.level(),
        p.len()
    ));
    out.push_str("</svg>\n");
    out
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Convergents { target, depth, csv } => {
            let cf = parse_target(&target, depth)?;
            let table = convergents(&cf)?;
            table.verify_determinants()?;
            let ctx = PrecisionContext::default();
            let rho = cf.extend_to(256).unwrap_or(cf).value(&ctx);
            match csv {
                Some(path) => table.write_csv(fs::File::create(&path)?, Some(&rho))?,
                None => table.write_csv(std::io::stdout().lock(), Some(&rho))?,
            }
        }
        Command::Tune { map, depth, res, out } => {
            let ctx = map.context(depth)?;
            let template = build(&map.template(&ctx)?, &ctx)?;
            let cf = parse_target(&map.target, depth + 2)?;
            let t = tune(&template, &cf, depth, res)?;
            let text = t.to_json();
            if let Some(path) = out {
                fs::write(&path, &text)?;
            }
            println!("{text}");
        }
        Command::Partition { map, level, csv, svg } => {
            let (_, p) = map.partition(level)?;
            let report = validate_partition(&p, None);
            if let Some(path) = csv {
                p.write_atoms_csv(fs::File::create(&path)?)?;
            }
            if let Some(path) = svg {
                fs::write(&path, partition_svg(&p))?;
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "level": level,
                    "atoms": report.atom_count,
                    "expected_atoms": report.expected_count,
                    "q_n": p.q_n(),
                    "q_next": p.q_next(),
                    "max_overlap": scalar(&report.max_overlap),
                    "max_gap": scalar(&report.max_gap),
                    "measure_defect": scalar(&report.measure_defect),
                    "passed": report.passed(),
                }))?
            );
            if !report.passed() {
                bail!("partition failed validation");
            }
        }
        Command::Crd { map, level } => {
            let (f, p) = map.partition(level)?;
            let m = crd_return_map_max(&p)?;
            let ceiling = explicit_crd_ceiling(f.critical_count(), f.spec().max_criticality());
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "level": m.level, "crd_max": m.max, "atom": m.atom, "k": m.k,
                    "max_admissible_k": m.max_admissible_k, "ceiling": ceiling,
                    "within_ceiling": m.max <= ceiling,
                }))?
            );
        }
        Command::Schwarz { map, level, grid } => {
            let (f, p) = map.partition(level)?;
            let r = verify_negative_schwarzian(&f, &p, grid);
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({ "report": r, "all_negative": r.all_negative() }))?
            );
        }
        Command::C1 { map, level, grid } => {
            let (f, p) = map.partition(level)?;
            println!("{}", serde_json::to_string_pretty(&c1_bound_constant(&f, &p, grid)?)?);
        }
        Command::Decompose { map, level, coarse, atom, k, epsilon } => {
            let (f, p) = map.partition(level)?;
            if atom >= p.len() {
                bail!("atom position {atom} out of range (level has {} atoms)", p.len());
            }
            let ctx = f.ctx();
            let table = convergents(&parse_target(&map.target, level + 4)?)?;
            let coarse_p = multicrit::partition::build_partition_with_orbit(
                p.orbit().clone(),
                &table,
                coarse.unwrap_or(level / 2),
                &ctx,
            )?;
            let k = k.unwrap_or_else(|| admissible_k(&p, atom));
            let trace = decompose(&f, &p, &coarse_p, atom, k, epsilon, 8)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&json!({
                    "trace": trace, "counts_ok": trace.counts_ok(), "distortion_ok": trace.distortion_ok(),
                }))?
            );
        }
        Command::Beau(args) => {
            let cfg = args.config()?;
            let cfg = if args.config.is_none() {
                cfg.subset(&["cubic_c0", "cubic_c03", "cubic_c07"])?
            } else {
                cfg
            };
            finish(&run_beau(&cfg)?, &cfg)?;
        }
        Command::Crduni(args) => {
            let cfg = args.config()?;
            finish(&run_crd_universal(&cfg)?, &cfg)?;
        }
        Command::Scaling(args) => {
            let cfg = args.config()?;
            finish(&run_scaling(&cfg)?, &cfg)?;
        }
        Command::Qs { exp, f, g, level } => {
            let cfg = exp.config()?.subset(&[f.as_str(), g.as_str()])?;
            let (labs, outcomes) = prepare(&cfg);
            if let Some(e) = outcomes.iter().find_map(|o| o.error.as_ref()) {
                bail!("tuning failed: {e}");
            }
            let est = run_qs(&labs[0], &labs[1], level)?;
            println!("{}", serde_json::to_string_pretty(&est)?);
        }
        Command::Report(args) => {
            let cfg = args.config()?;
            let report = run_suite(&cfg)?;
            finish(&report, &cfg)?;
        }
    }
    Ok(())
}
