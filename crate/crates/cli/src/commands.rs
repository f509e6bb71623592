use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use qtmlab::aggregation::{
    market_transcript, to_json_lines, wagering_transcript, AggregationStage,
};
use qtmlab::analysis::{
    bound_gap, bound_m, bound_spread, bounds_to_csv, certify_instance, fmt_f64, ppoa, worst_ppoa,
    BoundReport, BOUND_TOL,
};
use qtmlab::equilibrium::{
    solve_all_equilibria, solve_equilibrium, EquilibriumSolution, SolveOptions, SolveStatus,
};
use qtmlab::instance::{
    compute_stats, generate_instance, generate_with_spread, InstanceFile, InstanceStats,
};
use qtmlab::squap::{
    generate_squap_instance, run_impractical_squap, run_practical_squap, SquapRun, Variant,
};
use qtmlab::{MechanismParams, ValueProfile};

use crate::config::{load, GenerateConfig, SolveConfig, SquapCliConfig, SweepConfig};
use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;
const SWEEP_HEADER: &str = "# qtmlab sweep v1\n\
    id,target_spread,spread,gap,disagreement,ppoa,bound_spread,margin_spread,bound_gap,margin_gap,bound_m,margin_m,equilibria,status\n";
const SUMMARY_HEADER: &str =
    "# qtmlab sweep-summary v1\ntarget_spread,count,min_ppoa,bound_spread,margin\n";

/// Shared command-line settings.
pub struct Context<'a> {
    pub config: &'a Path,
    pub seed: Option<u64>,
    pub out: &'a Path,
    pub jobs: Option<usize>,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Document<T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    body: T,
}

fn write(out: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let err = |source| CliError::Write {
        path: out.join(name),
        source,
    };
    std::fs::create_dir_all(out).map_err(err)?;
    std::fs::write(out.join(name), contents).map_err(err)
}

fn write_json<T: Serialize>(out: &Path, name: &str, body: T) -> Result<(), CliError> {
    let doc = Document {
        schema_version: SCHEMA_VERSION,
        body,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("plain data serializes");
    text.push('\n');
    write(out, name, &text)
}

fn base_dir(config: &Path) -> &Path {
    config.parent().unwrap_or(Path::new("."))
}

fn half_max(profile: &ValueProfile, c: Option<f64>) -> Result<MechanismParams, CliError> {
    let x = profile.max_value();
    if x <= 0.0 {
        return Err(qtmlab::Error::DegenerateInstance.into());
    }
    Ok(MechanismParams::for_profile(c.unwrap_or(0.5 * x), profile)?)
}

pub fn generate(ctx: &Context) -> Result<bool, CliError> {
    let cfg: GenerateConfig = load(ctx.config)?;
    let seed = ctx.seed.or(cfg.seed).unwrap_or(0);
    let profile = generate_instance(&cfg.generator, seed)?;
    if let Some(b) = &cfg.b {
        if b.len() != profile.m() {
            return Err(CliError::Invalid(format!(
                "B has {} entries for {} alternatives",
                b.len(),
                profile.m()
            )));
        }
    }
    write_json(
        ctx.out,
        "instance.json",
        InstanceFile::from_profile(&profile, cfg.b),
    )?;
    println!(
        "wrote instance with n = {}, m = {}",
        profile.n(),
        profile.m()
    );
    Ok(true)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Certificate<'a> {
    #[serde(rename = "A")]
    aggregates: &'a [f64],
    p: &'a qtmlab::SoftmaxOutcome,
    foc_residual: f64,
    br_slack: f64,
    status: SolveStatus,
    certified: bool,
    seed: u64,
    params: MechanismParams,
    /// `order[k]` is the file index of alternative `k` in this document.
    order: &'a [usize],
    stats: &'a InstanceStats,
    ppoa: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    equilibria: Option<&'a [EquilibriumSolution]>,
}

pub fn solve(ctx: &Context) -> Result<bool, CliError> {
    let cfg: SolveConfig = load(ctx.config)?;
    let seed = ctx.seed.or(cfg.seed).unwrap_or(0);
    let inst = cfg.instance.load(base_dir(ctx.config))?;
    let profile = &inst.profile;
    let params = half_max(profile, cfg.c)?;
    let options = SolveOptions {
        fixed_point: cfg.fixed_point,
        route: cfg.route,
    };
    let eq = solve_equilibrium(profile, &params, &options).map_err(|e| e.in_stage("solve"))?;
    let all = if cfg.starts > 0 {
        Some(
            solve_all_equilibria(profile, &params, &options, cfg.starts, seed)
                .map_err(|e| e.in_stage("multi-start"))?,
        )
    } else {
        None
    };
    let external = inst.external.as_ref();
    let stats = compute_stats(profile, external)?;
    let welfare = match external {
        Some(ext) => ext.total_welfare(&profile.aggregates()),
        None => profile.aggregates(),
    };
    let solutions: Vec<&EquilibriumSolution> = match &all {
        Some(list) => list.iter().collect(),
        None => vec![&eq],
    };
    let mut rows: Vec<(String, BoundReport)> = Vec::new();
    let mut certified = true;
    for (j, sol) in solutions.iter().enumerate() {
        certified &= sol.is_certified(cfg.fixed_point.tol, cfg.br_tol);
        for r in certify_instance(sol, profile, &params, external)? {
            certified &= r.holds();
            rows.push((format!("eq{j}"), r));
        }
    }
    let measured = match &all {
        Some(list) => worst_ppoa(list, &welfare)?,
        None => ppoa(&eq.p, &welfare)?,
    };
    let cert = Certificate {
        aggregates: &eq.aggregates,
        p: &eq.p,
        foc_residual: eq.foc_residual,
        br_slack: eq.br_slack,
        status: eq.status,
        certified,
        seed,
        params,
        order: &inst.order,
        stats: &stats,
        ppoa: measured,
        equilibria: all.as_deref(),
    };
    write_json(ctx.out, "certificate.json", cert)?;
    write(
        ctx.out,
        "bounds.csv",
        &bounds_to_csv(rows.iter().map(|(id, r)| (id.as_str(), r))),
    )?;
    println!(
        "{}: focResidual {:e}, brSlack {:e}, pPoA {}",
        if certified {
            "certified"
        } else {
            "uncertified"
        },
        eq.foc_residual,
        eq.br_slack,
        measured
    );
    Ok(certified)
}

struct SweepRow {
    id: usize,
    target: f64,
    result: Result<SweepData, String>,
}

struct SweepData {
    spread: f64,
    gap: f64,
    disagreement: Option<f64>,
    ppoa: f64,
    bound_spread: f64,
    bound_gap: f64,
    bound_m: f64,
    equilibria: usize,
    certified: bool,
}

fn sweep_instance(
    m: usize,
    target: f64,
    seed: u64,
    starts: usize,
) -> Result<SweepData, qtmlab::Error> {
    let profile = generate_with_spread(m, target, seed)?;
    let params = MechanismParams::half_max(&profile)?;
    let stats = compute_stats(&profile, None)?;
    let options = SolveOptions::default();
    let solutions = if m == 2 {
        vec![solve_equilibrium(&profile, &params, &options)?]
    } else {
        solve_all_equilibria(&profile, &params, &options, starts, seed)?
    };
    let measured = worst_ppoa(&solutions, &profile.aggregates())?;
    let (bs, bg, bm) = (bound_spread(stats.spread), bound_gap(stats.gap), bound_m(m));
    let solved = solutions
        .iter()
        .all(|s| s.is_certified(options.fixed_point.tol, 1e-6));
    let bounds_ok = if m == 2 {
        measured >= bs - BOUND_TOL && measured >= bg - BOUND_TOL
    } else {
        measured >= bm - BOUND_TOL
    };
    Ok(SweepData {
        spread: stats.spread,
        gap: stats.gap,
        disagreement: stats.disagreement,
        ppoa: measured,
        bound_spread: bs,
        bound_gap: bg,
        bound_m: bm,
        equilibria: solutions.len(),
        certified: solved && bounds_ok,
    })
}

fn sweep_line(row: &SweepRow) -> String {
    match &row.result {
        Ok(d) => format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            row.id,
            fmt_f64(row.target),
            fmt_f64(d.spread),
            fmt_f64(d.gap),
            d.disagreement.map(fmt_f64).unwrap_or_default(),
            fmt_f64(d.ppoa),
            fmt_f64(d.bound_spread),
            fmt_f64(d.ppoa - d.bound_spread),
            fmt_f64(d.bound_gap),
            fmt_f64(d.ppoa - d.bound_gap),
            fmt_f64(d.bound_m),
            fmt_f64(d.ppoa - d.bound_m),
            d.equilibria,
            if d.certified { "ok" } else { "violation" }
        ),
        Err(msg) => format!(
            "{},{},,,,,,,,,,,,error: {}\n",
            row.id,
            fmt_f64(row.target),
            msg.replace([',', '\n'], ";")
        ),
    }
}

pub fn sweep(ctx: &Context) -> Result<bool, CliError> {
    let cfg: SweepConfig = load(ctx.config)?;
    if cfg.spreads.is_empty() || cfg.per_bucket == 0 {
        return Err(CliError::Invalid("the sweep grid is empty".into()));
    }
    if let Some(t) = cfg.spreads.iter().find(|t| !(t.is_finite() && **t >= 1.0)) {
        return Err(CliError::Invalid(format!("spread {t} must be at least 1")));
    }
    if cfg.m < 2 {
        return Err(CliError::Invalid(format!(
            "m must be at least 2, got {}",
            cfg.m
        )));
    }
    let seed = ctx.seed.or(cfg.seed).unwrap_or(0);
    let tasks: Vec<(usize, f64)> = cfg
        .spreads
        .iter()
        .flat_map(|&t| std::iter::repeat_n(t, cfg.per_bucket))
        .enumerate()
        .collect();
    let run = || -> Vec<SweepRow> {
        tasks
            .par_iter()
            .map(|&(id, target)| SweepRow {
                id,
                target,
                result: sweep_instance(cfg.m, target, seed.wrapping_add(id as u64), cfg.starts)
                    .map_err(|e| e.to_string()),
            })
            .collect()
    };
    let rows = match ctx.jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Invalid(e.to_string()))?
            .install(run),
        None => run(),
    };
    let mut csv = String::from(SWEEP_HEADER);
    rows.iter().for_each(|r| csv.push_str(&sweep_line(r)));
    write(ctx.out, "sweep.csv", &csv)?;

    let mut summary = String::from(SUMMARY_HEADER);
    for &t in &cfg.spreads {
        let bucket: Vec<&SweepData> = rows
            .iter()
            .filter(|r| r.target == t)
            .filter_map(|r| r.result.as_ref().ok())
            .collect();
        let min = bucket.iter().map(|d| d.ppoa).fold(f64::INFINITY, f64::min);
        let bound = if cfg.m == 2 {
            bound_spread(t)
        } else {
            bound_m(cfg.m)
        };
        summary.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(t),
            bucket.len(),
            fmt_f64(min),
            fmt_f64(bound),
            fmt_f64(min - bound)
        ));
    }
    write(ctx.out, "sweep_summary.csv", &summary)?;

    let failed = rows.iter().filter(|r| r.result.is_err()).count();
    let violations = rows
        .iter()
        .filter(|r| matches!(&r.result, Ok(d) if !d.certified))
        .count();
    println!(
        "{} rows, {violations} violations, {failed} failures",
        rows.len()
    );
    if failed > 0 {
        return Err(qtmlab::Error::NoConvergence {
            solver: "sweep",
            iterations: failed,
            residual: f64::NAN,
        }
        .into());
    }
    Ok(violations == 0)
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct SquapDocument<'a> {
    label: &'static str,
    #[serde(flatten)]
    run: &'a SquapRun,
}

pub fn squap(ctx: &Context) -> Result<bool, CliError> {
    let mut cfg: SquapCliConfig = load(ctx.config)?;
    if let Some(seed) = ctx.seed {
        cfg.squap.seed = seed;
    }
    let (profile, truth) = match (&cfg.instance, &cfg.generate) {
        (Some(src), _) => {
            let inst = src.load(base_dir(ctx.config))?;
            let ext = inst
                .external
                .ok_or_else(|| CliError::Invalid("the instance needs external welfare B".into()))?;
            (inst.profile, ext.b)
        }
        (None, Some(g)) => generate_squap_instance(g.n, g.spread, cfg.squap.seed)?,
        (None, None) => {
            return Err(CliError::Invalid(
                "give either an instance or a generator".into(),
            ))
        }
    };
    let run = match cfg.squap.variant {
        Variant::Impractical => run_impractical_squap(&profile, &truth, &cfg.squap)?,
        Variant::Practical => run_practical_squap(&profile, &truth, &cfg.squap)?,
    };
    let label = if run.certified {
        "certified"
    } else {
        "uncertified"
    };
    write_json(
        ctx.out,
        "squap_run.json",
        SquapDocument { label, run: &run },
    )?;
    write(
        ctx.out,
        "bounds.csv",
        &bounds_to_csv(run.bounds.iter().map(|r| ("run", r))),
    )?;
    let transcript = match run.stage.as_ref().expect("runs keep their stage") {
        AggregationStage::Market(s) => {
            market_transcript(s, run.chosen, &run.decision, run.bstar, cfg.squap.weighting)?
        }
        AggregationStage::Wagering(s) => {
            wagering_transcript(s, run.chosen, &run.decision, run.bstar, cfg.squap.weighting)?
        }
    };
    write(ctx.out, "transcript.jsonl", &to_json_lines(&transcript))?;
    let deviation = run
        .bhat
        .iter()
        .zip(&run.truth)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!(
        "{label}: welfare ratio {}, max |Bhat - B| {}",
        run.welfare_ratio, deviation
    );
    Ok(run.certified)
}
