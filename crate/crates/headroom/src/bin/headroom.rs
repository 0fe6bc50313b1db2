//! Command-line front end: seeded verification suites, per-device cache-size
//! tables, roofline CSV emission, sharding placement reports, and the
//! straggler step-time simulator.
//!
//! Every command prints a `#`-prefixed manifest line echoing its resolved
//! inputs (paths, seed, flags); identical manifests produce byte-identical
//! output. Exit codes: 0 success, 1 verification failure (a computed value
//! missed its reference or tolerance), 2 usage/config/parse errors, 3 I/O
//! errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use headroom::attention::{
    decode_step, init_weights, prefill, AttnConfig, FamilyVariant, ModelFamily,
};
use headroom::roofline::{emit_roofline_csv, workload_point};
use headroom::sharding::{
    kv_bytes_per_device, kv_dh_units_per_device, shard_decode_simulate, straggler_step_time,
    HardwareProfile, ShardPlan, WorkloadSpec,
};
use headroom::tensor::max_rel_err;
use headroom::verify::{
    all_suites, attention_suite, kvcache_suite, render_report, roofline_suite, sharding_suite,
};
use headroom::{Error, Result, SeededRng, Tensor};

#[derive(Parser)]
#[command(
    name = "headroom",
    version,
    about = "Decode-attention reference implementation and hardware-efficiency analyzer"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run seeded verification suites; prints PASS/FAIL per check.
    Verify(VerifyArgs),
    /// Per-device KV cache size per token across TP degrees.
    Kvbytes(KvbytesArgs),
    /// Classify decode workloads against a hardware roofline; write CSV.
    Roofline(RooflineArgs),
    /// Report duplication and per-device bytes for a placement; check
    /// sharded-decode recombination for latent variants.
    Shard(ShardArgs),
    /// Price one decode step of each plan in a workload and judge orderings.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    All,
    Attention,
    Kvcache,
    Sharding,
    Roofline,
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Suite::All => "all",
            Suite::Attention => "attention",
            Suite::Kvcache => "kvcache",
            Suite::Sharding => "sharding",
            Suite::Roofline => "roofline",
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// Which suite to run.
    #[arg(long, value_enum, default_value_t = Suite::All)]
    suite: Suite,
    /// Seed for the randomized checks.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct KvbytesArgs {
    /// Model-family JSON (variant rows with optional reference cells).
    #[arg(long)]
    config: PathBuf,
    /// Tensor-parallel degrees, one table column each.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    tp: Vec<usize>,
    /// Print multiples of d_h elements instead of bytes.
    #[arg(long)]
    dh_units: bool,
}

#[derive(Args)]
struct RooflineArgs {
    /// Hardware profile JSON.
    #[arg(long)]
    hw: PathBuf,
    /// Attention variant: mha, mqa, gqa, gta, mla, gla.
    #[arg(long)]
    variant: String,
    /// Query head count.
    #[arg(long)]
    hq: usize,
    /// Distinct KV head count (gqa/gta).
    #[arg(long)]
    hkv: Option<usize>,
    /// Latent head count (gla).
    #[arg(long)]
    hc: Option<usize>,
    /// Head width.
    #[arg(long, default_value_t = 128)]
    dh: usize,
    /// Latent width (defaults: 4·d_h for mla, 2·d_h for gla).
    #[arg(long)]
    dc: Option<usize>,
    /// Decoupled rotary width (defaults to d_h/2 for latent variants).
    #[arg(long)]
    dr: Option<usize>,
    /// KV lengths to evaluate.
    #[arg(long = "l", value_delimiter = ',', required = true)]
    l: Vec<u64>,
    /// Query lengths per step.
    #[arg(long = "lq", value_delimiter = ',', default_value = "1")]
    lq: Vec<u64>,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ShardArgs {
    /// Model-family JSON or a single attention-config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Row label to select inside a family file (default: every row).
    #[arg(long)]
    variant: Option<String>,
    /// Tensor-parallel degree.
    #[arg(long)]
    tp: usize,
    /// Data-parallel replica count (reported only).
    #[arg(long, default_value_t = 1)]
    dp: usize,
    /// Seed for the recombination check.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Workload JSON: requests plus plans to price.
    #[arg(long)]
    workload: PathBuf,
    /// Hardware profile JSON.
    #[arg(long)]
    hw: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Verify(a) => cmd_verify(&a),
        Cmd::Kvbytes(a) => cmd_kvbytes(&a),
        Cmd::Roofline(a) => cmd_roofline(&a),
        Cmd::Shard(a) => cmd_shard(&a),
        Cmd::Simulate(a) => cmd_simulate(&a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn verdict_code(all_passed: bool) -> ExitCode {
    if all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn cmd_verify(a: &VerifyArgs) -> Result<ExitCode> {
    println!("# verify suite={} seed={}", a.suite.name(), a.seed);
    let suites = match a.suite {
        Suite::All => all_suites(a.seed),
        Suite::Attention => vec![("attention", attention_suite(a.seed))],
        Suite::Kvcache => vec![("kvcache", kvcache_suite(a.seed))],
        Suite::Sharding => vec![("sharding", sharding_suite(a.seed))],
        Suite::Roofline => vec![("roofline", roofline_suite(a.seed))],
    };
    let mut all_passed = true;
    for (name, checks) in &suites {
        print!("{}", render_report(name, checks));
        all_passed &= checks.iter().all(|c| c.passed);
    }
    Ok(verdict_code(all_passed))
}

/// One table cell: the computed value, flagged against the reference when
/// the row carries one for this TP degree.
fn kvbytes_cell(v: &FamilyVariant, tp: usize, dh_units: bool) -> (String, Option<bool>) {
    let plan = ShardPlan { tp, dp: 1 };
    let expected = v.expected.iter().find(|c| c.tp == tp);
    if dh_units {
        let got = kv_dh_units_per_device(&v.config, &plan);
        match expected.and_then(|c| c.dh_units) {
            Some(want) => {
                let ok = got == want;
                let flag = if ok { "MATCH" } else { "MISMATCH" };
                (format!("{got} [ref {want} {flag}]"), Some(ok))
            }
            None => (format!("{got}"), None),
        }
    } else {
        let got = kv_bytes_per_device(&v.config, &plan);
        match expected.and_then(|c| c.bytes) {
            Some(want) => {
                let ok = got == want;
                let flag = if ok { "MATCH" } else { "MISMATCH" };
                (format!("{got} [ref {want} {flag}]"), Some(ok))
            }
            None => (format!("{got}"), None),
        }
    }
}

fn cmd_kvbytes(a: &KvbytesArgs) -> Result<ExitCode> {
    if a.tp.is_empty() || a.tp.contains(&0) {
        return Err(Error::Parameter(
            "tp list must be nonempty and positive".into(),
        ));
    }
    let family = ModelFamily::from_path(&a.config)?;
    let tps: Vec<String> = a.tp.iter().map(|t| t.to_string()).collect();
    println!(
        "# kvbytes config={} tp={} dh_units={}",
        a.config.display(),
        tps.join(","),
        a.dh_units
    );
    let unit = if a.dh_units { "d_h units" } else { "bytes" };
    println!("KV cache per token per device ({unit}) — {}", family.name);

    let mut rows: Vec<Vec<String>> = vec![std::iter::once("variant".to_string())
        .chain(a.tp.iter().map(|t| format!("TP={t}")))
        .collect()];
    let (mut checked, mut mismatched) = (0usize, 0usize);
    for v in &family.variants {
        let mut row = vec![v.label()];
        for &tp in &a.tp {
            let (cell, flag) = kvbytes_cell(v, tp, a.dh_units);
            if let Some(ok) = flag {
                checked += 1;
                mismatched += usize::from(!ok);
            }
            row.push(cell);
        }
        rows.push(row);
    }
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| format!("{cell:<w$}"))
            .collect();
        println!("{}", line.join("  ").trim_end());
    }
    if checked > 0 {
        println!(
            "{checked} reference cells checked: {} match, {mismatched} mismatch",
            checked - mismatched
        );
    }
    Ok(verdict_code(mismatched == 0))
}

fn build_cli_config(a: &RooflineArgs) -> Result<AttnConfig> {
    let need = |opt: Option<usize>, flag: &str| {
        opt.ok_or_else(|| Error::Parameter(format!("{} requires --{flag}", a.variant)))
    };
    let d_model = a.hq * a.dh;
    match a.variant.to_ascii_lowercase().as_str() {
        "mha" => AttnConfig::mha(d_model, a.hq, a.dh),
        "mqa" => AttnConfig::mqa(d_model, a.hq, a.dh),
        "gqa" => AttnConfig::gqa(d_model, a.hq, need(a.hkv, "hkv")?, a.dh),
        "gta" => AttnConfig::gta(d_model, a.hq, need(a.hkv, "hkv")?, a.dh),
        "mla" => AttnConfig::mla(
            d_model,
            a.hq,
            a.dh,
            a.dc.unwrap_or(4 * a.dh),
            a.dr.unwrap_or(a.dh / 2),
        ),
        "gla" => AttnConfig::gla(
            d_model,
            a.hq,
            a.dh,
            need(a.hc, "hc")?,
            a.dc.unwrap_or(2 * a.dh),
            a.dr.unwrap_or(a.dh / 2),
        ),
        other => Err(Error::Parameter(format!(
            "unknown variant '{other}' (expected mha, mqa, gqa, gta, mla, or gla)"
        ))),
    }
}

fn cmd_roofline(a: &RooflineArgs) -> Result<ExitCode> {
    if a.l.is_empty() || a.l.contains(&0) || a.lq.is_empty() || a.lq.contains(&0) {
        return Err(Error::Parameter(
            "L and Lq lists must be nonempty and positive".into(),
        ));
    }
    let hw = HardwareProfile::from_path(&a.hw)?;
    let cfg = build_cli_config(a)?;
    println!(
        "# roofline hw={} variant={} L={} Lq={} out={}",
        a.hw.display(),
        cfg.label(),
        a.l.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(","),
        a.lq.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(","),
        a.out.display()
    );
    let mut points = Vec::with_capacity(a.l.len() * a.lq.len());
    for &l in &a.l {
        for &lq in &a.lq {
            points.push(workload_point(&cfg, l, lq, 1, &hw));
        }
    }
    let csv = emit_roofline_csv(&points, &hw)?;
    std::fs::write(&a.out, csv).map_err(|e| Error::Io {
        path: a.out.display().to_string(),
        source: e,
    })?;
    for p in &points {
        println!(
            "{} L={} Lq={}: ai {:.2} FLOP/byte -> {}-bound, predicted {:.3} us",
            p.variant,
            p.l,
            p.lq,
            p.ai,
            p.bound,
            p.predicted_time * 1e6
        );
    }
    println!(
        "wrote {} points to {} (ridge {:.3} FLOP/byte on {})",
        points.len(),
        a.out.display(),
        hw.ridge,
        hw.name
    );
    Ok(ExitCode::SUCCESS)
}

/// Loads either a family file or a bare config file as one list of rows.
fn load_variant_rows(path: &PathBuf) -> Result<(String, Vec<FamilyVariant>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    if let Ok(family) = ModelFamily::from_json(&text) {
        return Ok((family.name, family.variants));
    }
    let cfg = AttnConfig::from_json(&text)?;
    let label = cfg.label();
    Ok((
        label,
        vec![FamilyVariant {
            label: None,
            config: cfg,
            expected: vec![],
        }],
    ))
}

fn shard_report_row(cfg: &AttnConfig, plan: &ShardPlan, seed: u64) -> Result<bool> {
    let label = cfg.label();
    plan.query_head_assignment(cfg)?;
    let d = plan.duplication(cfg)?;
    let verdict = if d == 1 {
        "zero redundancy".to_string()
    } else if d == plan.tp {
        format!("full duplication, {d} copies of each state head")
    } else {
        format!("{d} copies of each state head")
    };
    println!(
        "{label}: TP={} DP={} -> D={d} ({verdict}); {} bytes/token/device ({} d_h units)",
        plan.tp,
        plan.dp,
        kv_bytes_per_device(cfg, plan),
        kv_dh_units_per_device(cfg, plan)
    );

    if !cfg.variant.is_latent() {
        return Ok(true);
    }
    if !plan.tp.is_multiple_of(cfg.h_c) && !cfg.h_c.is_multiple_of(plan.tp) {
        println!(
            "  recombination check skipped: {} ranks and {} latent heads do not align",
            plan.tp, cfg.h_c
        );
        return Ok(true);
    }
    let mut rng = SeededRng::new(seed);
    let w = init_weights(cfg, &mut rng)?;
    let x0 = Tensor::from_fn(&[1, 4, cfg.d_model], |_| rng.uniform(-1.0, 1.0));
    let (_, cache) = prefill(cfg, &w, &x0)?;
    let x1 = Tensor::from_fn(&[1, 1, cfg.d_model], |_| rng.uniform(-1.0, 1.0));
    let (want, _) = decode_step(cfg, &w, &cache, &x1, &[4])?;
    let got = shard_decode_simulate(cfg, &w, &cache, &x1, &[4], plan.tp)?;
    let err = max_rel_err(&got, &want);
    let ok = err <= 1e-5;
    println!(
        "  sharded decode recombination: max relative error {err:.3e} vs tolerance 1.0e-5 [{}]",
        if ok { "MATCH" } else { "MISMATCH" }
    );
    Ok(ok)
}

fn cmd_shard(a: &ShardArgs) -> Result<ExitCode> {
    let plan = ShardPlan::new(a.tp, a.dp)?;
    let (name, rows) = load_variant_rows(&a.config)?;
    let selected: Vec<&FamilyVariant> = match &a.variant {
        Some(want) => {
            let hit: Vec<&FamilyVariant> = rows
                .iter()
                .filter(|v| v.label().eq_ignore_ascii_case(want))
                .collect();
            if hit.is_empty() {
                let known: Vec<String> = rows.iter().map(|v| v.label()).collect();
                return Err(Error::Parameter(format!(
                    "no variant labeled '{want}' in {} (have: {})",
                    a.config.display(),
                    known.join(", ")
                )));
            }
            hit
        }
        None => rows.iter().collect(),
    };
    println!(
        "# shard config={} variant={} tp={} dp={} seed={}",
        a.config.display(),
        a.variant.as_deref().unwrap_or("all"),
        a.tp,
        a.dp,
        a.seed
    );
    println!("placement report — {name}");
    let mut all_ok = true;
    for v in selected {
        all_ok &= shard_report_row(&v.config, &plan, a.seed)?;
    }
    Ok(verdict_code(all_ok))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<ExitCode> {
    let workload = WorkloadSpec::from_path(&a.workload)?;
    let hw = HardwareProfile::from_path(&a.hw)?;
    println!(
        "# simulate workload={} hw={}",
        a.workload.display(),
        a.hw.display()
    );
    println!(
        "workload '{}' on {}: {} requests",
        workload.name,
        hw.name,
        workload.requests.len()
    );
    if !workload.description.is_empty() {
        println!("{}", workload.description);
    }
    let mut times: Vec<(String, f64)> = Vec::new();
    for plan in &workload.plans {
        let t = straggler_step_time(&workload, plan, &hw, 0.0)?;
        println!(
            "{}: predicted step {:.3} us ({}, TP={}, DP={})",
            plan.name,
            t * 1e6,
            plan.config.label(),
            plan.tp,
            plan.dp
        );
        times.push((plan.name.clone(), t));
    }
    let lookup = |name: &str| times.iter().find(|(n, _)| n == name).map(|(_, t)| *t);
    let mut all_ok = true;
    for pair in workload.expected_order.windows(2) {
        let (fast, slow) = (&pair[0], &pair[1]);
        // Validated by WorkloadSpec::validate: both names resolve.
        let (tf, ts) = (
            lookup(fast).expect("validated"),
            lookup(slow).expect("validated"),
        );
        let gap = (tf - ts).abs() / tf.max(ts);
        if gap <= 1e-9 {
            println!("{fast} = {slow} (within 1e-9): CONSISTENT with expected ordering (tie)");
        } else if tf < ts {
            println!("{fast} < {slow}: CONSISTENT with expected ordering");
        } else {
            println!(
                "{fast} >= {slow}: INCONSISTENT with expected ordering ({:.3} us vs {:.3} us)",
                tf * 1e6,
                ts * 1e6
            );
            all_ok = false;
        }
    }
    Ok(verdict_code(all_ok))
}
