//! `mpa-qkd`: oracle tables, Monte Carlo sessions, correlation sweeps and the
//! fair-sampling test from the command line.

mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use chrono::Utc;
use clap::{Parser, Subcommand};
use mpa_qkd::countermeasures::{
    analyze_monitors, faked_state_fs_demo, fs_verdict, run_fs_test, FS_MIN_PULSES_PER_BIN,
    UNFAIR_Z_THRESHOLD,
};
use mpa_qkd::eve::eve_error_rates;
use mpa_qkd::oracle::{self, OracleReport};
use mpa_qkd::polarization::{click_probability, AbsorptionOrder, Angle};
use mpa_qkd::protocol::with_workers;
use mpa_qkd::report::{fmt_float, write_csv, write_json};
use mpa_qkd::rng::derive_seed;
use mpa_qkd::source::CountModel;
use mpa_qkd::{AttackOrder, Session, SessionSummary, SourceConfig, SourceMode};
use serde_json::json;

use config::{parse_orders, CommonArgs, RunConfig, SourceArgs};
use manifest::Outputs;

#[derive(Parser)]
#[command(
    name = "mpa-qkd",
    version,
    about = "Multiphoton-absorption attack on entanglement-based QKD"
)]
struct Cli {
    #[command(flatten)]
    common: CommonArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact statistics for a list of attacks (the four reference rows by default).
    OracleTable {
        /// Attack orders `n,m`; repeatable.
        #[arg(long = "orders", value_parser = parse_orders)]
        orders: Vec<AttackOrder>,
    },
    /// Monte Carlo session with sifting, CHSH, Eve's key and monitors.
    Simulate {
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Correlation and coincidence rate versus analyzer offset.
    Sweep {
        #[command(flatten)]
        source: SourceArgs,
        /// Number of grid points between `delta_min` and `delta_max`.
        #[arg(long)]
        points: Option<usize>,
    },
    /// Polarimeter fair-sampling test on Alice's side.
    FsTest {
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Faked-state pulses against polarimeters.
    FakedStateDemo {
        #[arg(long)]
        intensity: Option<f64>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::OracleTable { .. } => "oracle-table",
            Command::Simulate { .. } => "simulate",
            Command::Sweep { .. } => "sweep",
            Command::FsTest { .. } => "fs-test",
            Command::FakedStateDemo { .. } => "faked-state-demo",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(manifest) => {
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<PathBuf> {
    let started = Utc::now();
    let common = &cli.common;
    let source_args = match &cli.command {
        Command::Simulate { source }
        | Command::Sweep { source, .. }
        | Command::FsTest { source } => Some(source),
        _ => None,
    };
    let mut cfg = RunConfig::resolve(common, source_args)?;
    match &cli.command {
        Command::Sweep {
            points: Some(p), ..
        } => cfg.sweep.points = *p,
        Command::FakedStateDemo {
            intensity,
            threshold,
        } => {
            if let Some(i) = intensity {
                cfg.faked_state.intensity = *i;
            }
            if let Some(t) = threshold {
                cfg.faked_state.threshold = *t;
            }
        }
        _ => {}
    }
    cfg.validate()?;

    let mut out = Outputs::new(&common.out)
        .with_context(|| format!("creating output directory {}", common.out.display()))?;
    let workers = common.workers;
    let summary = match &cli.command {
        Command::OracleTable { orders } => oracle_table(orders, &mut out)?,
        Command::Simulate { .. } => with_workers(workers, || simulate(&cfg, &mut out))??,
        Command::Sweep { .. } => with_workers(workers, || sweep(&cfg, &mut out))??,
        Command::FsTest { .. } => with_workers(workers, || fs_test(&cfg, &mut out))??,
        Command::FakedStateDemo { .. } => faked_state(&cfg, &mut out)?,
    };
    write_json(&out.path("config.json"), &cfg)?;
    out.finish(cli.command.name(), cfg, workers, started, summary)
}

fn oracle_table(orders: &[AttackOrder], out: &mut Outputs) -> anyhow::Result<serde_json::Value> {
    let rows: Vec<OracleReport> = if orders.is_empty() {
        oracle::reference_table()
    } else {
        orders
            .iter()
            .map(|&a| OracleReport::for_attack(a))
            .collect()
    };
    write_csv(
        &out.path("oracle_table.csv"),
        &OracleReport::CSV_HEADER,
        rows.iter().map(OracleReport::csv_record),
    )?;
    write_json(&out.path("oracle_table.json"), &rows)?;

    let click_orders: Vec<AbsorptionOrder> =
        (1..=3).map(|n| AbsorptionOrder::new(n).unwrap()).collect();
    let mut header = vec!["angle".to_string()];
    header.extend(click_orders.iter().map(|o| format!("order_{}", o.get())));
    let records = (0..=180).map(|k| {
        let x = std::f64::consts::PI * k as f64 / 180.0;
        let mut rec = vec![fmt_float(x)];
        rec.extend(
            click_orders
                .iter()
                .map(|&o| fmt_float(click_probability(o, Angle::from_radians(x), Angle::ZERO))),
        );
        rec
    });
    write_csv(&out.path("click_probability.csv"), &header, records)?;
    Ok(json!({ "rows": rows }))
}

fn simulate(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<serde_json::Value> {
    let session = Session::new(cfg.protocol.clone(), cfg.source)?;
    let stats = session.run();
    let summary = SessionSummary::new(&cfg.protocol, &cfg.source, &stats);
    write_csv(
        &out.path("session.csv"),
        &mpa_qkd::SessionStats::CSV_HEADER,
        stats.csv_records(),
    )?;
    write_json(&out.path("session.json"), &summary)?;

    let eve = match session.source() {
        Some(src) if !stats.key_events.is_empty() => {
            let report = eve_error_rates(&stats, &src.replay(cfg.protocol.seed))?;
            write_json(&out.path("eve_report.json"), &report)?;
            Some(report)
        }
        _ => None,
    };
    let monitors = analyze_monitors(&stats);
    write_json(&out.path("monitors.json"), &monitors)?;

    Ok(json!({
        "chsh": summary.chsh.as_ref().map(|c| c.s),
        "chsh_stderr": summary.chsh.as_ref().map(|c| c.standard_error),
        "padded_chsh": summary.padded_chsh.as_ref().map(|c| c.s),
        "qber": summary.qber,
        "key_length": summary.key_length,
        "key_digest": summary.key_digest,
        "double_clicks": stats.total_double_clicks(),
        "eve_error_per_emitted": eve.as_ref().map(|e| e.per_emitted),
        "eve_error_per_sifted": eve.as_ref().map(|e| e.per_sifted),
        "sum_visibility": monitors.sum_visibility.map(|v| v.value),
    }))
}

/// Coincidence-normalized correlation of the source at offset `delta`, when
/// it has a closed form.
fn oracle_correlation(source: &SourceConfig, delta: Angle) -> Option<f64> {
    match (source.mode, source.count_model) {
        (SourceMode::Singlet, _) => Some(-(2.0 * delta.radians()).cos()),
        (SourceMode::Mpa, CountModel::Poisson { .. }) => None,
        (SourceMode::Mpa, CountModel::Fixed) => {
            let attacks: Vec<AttackOrder> = if source.asymmetric_alternating {
                (0..2)
                    .map(|i| {
                        let (alice, bob) = source.orders_for(i);
                        AttackOrder { alice, bob }
                    })
                    .collect()
            } else {
                vec![source.attack]
            };
            let mut p = [[0.0; 2]; 2];
            for a in &attacks {
                let t = oracle::joint_table(*a, delta);
                for k in 0..2 {
                    for l in 0..2 {
                        p[k][l] += t[k][l];
                    }
                }
            }
            let total: f64 = p.iter().flatten().sum();
            Some((p[0][0] - p[0][1] - p[1][0] + p[1][1]) / total)
        }
    }
}

fn sweep(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<serde_json::Value> {
    let grid = cfg.sweep.grid();
    let mut records = Vec::with_capacity(grid.len());
    let mut max_dev: f64 = 0.0;
    for (k, &d) in grid.iter().enumerate() {
        let mut p = cfg.protocol.clone();
        p.settings_alice = vec![Angle::from_radians(d)];
        p.settings_bob = vec![Angle::ZERO];
        p.seed = derive_seed(cfg.protocol.seed, k as u64);
        let stats = Session::new(p, cfg.source)?.run();
        let pair = stats.pair(0, 0);
        let n = pair.total_coincidences();
        let e = pair.correlation();
        let stderr = e.map(|e| ((1.0 - e * e) / n as f64).sqrt());
        let e_oracle = oracle_correlation(&cfg.source, Angle::from_radians(d));
        if let (Some(e), Some(o), Some(s)) = (e, e_oracle, stderr) {
            if s > 0.0 {
                max_dev = max_dev.max((e - o).abs() / s);
            }
        }
        let opt = |x: Option<f64>| x.map(fmt_float).unwrap_or_default();
        records.push(vec![
            fmt_float(d),
            opt(e),
            opt(e_oracle),
            opt(stderr),
            fmt_float(n as f64 / pair.trials as f64),
        ]);
    }
    write_csv(
        &out.path("sweep.csv"),
        &["delta", "E_mc", "E_oracle", "stderr", "sum_coincidences"],
        records,
    )?;
    Ok(json!({ "points": grid.len(), "max_abs_z_vs_oracle": max_dev }))
}

fn fs_test(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<serde_json::Value> {
    let mut p = cfg.protocol.clone();
    p.settings_alice = cfg.fs_test.settings();
    let stats = run_fs_test(&p, &cfg.source, cfg.fs_test.polarimeter_angles)?;
    write_csv(
        &out.path("fs_test.csv"),
        &mpa_qkd::countermeasures::FsTestStats::CSV_HEADER,
        stats.csv_records(),
    )?;
    let verdict = fs_verdict(&stats)?;
    let doc = json!({
        "verdict": verdict.verdict,
        "fit": verdict.fit,
        "unfair_z_threshold": UNFAIR_Z_THRESHOLD,
        "min_pulses_per_bin": FS_MIN_PULSES_PER_BIN,
        "pulses": stats.pulses,
        "detected_pulses": stats.detected_pulses,
        "bins": stats.bins,
    });
    write_json(&out.path("fs_verdict.json"), &doc)?;
    Ok(json!({
        "verdict": verdict.verdict,
        "amplitude_z": verdict.fit.amplitude_z,
        "modulation_ratio": verdict.fit.ratio.value,
    }))
}

fn faked_state(cfg: &RunConfig, out: &mut Outputs) -> anyhow::Result<serde_json::Value> {
    let demo = faked_state_fs_demo(cfg.faked_state.intensity, cfg.faked_state.threshold)?;
    write_json(&out.path("faked_state.json"), &demo)?;
    let records = demo.cells.iter().map(|c| {
        vec![
            serde_json::to_value(c.basis)
                .unwrap()
                .as_str()
                .unwrap()
                .to_string(),
            fmt_float(c.polarimeter_offset),
            c.eve_bit.index().to_string(),
            c.clicks.to_string(),
        ]
    });
    write_csv(
        &out.path("faked_state.csv"),
        &["eve_basis", "offset", "eve_bit", "clicks"],
        records,
    )?;
    Ok(json!({
        "exposed": demo.exposed,
        "missing_clicks_at": demo.missing_clicks_at,
        "double_clicks_at": demo.double_clicks_at,
    }))
}
