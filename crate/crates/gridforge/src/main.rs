//! Command-line front end: run scenarios, sweep disturbances, or dump
//! the initialized equilibrium; emits CSV time series and JSON metrics.

use clap::{Args, Parser, Subcommand};
use gridforge::scenarios::{
    self, preset, run_scenario, sweep_disturbances, ScenarioConfig, Stability, SweepEntry,
    TimeSeries,
};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "gridforge", version, about = "EMT simulation of mixed machine/converter grids")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write timeseries.csv / metrics.json.
    Run(RunArgs),
    /// Run a disturbance sweep and write sweep.csv per strategy.
    Sweep(SweepArgs),
    /// Initialize only; write equilibrium.json and print the residual.
    Init(RunArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Preset name or path to a TOML scenario config.
    scenario: Option<String>,
    /// Preset name (alternative to the positional argument).
    #[arg(long)]
    preset: Option<String>,
    /// Grid-forming strategy: droop | vsm | matching | dvoc.
    #[arg(long)]
    strategy: Option<String>,
    /// Load-step size in pu.
    #[arg(long)]
    dp: Option<f64>,
    /// Simulation end time, seconds.
    #[arg(long = "t-end")]
    t_end: Option<f64>,
    /// Integration step, seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Config override KEY=VALUE (repeatable); scalar scenario fields
    /// or converter gains (optionally "busN."-prefixed).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated strategy list (may include all-sm); one result
    /// file per entry.
    #[arg(long, value_delimiter = ',')]
    strategies: Vec<String>,
}

fn main() {
    if let Ok(threads) = std::env::var("GRIDFORGE_THREADS") {
        match threads.parse::<usize>() {
            Ok(n) if n >= 1 => {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .ok();
            }
            _ => {
                eprintln!("error: GRIDFORGE_THREADS must be a positive integer, got '{threads}'");
                std::process::exit(1);
            }
        }
    }
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Run(a) => cmd_run(&a.common),
        Cmd::Sweep(a) => cmd_sweep(&a),
        Cmd::Init(a) => cmd_init(&a.common),
    };
    std::process::exit(code);
}

/// Resolve the scenario config from preset/config-file plus flags.
fn resolve_config(common: &CommonArgs, default_preset: Option<&str>) -> Result<ScenarioConfig, String> {
    let strategy = common.strategy.as_deref().unwrap_or("droop");
    let source = common
        .scenario
        .as_deref()
        .or(common.preset.as_deref())
        .or(default_preset)
        .ok_or("no scenario given: pass a preset name or config path")?;
    let mut cfg = if Path::new(source).is_file() {
        let text = std::fs::read_to_string(source)
            .map_err(|e| format!("cannot read config '{source}': {e}"))?;
        toml::from_str::<ScenarioConfig>(&text)
            .map_err(|e| format!("config '{source}': {e}"))?
    } else if source.ends_with(".toml") || source.contains('/') {
        return Err(format!("config file '{source}' not found"));
    } else {
        preset(source, strategy, common.dp).map_err(|e| e.to_string())?
    };
    if let Some(dp) = common.dp {
        for e in &mut cfg.events {
            if let scenarios::EventKind::LoadStep { delta_p, .. } = &mut e.kind {
                *delta_p = dp;
            }
        }
    }
    if let Some(t_end) = common.t_end {
        cfg.t_end = t_end;
    }
    if let Some(dt) = common.dt {
        cfg.dt = dt;
    }
    for ov in &common.overrides {
        let (key, value) = ov
            .split_once('=')
            .ok_or_else(|| format!("override '{ov}' is not KEY=VALUE"))?;
        let num: f64 = value
            .parse()
            .map_err(|_| format!("override '{key}': '{value}' is not a number"))?;
        match key {
            "base_load" => cfg.base_load = num,
            "t_end" => cfg.t_end = num,
            "dt" => cfg.dt = num,
            "sm_droop_gain" => cfg.sm_droop_gain = num,
            "metrics_window" => cfg.metrics_window = num,
            "event.time" => {
                for e in &mut cfg.events {
                    e.time = num;
                }
            }
            _ => {
                cfg.overrides.insert(key.to_string(), num);
            }
        }
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn fmt9(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        // 9 significant digits, plain decimal.
        format!("{:.8e}", v)
    }
}

fn write_timeseries(path: &Path, s: &TimeSeries) -> std::io::Result<()> {
    let mut out = String::new();
    out.push('t');
    for name in &s.device_names {
        for ch in ["omega_pu", "p", "q", "v_dc", "i_tau", "i_dc"] {
            let _ = write!(out, ",{name}_{ch}");
        }
    }
    for b in &s.bus_names {
        let _ = write!(out, ",vmag_{b}");
    }
    out.push('\n');
    for i in 0..s.t.len() {
        out.push_str(&fmt9(s.t[i]));
        for d in 0..s.device_names.len() {
            for ch in [&s.omega_pu, &s.p, &s.q, &s.v_dc, &s.i_tau, &s.i_dc] {
                out.push(',');
                out.push_str(&fmt9(ch[d][i]));
            }
        }
        for b in 0..s.bus_names.len() {
            out.push(',');
            out.push_str(&fmt9(s.vmag[b][i]));
        }
        out.push('\n');
    }
    std::fs::write(path, out)
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a ScenarioConfig,
    output_dir: String,
    wall_clock_seconds: f64,
    determinism: &'static str,
}

fn write_manifest(dir: &Path, cfg: &ScenarioConfig, elapsed: f64) -> std::io::Result<()> {
    let manifest = Manifest {
        tool: "gridforge",
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        output_dir: dir.display().to_string(),
        wall_clock_seconds: elapsed,
        determinism: "seed-free: fixed-step integration, outputs fully determined by the config",
    };
    let tmp = dir.join("manifest.json.tmp");
    std::fs::write(&tmp, serde_json::to_string_pretty(&manifest).unwrap())?;
    std::fs::rename(tmp, dir.join("manifest.json"))
}

fn fail(msg: &str) -> i32 {
    eprintln!("error: {msg}");
    1
}

fn cmd_run(common: &CommonArgs) -> i32 {
    let start = Instant::now();
    let cfg = match resolve_config(common, None) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Err(e) = std::fs::create_dir_all(&common.out) {
        return fail(&format!("cannot create output dir '{}': {e}", common.out.display()));
    }
    let outcome = match run_scenario(&cfg) {
        Ok(o) => o,
        Err(e) => return fail(&e.to_string()),
    };
    if let Err(e) = write_timeseries(&common.out.join("timeseries.csv"), &outcome.series) {
        return fail(&format!("writing timeseries.csv: {e}"));
    }
    #[derive(Serialize)]
    struct MetricsFile<'a> {
        #[serde(flatten)]
        metrics: &'a scenarios::MetricsReport,
        init_residual: f64,
        aborted_at: Option<f64>,
    }
    let metrics = MetricsFile {
        metrics: &outcome.metrics,
        init_residual: outcome.init_residual,
        aborted_at: outcome.aborted_at,
    };
    if let Err(e) = std::fs::write(
        common.out.join("metrics.json"),
        serde_json::to_string_pretty(&metrics).unwrap(),
    ) {
        return fail(&format!("writing metrics.json: {e}"));
    }
    if let Err(e) = write_manifest(&common.out, &cfg, start.elapsed().as_secs_f64()) {
        return fail(&format!("writing manifest.json: {e}"));
    }
    println!(
        "{}: {} (nadir {:.4} rad/s, rocof {:.4} rad/s^2, source {})",
        cfg.name,
        match outcome.metrics.stability {
            Stability::Stable => "stable",
            Stability::DcCollapse => "dc-collapse",
            Stability::NonSynchronized => "non-synchronized",
        },
        outcome.metrics.nadir,
        outcome.metrics.rocof,
        outcome.metrics.frequency_source,
    );
    match outcome.metrics.stability {
        Stability::Stable => 0,
        _ => 2,
    }
}

fn write_sweep_csv(path: &Path, entries: &[SweepEntry]) -> std::io::Result<()> {
    let mut out = String::from("dp,nadir,rocof,nadir_norm,rocof_norm,stability\n");
    for e in entries {
        match &e.result {
            Ok(m) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    fmt9(e.delta_p),
                    fmt9(m.nadir),
                    fmt9(m.rocof),
                    fmt9(m.nadir_norm.unwrap_or(f64::NAN)),
                    fmt9(m.rocof_norm.unwrap_or(f64::NAN)),
                    match m.stability {
                        Stability::Stable => "stable",
                        Stability::DcCollapse => "dc-collapse",
                        Stability::NonSynchronized => "non-synchronized",
                    }
                );
            }
            Err(err) => {
                let _ = writeln!(
                    out,
                    "{},nan,nan,nan,nan,error: {}",
                    fmt9(e.delta_p),
                    err.replace(',', ";")
                );
            }
        }
    }
    std::fs::write(path, out)
}

fn cmd_sweep(args: &SweepArgs) -> i32 {
    let start = Instant::now();
    let strategies: Vec<String> = if args.strategies.is_empty() {
        vec![args.common.strategy.clone().unwrap_or_else(|| "droop".into())]
    } else {
        args.strategies.clone()
    };
    if let Err(e) = std::fs::create_dir_all(&args.common.out) {
        return fail(&format!(
            "cannot create output dir '{}': {e}",
            args.common.out.display()
        ));
    }
    let dps = scenarios::sweep_grid();
    let mut last_cfg = None;
    for strategy in &strategies {
        let mut common = args.common.clone();
        common.strategy = Some(strategy.clone());
        let cfg = match resolve_config(&common, Some("sweep-9bus")) {
            Ok(c) => c,
            Err(e) => return fail(&format!("strategy {strategy}: {e}")),
        };
        let entries = sweep_disturbances(&cfg, &dps);
        let file = if strategies.len() == 1 {
            "sweep.csv".to_string()
        } else {
            format!("sweep-{strategy}.csv")
        };
        if let Err(e) = write_sweep_csv(&args.common.out.join(&file), &entries) {
            return fail(&format!("writing {file}: {e}"));
        }
        let completed = entries.iter().filter(|e| e.result.is_ok()).count();
        println!("{strategy}: {completed}/{} runs completed -> {file}", entries.len());
        if completed < entries.len() {
            for e in entries.iter().filter(|e| e.result.is_err()) {
                eprintln!("  dp={}: {}", e.delta_p, e.result.as_ref().unwrap_err());
            }
        }
        last_cfg = Some(cfg);
    }
    if let Some(cfg) = &last_cfg {
        if let Err(e) = write_manifest(&args.common.out, cfg, start.elapsed().as_secs_f64()) {
            return fail(&format!("writing manifest.json: {e}"));
        }
    }
    0
}

fn cmd_init(common: &CommonArgs) -> i32 {
    let cfg = match resolve_config(common, None) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    let mut sys = match scenarios::build_system(&cfg) {
        Ok(s) => s,
        Err(e) => return fail(&e.to_string()),
    };
    let x = match sys.initialize(1e-8) {
        Ok(x) => x,
        Err(e) => return fail(&format!("initialization: {e}")),
    };
    let env = sys.env();
    let mut r = vec![0.0; sys.dim()];
    sys.rotating_residual(&x, &env, &mut r);
    let residual = gridforge::numerics::inf_norm(&r);
    if let Err(e) = std::fs::create_dir_all(&common.out) {
        return fail(&format!("cannot create output dir '{}': {e}", common.out.display()));
    }
    #[derive(Serialize)]
    struct EqEntry {
        device: String,
        state: String,
        value: f64,
    }
    #[derive(Serialize)]
    struct EqFile {
        residual: f64,
        states: Vec<EqEntry>,
    }
    let states = sys
        .layout
        .entries()
        .iter()
        .map(|e| EqEntry {
            device: e.device.clone(),
            state: e.state.clone(),
            value: x[e.index],
        })
        .collect();
    let file = EqFile { residual, states };
    if let Err(e) = std::fs::write(
        common.out.join("equilibrium.json"),
        serde_json::to_string_pretty(&file).unwrap(),
    ) {
        return fail(&format!("writing equilibrium.json: {e}"));
    }
    println!("max rotating-frame residual: {residual:.3e}");
    0
}
