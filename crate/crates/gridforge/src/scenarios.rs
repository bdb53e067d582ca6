//! Scenario assembly and execution on the 9-bus system: named presets,
//! disturbance events, frequency metrics, stability classification and
//! parallel disturbance sweeps.

use crate::controllers::{Gfc, InnerLoopGains};
use crate::converter::ConverterParams;
use crate::machine::SmParams;
use crate::network::build_nine_bus;
use crate::numerics::{inf_norm, IntegratorConfig, Method, StepScratch};
use crate::system::{
    Device, DeviceDiag, DeviceKind, DeviceSpec, InitError, Role, SystemModel, SystemSpec,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    /// Constant-admittance load step drawing `delta_p` pu at 1 pu
    /// voltage.
    LoadStep { bus: usize, delta_p: f64 },
    /// Disconnect the machine at a generator bus together with its
    /// step-up transformer.
    MachineTrip { bus: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Event {
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// One generation unit of the scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenSpec {
    pub bus: usize,
    /// "sm" or a grid-forming strategy name.
    pub kind: String,
    /// Active-power dispatch in pu; `None` marks the slack unit.
    pub dispatch: Option<f64>,
    pub vmag: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Thresholds {
    /// DC-collapse level relative to the nominal DC voltage.
    pub v_dc_collapse: f64,
    /// Time the DC voltage must stay below the level, seconds.
    pub collapse_hold: f64,
    /// Pairwise frequency agreement bound, pu.
    pub sync_tol: f64,
    /// Fraction of the run (from the end) checked for synchronization.
    pub tail_frac: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            v_dc_collapse: 0.6,
            collapse_hold: 0.01,
            sync_tol: 1e-3,
            tail_frac: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// Total constant-power base load, pu.
    pub base_load: f64,
    pub gen: Vec<GenSpec>,
    pub events: Vec<Event>,
    pub t_end: f64,
    pub dt: f64,
    /// "rk4" or "trapezoidal".
    pub method: String,
    /// RoCoF window, seconds.
    pub metrics_window: f64,
    pub thresholds: Thresholds,
    /// Governor gain applied to scenario machines (pu power per pu
    /// frequency); presets use the converters' common sharing slope.
    pub sm_droop_gain: f64,
    /// Gain overrides: "<key>" applies to every converter,
    /// "bus<N>.<key>" to the converter at that bus.
    #[serde(default)]
    pub overrides: BTreeMap<String, f64>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.gen.is_empty() {
            return Err(ScenarioError::Invalid("no generation units".into()));
        }
        if self.gen.iter().filter(|g| g.dispatch.is_none()).count() != 1 {
            return Err(ScenarioError::Invalid(
                "exactly one slack unit required".into(),
            ));
        }
        if !(self.t_end > 0.0) || !(self.dt > 0.0) {
            return Err(ScenarioError::Invalid("t_end and dt must be positive".into()));
        }
        if !(self.metrics_window > 0.0) || self.metrics_window > self.t_end {
            return Err(ScenarioError::Invalid("invalid metrics window".into()));
        }
        for e in &self.events {
            if e.time < 0.0 || e.time > self.t_end {
                return Err(ScenarioError::Invalid(format!(
                    "event time {} outside [0, t_end]",
                    e.time
                )));
            }
            let bus = match &e.kind {
                EventKind::LoadStep { bus, .. } => *bus,
                EventKind::MachineTrip { bus } => *bus,
            };
            if bus >= 9 {
                return Err(ScenarioError::Invalid(format!("event bus {bus} out of range")));
            }
            if let EventKind::MachineTrip { bus } = &e.kind {
                if !self
                    .gen
                    .iter()
                    .any(|g| g.bus == *bus && g.kind == "sm")
                {
                    return Err(ScenarioError::Invalid(format!(
                        "no machine at bus {bus} to trip"
                    )));
                }
            }
        }
        for g in &self.gen {
            if g.kind != "sm" && Gfc::from_name(&g.kind).is_none() {
                return Err(ScenarioError::Invalid(format!(
                    "unknown generation kind '{}'",
                    g.kind
                )));
            }
        }
        Ok(())
    }

    /// Magnitude of the first load-step event, if any (used for metric
    /// normalization).
    pub fn disturbance_size(&self) -> Option<f64> {
        self.events.iter().find_map(|e| match &e.kind {
            EventKind::LoadStep { delta_p, .. } => Some(delta_p.abs()),
            EventKind::MachineTrip { .. } => None,
        })
    }

    pub fn first_event_time(&self) -> f64 {
        self.events
            .iter()
            .map(|e| e.time)
            .fold(f64::INFINITY, f64::min)
            .min(self.t_end)
            .max(0.0)
    }
}

/// Build a preset configuration. `strategy` selects the grid-forming
/// law for the converter units ("all-sm" replaces them with machines in
/// the sweep preset); `dp` overrides the load-step size.
pub fn preset(name: &str, strategy: &str, dp: Option<f64>) -> Result<ScenarioConfig, ScenarioError> {
    // Scheduled voltage at the generator buses: slightly above nominal
    // so the constant-impedance load level leaves the saturated DC
    // sources pinned until governor relief arrives.
    const SCHED_V: f64 = 1.022;
    let gfc_gen = |bus: usize, dispatch: Option<f64>| GenSpec {
        bus,
        kind: strategy.to_string(),
        dispatch,
        vmag: SCHED_V,
    };
    let sm_gen = |bus: usize, dispatch: Option<f64>| GenSpec {
        bus,
        kind: "sm".to_string(),
        dispatch,
        vmag: SCHED_V,
    };
    let load_step = |delta_p: f64| Event {
        time: 0.5,
        kind: EventKind::LoadStep { bus: 6, delta_p },
    };
    let base = ScenarioConfig {
        name: name.to_string(),
        base_load: 2.25,
        gen: vec![],
        events: vec![],
        t_end: 10.0,
        dt: 10e-6,
        method: "rk4".into(),
        metrics_window: 0.25,
        thresholds: Thresholds::default(),
        sm_droop_gain: 100.0,
        overrides: BTreeMap::new(),
    };
    let check_strategy = || -> Result<(), ScenarioError> {
        if Gfc::from_name(strategy).is_none() {
            return Err(ScenarioError::Invalid(format!(
                "unknown strategy '{strategy}'"
            )));
        }
        Ok(())
    };
    match name {
        "large-disturbance" => {
            check_strategy()?;
            Ok(ScenarioConfig {
                gen: vec![
                    sm_gen(0, None),
                    gfc_gen(1, Some(0.75)),
                    gfc_gen(2, Some(0.75)),
                ],
                events: vec![load_step(dp.unwrap_or(0.9))],
                ..base
            })
        }
        "all-gfc" => {
            check_strategy()?;
            Ok(ScenarioConfig {
                gen: vec![
                    gfc_gen(0, None),
                    gfc_gen(1, Some(0.75)),
                    gfc_gen(2, Some(0.75)),
                ],
                events: vec![load_step(dp.unwrap_or(0.9))],
                ..base
            })
        }
        "loss-of-sm" => {
            check_strategy()?;
            Ok(ScenarioConfig {
                base_load: 2.1,
                gen: vec![
                    sm_gen(0, None),
                    gfc_gen(1, Some(0.75)),
                    gfc_gen(2, Some(0.75)),
                ],
                events: vec![Event {
                    time: 0.5,
                    kind: EventKind::MachineTrip { bus: 0 },
                }],
                ..base
            })
        }
        "sweep-9bus" => {
            let gens = if strategy == "all-sm" {
                vec![sm_gen(0, None), sm_gen(1, Some(0.75)), sm_gen(2, Some(0.75))]
            } else {
                check_strategy()?;
                vec![
                    sm_gen(0, None),
                    gfc_gen(1, Some(0.75)),
                    gfc_gen(2, Some(0.75)),
                ]
            };
            Ok(ScenarioConfig {
                base_load: 2.0,
                gen: gens,
                events: vec![load_step(dp.unwrap_or(0.2))],
                t_end: 5.5,
                dt: 50e-6,
                ..base
            })
        }
        _ => Err(ScenarioError::Invalid(format!("unknown preset '{name}'"))),
    }
}

/// The disturbance grid of the sweep preset: 100 load steps from
/// 0.2 pu rising uniformly by 0.007 pu.
pub fn sweep_grid() -> Vec<f64> {
    (0..100).map(|k| 0.2 + 0.007 * k as f64).collect()
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("initialization failed: {0}")]
    Init(#[from] InitError),
    #[error("integration failed at t = {0:.4} s: {1}")]
    Integration(f64, String),
}

fn apply_gfc_overrides(
    params: &mut ConverterParams,
    gfc: &mut Gfc,
    dc_k: &mut Option<f64>,
    inner: &mut InnerLoopGains,
    bus: usize,
    overrides: &BTreeMap<String, f64>,
) -> Result<(), ScenarioError> {
    let prefix = format!("bus{bus}.");
    for (key, &val) in overrides {
        let key = match key.strip_prefix(&prefix) {
            Some(k) => k,
            None if key.contains('.') && key.starts_with("bus") => continue,
            None => key.as_str(),
        };
        match key {
            "k_dc" => *dc_k = Some(val),
            "i_max" => params.i_max = val,
            "tau_dc" => params.tau_dc = val,
            "c_dc_f" => params.module.c_dc = val,
            "literal_g_dc" => params.literal_g_dc = val != 0.0,
            "d_omega" => match gfc {
                Gfc::Droop(p) => p.d_omega_pu = val,
                Gfc::Vsm(p) => p.d_omega_pu = val,
                _ => {}
            },
            "t_j" => {
                if let Gfc::Vsm(p) = gfc {
                    p.t_j = val;
                }
            }
            "eta" => {
                if let Gfc::Dvoc(p) = gfc {
                    p.eta = val;
                }
            }
            "alpha" => {
                if let Gfc::Dvoc(p) = gfc {
                    p.alpha = val;
                }
            }
            "k_pv" => inner.k_pv = val,
            "k_iv" => inner.k_iv = val,
            "k_pi" => inner.k_pi = val,
            "k_ii" => inner.k_ii = val,
            "kv_p" | "kv_i" => {
                let pi = match gfc {
                    Gfc::Droop(p) => &mut p.voltage,
                    Gfc::Vsm(p) => &mut p.voltage,
                    Gfc::Matching(p) => &mut p.voltage,
                    Gfc::Dvoc(_) => continue,
                };
                if key == "kv_p" {
                    pi.k_p = val;
                } else {
                    pi.k_i = val;
                }
            }
            other => {
                return Err(ScenarioError::Invalid(format!(
                    "unknown override key '{other}'"
                )))
            }
        }
    }
    Ok(())
}

/// Instantiate the system for a scenario.
pub fn build_system(cfg: &ScenarioConfig) -> Result<SystemModel, ScenarioError> {
    cfg.validate()?;
    let case = build_nine_bus(cfg.base_load);
    let mut devices = Vec::new();
    for g in &cfg.gen {
        let role = match g.dispatch {
            Some(p) => Role::Pv { p, vmag: g.vmag },
            None => Role::Slack { vmag: g.vmag },
        };
        let name = format!("{}{}", if g.kind == "sm" { "sm" } else { "gfc" }, g.bus + 1);
        let kind = if g.kind == "sm" {
            let params = SmParams {
                d_p: cfg.sm_droop_gain,
                ..Default::default()
            };
            DeviceKind::Machine(Box::new(params))
        } else {
            let mut params = ConverterParams::default();
            let mut gfc = Gfc::from_name(&g.kind).expect("validated");
            let mut k_dc = None;
            let mut inner = InnerLoopGains::default();
            apply_gfc_overrides(&mut params, &mut gfc, &mut k_dc, &mut inner, g.bus, &cfg.overrides)?;
            DeviceKind::Converter(Box::new(params), gfc)
        };
        devices.push(DeviceSpec {
            name,
            bus: g.bus,
            kind,
            role,
        });
    }
    let mut sys = SystemModel::build(SystemSpec { case, devices })?;
    // The k_dc override is applied post-build (it lives on the device).
    for dev in &mut sys.devices {
        if let Device::Converter(c) = dev {
            let mut params = c.params.clone();
            let mut gfc = c.gfc.clone();
            let mut k_dc = None;
            let mut inner = c.inner;
            apply_gfc_overrides(&mut params, &mut gfc, &mut k_dc, &mut inner, c.bus, &cfg.overrides)?;
            c.inner = inner;
            if let Some(k) = k_dc {
                c.dc.k_dc = k;
            }
        }
    }
    Ok(sys)
}

/// Uniformly sampled simulation channels (1 kHz).
#[derive(Debug, Clone, Serialize)]
pub struct TimeSeries {
    pub t: Vec<f64>,
    pub device_names: Vec<String>,
    pub bus_names: Vec<String>,
    /// Device frequency, pu: `[device][sample]`.
    pub omega_pu: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    /// DC-link voltage pu; NaN channels for machines.
    pub v_dc: Vec<Vec<f64>>,
    pub i_tau: Vec<Vec<f64>>,
    pub i_dc: Vec<Vec<f64>>,
    pub saturated: Vec<Vec<bool>>,
    /// Bus voltage magnitudes, pu: `[bus][sample]`.
    pub vmag: Vec<Vec<f64>>,
    /// Device indices that are converters.
    pub converter_idx: Vec<usize>,
    /// Sample index from which each device is disconnected.
    pub off_from: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Stable,
    DcCollapse,
    NonSynchronized,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    /// Frequency nadir/zenith ‖Δω‖∞, rad/s.
    pub nadir: f64,
    /// Maximum RoCoF over the sliding window, rad/s².
    pub rocof: f64,
    /// RoCoF window, seconds.
    pub window: f64,
    /// Disturbance magnitude used for normalization, pu.
    pub delta_p: Option<f64>,
    pub nadir_norm: Option<f64>,
    pub rocof_norm: Option<f64>,
    pub stability: Stability,
    /// Saturation intervals (start, end) per converter, device order.
    pub saturation: Vec<Vec<(f64, f64)>>,
    /// Name of the device whose frequency fed the metrics.
    pub frequency_source: String,
}

#[derive(Debug)]
pub struct ScenarioOutcome {
    pub series: TimeSeries,
    pub metrics: MetricsReport,
    pub x0: Vec<f64>,
    pub init_residual: f64,
    /// Time at which integration aborted on non-finite values, if any.
    pub aborted_at: Option<f64>,
}

/// Eq.-style frequency metrics on a uniformly sampled signal: nadir is
/// the worst deviation from ω★ after t₀; RoCoF the worst sliding-window
/// slope |ω(t+T)−ω(t)|/T.
pub fn frequency_metrics(
    t: &[f64],
    omega: &[f64],
    omega_star: f64,
    t0: f64,
    window: f64,
) -> (f64, f64) {
    assert_eq!(t.len(), omega.len());
    let start = t.partition_point(|&tv| tv < t0);
    let mut nadir = 0.0f64;
    for &w in &omega[start..] {
        nadir = nadir.max((omega_star - w).abs());
    }
    let mut rocof = 0.0f64;
    if t.len() >= 2 {
        let dt = t[1] - t[0];
        let k = (window / dt).round() as usize;
        if k >= 1 {
            for i in start..omega.len().saturating_sub(k) {
                rocof = rocof.max((omega[i + k] - omega[i]).abs() / (k as f64 * dt));
            }
        }
    }
    (nadir, rocof)
}

/// Maximal spans where the flag holds.
fn intervals(t: &[f64], flag: &[bool]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &f) in flag.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(t[i]),
            (false, Some(s)) => {
                out.push((s, t[i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, *t.last().unwrap()));
    }
    out
}

/// Classify a completed (or aborted) run.
pub fn classify_stability(series: &TimeSeries, th: &Thresholds) -> (Stability, Vec<Vec<(f64, f64)>>) {
    let n = series.t.len();
    let saturation: Vec<Vec<(f64, f64)>> = series
        .saturated
        .iter()
        .map(|flags| intervals(&series.t, flags))
        .collect();
    if n == 0 {
        return (Stability::NonSynchronized, saturation);
    }
    let dt = if n >= 2 {
        series.t[1] - series.t[0]
    } else {
        th.collapse_hold
    };
    let hold = (th.collapse_hold / dt).round().max(1.0) as usize;
    // DC collapse: v_dc below the threshold for a sustained span.
    for (d, ch) in series.v_dc.iter().enumerate() {
        if !series.converter_idx.contains(&d) {
            continue;
        }
        let mut run = 0usize;
        for &v in ch {
            if v < th.v_dc_collapse || !v.is_finite() {
                run += 1;
                if run >= hold {
                    return (Stability::DcCollapse, saturation);
                }
            } else {
                run = 0;
            }
        }
    }
    // Synchronization over the trailing window: pairwise frequency
    // agreement of all connected devices.
    let tail = ((n as f64) * (1.0 - th.tail_frac)) as usize;
    for s in tail..n {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for d in 0..series.device_names.len() {
            if let Some(off) = series.off_from[d] {
                if s >= off {
                    continue;
                }
            }
            let w = series.omega_pu[d][s];
            if !w.is_finite() {
                return (Stability::NonSynchronized, saturation);
            }
            lo = lo.min(w);
            hi = hi.max(w);
        }
        if hi - lo > th.sync_tol {
            return (Stability::NonSynchronized, saturation);
        }
    }
    (Stability::Stable, saturation)
}

/// Run one scenario end to end.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome, ScenarioError> {
    let mut sys = build_system(cfg)?;
    let x0 = sys.initialize(1e-8)?;
    let mut env = sys.env();
    let mut r = vec![0.0; sys.dim()];
    sys.rotating_residual(&x0, &env, &mut r);
    let init_residual = inf_norm(&r);

    let method = match cfg.method.as_str() {
        "rk4" => Method::ExplicitRk4,
        "trapezoidal" => Method::ImplicitTrapezoidal,
        other => {
            return Err(ScenarioError::Invalid(format!(
                "unknown method '{other}'"
            )))
        }
    };
    let int_cfg = IntegratorConfig {
        method,
        dt: cfg.dt,
        ..Default::default()
    };

    let n_dev = sys.devices.len();
    let nb = sys.net.case.n_bus;
    let sample_every = ((1e-3 / cfg.dt).round() as usize).max(1);
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let n_samples = steps / sample_every + 1;

    let mut series = TimeSeries {
        t: Vec::with_capacity(n_samples),
        device_names: sys.devices.iter().map(|d| d.name().to_string()).collect(),
        bus_names: sys.net.case.bus_names.clone(),
        omega_pu: vec![Vec::with_capacity(n_samples); n_dev],
        p: vec![Vec::with_capacity(n_samples); n_dev],
        q: vec![Vec::with_capacity(n_samples); n_dev],
        v_dc: vec![Vec::with_capacity(n_samples); n_dev],
        i_tau: vec![Vec::with_capacity(n_samples); n_dev],
        i_dc: vec![Vec::with_capacity(n_samples); n_dev],
        saturated: vec![Vec::with_capacity(n_samples); n_dev],
        vmag: vec![Vec::with_capacity(n_samples); nb],
        converter_idx: sys
            .devices
            .iter()
            .enumerate()
            .filter_map(|(k, d)| matches!(d, Device::Converter(_)).then_some(k))
            .collect(),
        off_from: vec![None; n_dev],
    };

    let mut x = x0.clone();
    let mut scratch = StepScratch::new(sys.dim());
    let mut events: Vec<(bool, &Event)> = cfg.events.iter().map(|e| (false, e)).collect();
    let mut dx_scratch = vec![0.0; sys.dim()];
    let mut diag_scratch = vec![DeviceDiag::default(); n_dev];
    let mut aborted_at = None;

    let i_max_of = |sys: &SystemModel, d: usize| match &sys.devices[d] {
        Device::Converter(c) => c.pu.i_max,
        _ => f64::NAN,
    };

    let sample = |sys: &SystemModel,
                      t: f64,
                      x: &[f64],
                      env: &crate::system::SimEnv,
                      series: &mut TimeSeries,
                      dx: &mut [f64],
                      diag: &mut [DeviceDiag]| {
        sys.derivatives(t, x, env, dx, diag);
        series.t.push(t);
        for (d, dg) in diag.iter().enumerate() {
            series.omega_pu[d].push(dg.omega_pu);
            series.p[d].push(dg.p);
            series.q[d].push(dg.q);
            series.v_dc[d].push(dg.v_dc);
            series.i_tau[d].push(dg.i_tau);
            let im = i_max_of(sys, d);
            let i_dc = if im.is_finite() {
                dg.i_tau.clamp(-im, im)
            } else {
                f64::NAN
            };
            series.i_dc[d].push(i_dc);
            series.saturated[d].push(dg.saturated);
        }
        for b in 0..nb {
            let v = sys.net.bus_voltage(x, b);
            series.vmag[b].push(v[0].hypot(v[1]));
        }
    };

    sample(&sys, 0.0, &x, &env, &mut series, &mut dx_scratch, &mut diag_scratch);

    'run: for k in 0..steps {
        let t = k as f64 * cfg.dt;
        for (fired, e) in events.iter_mut() {
            if !*fired && e.time <= t + 0.5 * cfg.dt {
                *fired = true;
                match &e.kind {
                    EventKind::LoadStep { bus, delta_p } => {
                        env.net.extra_load_g[*bus] += delta_p;
                    }
                    EventKind::MachineTrip { bus } => {
                        for (d, dev) in sys.devices.iter().enumerate() {
                            if matches!(dev, Device::Machine(_)) && dev.bus() == *bus {
                                env.device_off[d] = true;
                                series.off_from[d] = Some(series.t.len());
                            }
                        }
                        for (ti, tr) in sys.net.case.transformers.iter().enumerate() {
                            if tr.from == *bus {
                                env.net.transformer_open[ti] = true;
                            }
                        }
                    }
                }
            }
        }
        let step = crate::numerics::integrate_step(&mut x, t, &int_cfg, &mut scratch, |tt, xs, dxs| {
            sys.derivatives(tt, xs, &env, dxs, &mut diag_scratch)
        });
        if let Err(e) = step {
            return Err(ScenarioError::Integration(t, e.to_string()));
        }
        if (k + 1) % sample_every == 0 {
            let ts = (k + 1) as f64 * cfg.dt;
            if x.iter().any(|v| !v.is_finite()) {
                aborted_at = Some(ts);
                break 'run;
            }
            sample(&sys, ts, &x, &env, &mut series, &mut dx_scratch, &mut diag_scratch);
            // Blow-up guard: beyond any physical trajectory of this
            // system; stop early and classify from the history.
            if inf_norm(&x) > 1e6 {
                aborted_at = Some(ts);
                break 'run;
            }
        }
    }

    let (stability, saturation) = classify_stability(&series, &cfg.thresholds);
    let stability = if aborted_at.is_some() && stability == Stability::Stable {
        // Aborted runs are never stable; decide the flavor from the DC
        // history.
        let collapsed = series.converter_idx.iter().any(|&d| {
            series.v_dc[d]
                .iter()
                .any(|v| *v < cfg.thresholds.v_dc_collapse)
        });
        if collapsed {
            Stability::DcCollapse
        } else {
            Stability::NonSynchronized
        }
    } else {
        stability
    };

    // Metrics channel: machine frequency when a machine is connected at
    // the end, else the converter at the second generator bus.
    let metric_dev = sys
        .devices
        .iter()
        .enumerate()
        .find(|(d, dev)| matches!(dev, Device::Machine(_)) && series.off_from[*d].is_none())
        .map(|(d, _)| d)
        .or_else(|| {
            sys.devices
                .iter()
                .enumerate()
                .find(|(_, dev)| dev.bus() == 1)
                .map(|(d, _)| d)
        })
        .unwrap_or(0);
    let wb = sys.net.case.base.omega_b;
    let omega_rad: Vec<f64> = series.omega_pu[metric_dev].iter().map(|w| w * wb).collect();
    let t0 = cfg.first_event_time();
    let (nadir, rocof) = frequency_metrics(&series.t, &omega_rad, wb, t0, cfg.metrics_window);
    let delta_p = cfg.disturbance_size();
    let metrics = MetricsReport {
        nadir,
        rocof,
        window: cfg.metrics_window,
        delta_p,
        nadir_norm: delta_p.map(|dp| nadir / dp),
        rocof_norm: delta_p.map(|dp| rocof / dp),
        stability,
        saturation,
        frequency_source: series.device_names[metric_dev].clone(),
    };
    Ok(ScenarioOutcome {
        series,
        metrics,
        x0,
        init_residual,
        aborted_at,
    })
}

/// One sweep entry; failed runs carry the error text so the sweep can
/// continue.
#[derive(Debug, Serialize)]
pub struct SweepEntry {
    pub delta_p: f64,
    pub result: Result<MetricsReport, String>,
}

/// Run the scenario once per disturbance size, in parallel.
pub fn sweep_disturbances(base: &ScenarioConfig, dps: &[f64]) -> Vec<SweepEntry> {
    dps.par_iter()
        .map(|&dp| {
            let mut cfg = base.clone();
            let mut replaced = false;
            for e in &mut cfg.events {
                if let EventKind::LoadStep { delta_p, .. } = &mut e.kind {
                    *delta_p = dp;
                    replaced = true;
                    break;
                }
            }
            if !replaced {
                return SweepEntry {
                    delta_p: dp,
                    result: Err("scenario has no load-step event".into()),
                };
            }
            SweepEntry {
                delta_p: dp,
                result: run_scenario(&cfg)
                    .map(|o| o.metrics)
                    .map_err(|e| e.to_string()),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["large-disturbance", "all-gfc", "loss-of-sm", "sweep-9bus"] {
            let cfg = preset(name, "droop", None).unwrap();
            cfg.validate().unwrap();
        }
        let cfg = preset("sweep-9bus", "all-sm", None).unwrap();
        cfg.validate().unwrap();
        assert!(preset("nope", "droop", None).is_err());
        assert!(preset("large-disturbance", "nope", None).is_err());
    }

    #[test]
    fn sweep_grid_matches_published_spacing() {
        let g = sweep_grid();
        assert_eq!(g.len(), 100);
        assert!((g[0] - 0.2).abs() < 1e-12);
        assert!((g[1] - 0.207).abs() < 1e-12);
        assert!((g[99] - 0.893).abs() < 1e-12);
    }

    #[test]
    fn metrics_on_constant_signal_are_zero() {
        let t: Vec<f64> = (0..1000).map(|i| i as f64 * 1e-3).collect();
        let w = vec![100.0 * std::f64::consts::PI; 1000];
        let (nadir, rocof) =
            frequency_metrics(&t, &w, 100.0 * std::f64::consts::PI, 0.0, 0.25);
        assert_eq!(nadir, 0.0);
        assert_eq!(rocof, 0.0);
    }

    #[test]
    fn metrics_on_ramp() {
        // ω falls at 0.1 rad/s² from t0 = 0 over one second.
        let t: Vec<f64> = (0..=1000).map(|i| i as f64 * 1e-3).collect();
        let ws = 100.0 * std::f64::consts::PI;
        let w: Vec<f64> = t.iter().map(|&tv| ws - 0.1 * tv).collect();
        let (nadir, rocof) = frequency_metrics(&t, &w, ws, 0.0, 0.25);
        assert!((nadir - 0.1).abs() < 1e-9);
        assert!((rocof - 0.1).abs() < 1e-9);
    }

    #[test]
    fn metrics_on_sinusoid_peak() {
        let t: Vec<f64> = (0..=4000).map(|i| i as f64 * 1e-3).collect();
        let ws = 100.0 * std::f64::consts::PI;
        let w: Vec<f64> = t
            .iter()
            .map(|&tv| ws + 0.3 * (2.0 * std::f64::consts::PI * tv).sin())
            .collect();
        let (nadir, _) = frequency_metrics(&t, &w, ws, 0.0, 0.25);
        assert!((nadir - 0.3).abs() < 1e-4);
    }

    #[test]
    fn metric_scaling_is_linear() {
        let t: Vec<f64> = (0..=2000).map(|i| i as f64 * 1e-3).collect();
        let ws = 100.0 * std::f64::consts::PI;
        let dev: Vec<f64> = t
            .iter()
            .map(|&tv| (3.0 * tv).sin() * (-tv).exp() * 0.2)
            .collect();
        let w1: Vec<f64> = dev.iter().map(|d| ws + d).collect();
        let w3: Vec<f64> = dev.iter().map(|d| ws + 3.0 * d).collect();
        let (n1, r1) = frequency_metrics(&t, &w1, ws, 0.0, 0.25);
        let (n3, r3) = frequency_metrics(&t, &w3, ws, 0.0, 0.25);
        assert!((n3 - 3.0 * n1).abs() < 1e-12);
        assert!((r3 - 3.0 * r1).abs() < 1e-12);
    }

    #[test]
    fn interval_extraction() {
        let t: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let f = [false, true, true, false, true, true];
        let iv = intervals(&t, &f);
        assert_eq!(iv, vec![(1.0, 3.0), (4.0, 5.0)]);
    }

    #[test]
    fn classifier_threshold_cases() {
        let mk = |v_dc: Vec<f64>, omega_b: Vec<f64>| TimeSeries {
            t: (0..v_dc.len()).map(|i| i as f64 * 1e-3).collect(),
            device_names: vec!["a".into(), "b".into()],
            bus_names: vec![],
            omega_pu: vec![vec![1.0; v_dc.len()], omega_b],
            p: vec![vec![0.0; v_dc.len()]; 2],
            q: vec![vec![0.0; v_dc.len()]; 2],
            v_dc: vec![v_dc.clone(), vec![f64::NAN; v_dc.len()]],
            i_tau: vec![vec![0.0; v_dc.len()]; 2],
            i_dc: vec![vec![0.0; v_dc.len()]; 2],
            saturated: vec![vec![false; v_dc.len()]; 2],
            vmag: vec![],
            converter_idx: vec![0],
            off_from: vec![None, None],
        };
        let th = Thresholds::default();
        let n = 1000;
        // Healthy run.
        let (s, _) = classify_stability(&mk(vec![1.0; n], vec![1.0; n]), &th);
        assert_eq!(s, Stability::Stable);
        // DC voltage ramping far below the threshold.
        let ramp: Vec<f64> = (0..n).map(|i| 1.0 - 0.6 * i as f64 / n as f64).collect();
        let (s, _) = classify_stability(&mk(ramp, vec![1.0; n]), &th);
        assert_eq!(s, Stability::DcCollapse);
        // Frequencies drift apart at the end.
        let drift: Vec<f64> = (0..n).map(|i| 1.0 + 2e-3 * i as f64 / n as f64).collect();
        let (s, _) = classify_stability(&mk(vec![1.0; n], drift), &th);
        assert_eq!(s, Stability::NonSynchronized);
        // A short dip below the threshold (< hold time) is tolerated.
        let mut dip = vec![1.0; n];
        for v in dip.iter_mut().skip(500).take(5) {
            *v = 0.5;
        }
        let (s, _) = classify_stability(&mk(dip, vec![1.0; n]), &th);
        assert_eq!(s, Stability::Stable);
    }

    #[test]
    fn no_event_run_holds_equilibrium() {
        let mut cfg = preset("large-disturbance", "droop", None).unwrap();
        cfg.events.clear();
        cfg.t_end = 0.3;
        cfg.metrics_window = 0.25;
        let out = run_scenario(&cfg).unwrap();
        assert!(out.init_residual <= 1e-8);
        assert_eq!(out.metrics.stability, Stability::Stable);
        assert!(out.metrics.nadir < 1e-5, "nadir {}", out.metrics.nadir);
        assert!(out.aborted_at.is_none());
        for d in 0..out.series.device_names.len() {
            let w = out.series.omega_pu[d].last().unwrap();
            assert!((w - 1.0).abs() < 1e-7, "device {d} drifted to {w}");
        }
    }
}
