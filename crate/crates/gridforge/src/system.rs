//! Whole-system assembly: the network plus a set of devices mapped
//! onto one flat state vector, with steady-state initialization.
//!
//! Initialization runs a phasor power flow, back-solves every device
//! from its terminal phasor, then polishes the assembled state with a
//! Newton iteration on the rotating-frame residual: at the synchronous
//! steady state every αβ pair rotates at ω_b, every angle advances at
//! ω_b, and every scalar state is constant.

use crate::controllers::{self, DcControlParams, Gfc, InnerLoopGains};
use crate::converter::{self, ConverterParams, ConverterPu};
use crate::machine::{self, SmCircuit, SmParams, SmSetpoints};
use crate::network::{
    instantaneous_power, Complex, NetworkCase, NetworkEnv, NetworkModel,
};
use crate::numerics::{self, StateKind, StateLayout};
use crate::powerflow::{solve_power_flow, PowerFlowError, PowerFlowSpec};
use thiserror::Error;

/// Generation role in the phasor power flow.
#[derive(Debug, Clone, Copy)]
pub enum Role {
    /// Slack device: fixed voltage magnitude, absorbs network losses.
    Slack { vmag: f64 },
    /// Fixed active-power dispatch with regulated voltage magnitude.
    Pv { p: f64, vmag: f64 },
}

#[derive(Debug, Clone)]
pub enum DeviceKind {
    Machine(Box<SmParams>),
    Converter(Box<ConverterParams>, Gfc),
    /// Series R-L branch to an ideal sinusoidal source; test fixture
    /// with a rigidly fixed frequency.
    StiffSource { r: f64, l: f64 },
}

#[derive(Debug, Clone)]
pub struct DeviceSpec {
    pub name: String,
    pub bus: usize,
    pub kind: DeviceKind,
    pub role: Role,
}

#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub case: NetworkCase,
    pub devices: Vec<DeviceSpec>,
}

/// Converter setpoints resolved during initialization.
#[derive(Debug, Clone, Copy, Default)]
pub struct GfcSetpoints {
    pub p_star: f64,
    pub q_star: f64,
    pub v_star: f64,
}

/// Per-device diagnostic sample produced alongside each derivative
/// evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DeviceDiag {
    /// Device frequency in pu (rotor speed or control frequency).
    pub omega_pu: f64,
    /// Active power injected at the device bus.
    pub p: f64,
    /// Reactive power injected at the device bus.
    pub q: f64,
    /// DC-link voltage in pu; NaN for non-converter devices.
    pub v_dc: f64,
    /// DC source lag state in pu; NaN for non-converter devices.
    pub i_tau: f64,
    /// DC source currently clipped at its limit.
    pub saturated: bool,
}

impl Default for DeviceDiag {
    fn default() -> Self {
        Self {
            omega_pu: 1.0,
            p: 0.0,
            q: 0.0,
            v_dc: f64::NAN,
            i_tau: f64::NAN,
            saturated: false,
        }
    }
}

/// Offsets of the converter states within its device slice.
mod gfc_state {
    pub const V_DC: usize = 0;
    pub const I_TAU: usize = 1;
    pub const I_S: usize = 2;
    pub const V_F: usize = 4;
    pub const I_LV: usize = 6;
    pub const PSI_M: usize = 8;
    pub const X_V: usize = 10;
    pub const X_I: usize = 12;
    pub const CTRL: usize = 14;
}

#[derive(Debug, Clone)]
pub struct MachineDevice {
    pub name: String,
    pub bus: usize,
    pub params: SmParams,
    pub circ: SmCircuit,
    pub set: SmSetpoints,
    pub offset: usize,
}

#[derive(Debug, Clone)]
pub struct ConverterDevice {
    pub name: String,
    pub bus: usize,
    pub params: ConverterParams,
    pub pu: ConverterPu,
    pub gfc: Gfc,
    pub inner: InnerLoopGains,
    pub dc: DcControlParams,
    pub set: GfcSetpoints,
    pub offset: usize,
}

#[derive(Debug, Clone)]
pub struct StiffSourceDevice {
    pub name: String,
    pub bus: usize,
    pub r: f64,
    pub l: f64,
    /// Source phasor at t = 0 (αβ components).
    pub e: [f64; 2],
    pub offset: usize,
}

#[derive(Debug, Clone)]
pub enum Device {
    Machine(MachineDevice),
    Converter(ConverterDevice),
    StiffSource(StiffSourceDevice),
}

impl Device {
    pub fn name(&self) -> &str {
        match self {
            Device::Machine(d) => &d.name,
            Device::Converter(d) => &d.name,
            Device::StiffSource(d) => &d.name,
        }
    }

    pub fn bus(&self) -> usize {
        match self {
            Device::Machine(d) => d.bus,
            Device::Converter(d) => d.bus,
            Device::StiffSource(d) => d.bus,
        }
    }

    pub fn offset(&self) -> usize {
        match self {
            Device::Machine(d) => d.offset,
            Device::Converter(d) => d.offset,
            Device::StiffSource(d) => d.offset,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Device::Machine(_) => machine::state::DIM,
            Device::Converter(d) => gfc_state::CTRL + d.gfc.state_dim(),
            Device::StiffSource(_) => 2,
        }
    }
}

/// Runtime conditions: network events plus disabled (tripped) devices.
#[derive(Debug, Clone)]
pub struct SimEnv {
    pub net: NetworkEnv,
    pub device_off: Vec<bool>,
}

#[derive(Debug, Error)]
pub enum InitError {
    #[error("power flow failed: {0}")]
    PowerFlow(#[from] PowerFlowError),
    #[error("equilibrium polish failed: {0}")]
    Polish(#[from] numerics::NonConvergence),
    #[error("initialization produced DC source demand {0:.3} pu beyond the limit")]
    SaturatedAtRest(f64),
    #[error("invalid system: {0}")]
    Invalid(String),
}

pub struct SystemModel {
    pub net: NetworkModel,
    pub devices: Vec<Device>,
    pub layout: StateLayout,
    /// Power-flow roles in device order.
    pub roles: Vec<Role>,
}

impl SystemModel {
    pub fn build(spec: SystemSpec) -> Result<Self, InitError> {
        spec.case.validate().map_err(InitError::Invalid)?;
        let mut layout = StateLayout::new();
        let net = NetworkModel::new(spec.case, &mut layout);
        let mut devices = Vec::new();
        let mut roles = Vec::new();
        for d in spec.devices {
            if d.bus >= net.case.n_bus {
                return Err(InitError::Invalid(format!(
                    "device {} bus {} out of range",
                    d.name, d.bus
                )));
            }
            let offset = layout.total_dim();
            let dev = match d.kind {
                DeviceKind::Machine(params) => {
                    for (k, name) in machine::STATE_NAMES.iter().enumerate() {
                        let kind = if k == machine::state::DELTA {
                            StateKind::Angle
                        } else {
                            StateKind::Scalar
                        };
                        layout.push(&d.name, name, kind);
                    }
                    let circ = params.electrical.circuit(params.omega_b);
                    Device::Machine(MachineDevice {
                        name: d.name,
                        bus: d.bus,
                        params: *params,
                        circ,
                        set: SmSetpoints {
                            p_star: 0.0,
                            v_ref: 1.0,
                        },
                        offset,
                    })
                }
                DeviceKind::Converter(params, gfc) => {
                    let pu = params.to_pu(&net.case.base);
                    layout.push(&d.name, "v_dc", StateKind::Scalar);
                    layout.push(&d.name, "i_tau", StateKind::Scalar);
                    layout.push_pair(&d.name, "i_s");
                    layout.push_pair(&d.name, "v_f");
                    layout.push_pair(&d.name, "i_lv");
                    layout.push_pair(&d.name, "psi_m");
                    for s in ["x_v_d", "x_v_q", "x_i_d", "x_i_q"] {
                        layout.push(&d.name, s, StateKind::Scalar);
                    }
                    match &gfc {
                        Gfc::Droop(_) | Gfc::Matching(_) => {
                            layout.push(&d.name, "theta", StateKind::Angle);
                            layout.push(&d.name, "xi_v", StateKind::Scalar);
                        }
                        Gfc::Vsm(_) => {
                            layout.push(&d.name, "theta", StateKind::Angle);
                            layout.push(&d.name, "omega", StateKind::Scalar);
                            layout.push(&d.name, "xi_v", StateKind::Scalar);
                        }
                        Gfc::Dvoc(_) => {
                            layout.push_pair(&d.name, "v_hat");
                        }
                    }
                    Device::Converter(ConverterDevice {
                        name: d.name,
                        bus: d.bus,
                        params: *params,
                        pu,
                        gfc,
                        inner: InnerLoopGains::default(),
                        dc: DcControlParams::default(),
                        set: GfcSetpoints::default(),
                        offset,
                    })
                }
                DeviceKind::StiffSource { r, l } => {
                    layout.push_pair(&d.name, "i");
                    Device::StiffSource(StiffSourceDevice {
                        name: d.name,
                        bus: d.bus,
                        r,
                        l,
                        e: [1.0, 0.0],
                        offset,
                    })
                }
            };
            devices.push(dev);
            roles.push(d.role);
        }
        layout.validate().map_err(InitError::Invalid)?;
        Ok(Self {
            net,
            devices,
            layout,
            roles,
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn env(&self) -> SimEnv {
        SimEnv {
            net: NetworkEnv::new(&self.net.case),
            device_off: vec![false; self.devices.len()],
        }
    }

    /// Full derivative evaluation; `diag` receives one sample per
    /// device (pass a slice of `devices.len()`).
    pub fn derivatives(
        &self,
        t: f64,
        x: &[f64],
        env: &SimEnv,
        dx: &mut [f64],
        diag: &mut [DeviceDiag],
    ) {
        let mut inj = [[0.0f64; 2]; 32];
        let nb = self.net.case.n_bus;
        for (k, dev) in self.devices.iter().enumerate() {
            let bus = dev.bus();
            let v_bus = self.net.bus_voltage(x, bus);
            let off = dev.offset();
            let dim = dev.dim();
            if env.device_off[k] {
                dx[off..off + dim].fill(0.0);
                diag[k] = DeviceDiag {
                    p: 0.0,
                    q: 0.0,
                    ..diag[k]
                };
                continue;
            }
            let i = match dev {
                Device::Machine(m) => {
                    let s = &x[off..off + dim];
                    let ds = &mut dx[off..off + dim];
                    let i = machine::sm_derivatives(s, v_bus, &m.params, &m.circ, &m.set, ds);
                    let (p, q) = instantaneous_power(v_bus, i);
                    diag[k] = DeviceDiag {
                        omega_pu: s[machine::state::OMEGA],
                        p,
                        q,
                        ..Default::default()
                    };
                    i
                }
                Device::Converter(c) => {
                    let (i, d) = gfc_derivatives(c, x, v_bus, dx);
                    diag[k] = d;
                    i
                }
                Device::StiffSource(src) => {
                    let s = &x[off..off + 2];
                    let i = [s[0], s[1]];
                    let wb = self.net.case.base.omega_b;
                    let (sn, cs) = (wb * t).sin_cos();
                    let e = [src.e[0] * cs - src.e[1] * sn, src.e[0] * sn + src.e[1] * cs];
                    let kk = wb / src.l;
                    dx[off] = kk * (e[0] - v_bus[0] - src.r * i[0]);
                    dx[off + 1] = kk * (e[1] - v_bus[1] - src.r * i[1]);
                    let (p, q) = instantaneous_power(v_bus, i);
                    diag[k] = DeviceDiag {
                        omega_pu: 1.0,
                        p,
                        q,
                        ..Default::default()
                    };
                    i
                }
            };
            inj[bus][0] += i[0];
            inj[bus][1] += i[1];
        }
        self.net.derivatives(x, &inj[..nb], &env.net, dx);
    }

    /// Residual that vanishes at the rotating synchronous steady state:
    /// f(x) minus the steady motion implied by each state's kind.
    pub fn rotating_residual(&self, x: &[f64], env: &SimEnv, r: &mut [f64]) {
        let wb = self.net.case.base.omega_b;
        let mut diag = vec![DeviceDiag::default(); self.devices.len()];
        self.derivatives(0.0, x, env, r, &mut diag);
        for (i, kind) in self.layout.kinds().iter().enumerate() {
            match kind {
                StateKind::Scalar => {}
                StateKind::AlphaOfPair => r[i] += wb * x[i + 1],
                StateKind::BetaOfPair => r[i] -= wb * x[i - 1],
                StateKind::Angle => r[i] -= wb,
            }
        }
    }

    /// Steady-state initialization: power flow, per-device back-solve,
    /// Newton polish of the rotating residual to `tol`.
    pub fn initialize(&mut self, tol: f64) -> Result<Vec<f64>, InitError> {
        let mut slack = None;
        let mut pv = Vec::new();
        for (k, role) in self.roles.iter().enumerate() {
            let bus = self.devices[k].bus();
            match role {
                Role::Slack { vmag } => slack = Some((bus, *vmag)),
                Role::Pv { p, vmag } => pv.push((bus, *p, *vmag)),
            }
        }
        let (slack_bus, slack_vmag) =
            slack.ok_or_else(|| InitError::Invalid("no slack device".into()))?;
        let spec = PowerFlowSpec {
            slack_bus,
            slack_vmag,
            pv,
        };
        let sol = solve_power_flow(&self.net.case, &spec)?;

        let mut x = vec![0.0; self.dim()];
        // Network states from the phasor solution.
        for (b, &vi) in self.net.idx.bus_v.iter().enumerate() {
            x[vi] = sol.v[b].re;
            x[vi + 1] = sol.v[b].im;
        }
        for (k, line) in self.net.case.lines.iter().enumerate() {
            let i = (sol.v[line.from] - sol.v[line.to]) / Complex::new(line.r, line.l);
            let ii = self.net.idx.line_i[k];
            x[ii] = i.re;
            x[ii + 1] = i.im;
        }
        for (k, t) in self.net.case.transformers.iter().enumerate() {
            let st = t.params.to_system(&self.net.case.base);
            let i = (sol.v[t.from] - sol.v[t.to]) / Complex::new(st.r_series, st.l_series);
            let ii = self.net.idx.tfm_i[k];
            x[ii] = i.re;
            x[ii + 1] = i.im;
            // ψ phasor = V/j for ψ̇ = ω_b·v rotating at ω_b.
            let psi = sol.v[t.from] / Complex::new(0.0, 1.0);
            let pi = self.net.idx.tfm_psi[k];
            x[pi] = psi.re;
            x[pi + 1] = psi.im;
        }

        // Device back-solves from the terminal phasors.
        for dev in &mut self.devices {
            let bus = dev.bus();
            let v_t = sol.v[bus];
            let s_inj = sol.v[bus] * sol.i_inj[bus].conj();
            match dev {
                Device::Machine(m) => {
                    let (xs, set) = machine::init_from_phasor(v_t, s_inj, &m.params, &m.circ);
                    m.set = set;
                    x[m.offset..m.offset + machine::state::DIM].copy_from_slice(&xs);
                }
                Device::Converter(c) => {
                    let (xs, set) = init_converter(c, v_t, s_inj)?;
                    c.set = set;
                    x[c.offset..c.offset + xs.len()].copy_from_slice(&xs);
                }
                Device::StiffSource(src) => {
                    let i = (s_inj / v_t).conj();
                    let e = v_t + Complex::new(src.r, src.l) * i;
                    src.e = [e.re, e.im];
                    x[src.offset] = i.re;
                    x[src.offset + 1] = i.im;
                }
            }
        }

        // Newton polish of the rotating residual.
        let env = self.env();
        let mut r = vec![0.0; self.dim()];
        self.rotating_residual(&x, &env, &mut r);
        if numerics::inf_norm(&r) > tol {
            x = numerics::solve_equilibrium(
                |u, out| self.rotating_residual(u, &env, out),
                &x,
                tol,
                30,
            )?;
        }
        Ok(x)
    }

    /// Diagnostics without advancing the state.
    pub fn diagnostics(&self, t: f64, x: &[f64], env: &SimEnv) -> Vec<DeviceDiag> {
        let mut dx = vec![0.0; self.dim()];
        let mut diag = vec![DeviceDiag::default(); self.devices.len()];
        self.derivatives(t, x, env, &mut dx, &mut diag);
        diag
    }
}

/// Converter derivative evaluation; returns the bus injection current
/// and a diagnostic sample.
fn gfc_derivatives(
    c: &ConverterDevice,
    x: &[f64],
    v_bus: [f64; 2],
    dx: &mut [f64],
) -> ([f64; 2], DeviceDiag) {
    use gfc_state::*;
    let off = c.offset;
    let dim = CTRL + c.gfc.state_dim();
    let s = &x[off..off + dim];
    let wb = c.pu.omega_b;

    let v_dc = s[V_DC];
    let i_s = [s[I_S], s[I_S + 1]];
    let v_f = [s[V_F], s[V_F + 1]];
    let i_lv = [s[I_LV], s[I_LV + 1]];
    let psi = [s[PSI_M], s[PSI_M + 1]];
    let (p, _) = instantaneous_power(v_f, i_lv);
    let v_mag = v_f[0].hypot(v_f[1]);

    // Reference model: angle, frequency and dq voltage reference.
    let mut ctrl_d = [0.0f64; 3];
    let (theta, omega_pu, v_hat_dq) = match &c.gfc {
        Gfc::Droop(par) => {
            let th = s[CTRL];
            let (w, v_d, d_xi) =
                controllers::droop_reference(p, v_mag, s[CTRL + 1], c.set.p_star, c.set.v_star, par);
            ctrl_d[0] = w * wb;
            ctrl_d[1] = d_xi;
            (th, w, [v_d, 0.0])
        }
        Gfc::Vsm(par) => {
            let th = s[CTRL];
            let (w, d_w, v_d, d_xi) = controllers::vsm_reference(
                p,
                v_mag,
                s[CTRL + 1],
                s[CTRL + 2],
                c.set.p_star,
                c.set.v_star,
                par,
            );
            ctrl_d[0] = w * wb;
            ctrl_d[1] = d_w;
            ctrl_d[2] = d_xi;
            (th, w, [v_d, 0.0])
        }
        Gfc::Matching(par) => {
            let th = s[CTRL];
            let (w, mu, d_xi) =
                controllers::matching_reference(v_dc, v_mag, s[CTRL + 1], c.set.v_star, par);
            ctrl_d[0] = w * wb;
            ctrl_d[1] = d_xi;
            (th, w, [mu, 0.0])
        }
        Gfc::Dvoc(par) => {
            let v_hat = [s[CTRL], s[CTRL + 1]];
            let d = controllers::dvoc_reference(
                v_hat,
                i_lv,
                c.set.p_star,
                c.set.q_star,
                c.set.v_star,
                wb,
                par,
            );
            ctrl_d[0] = d[0];
            ctrl_d[1] = d[1];
            let th = v_hat[1].atan2(v_hat[0]);
            let w = controllers::dvoc_frequency(v_hat, d) / wb;
            (th, w, [v_hat[0].hypot(v_hat[1]), 0.0])
        }
    };

    // Cascaded dq loops.
    let v_dq = controllers::rotate_inv(theta, v_f);
    let i_lv_dq = controllers::rotate_inv(theta, i_lv);
    let i_s_dq = controllers::rotate_inv(theta, i_s);
    let x_v = [s[X_V], s[X_V + 1]];
    let x_i = [s[X_I], s[X_I + 1]];
    let (i_s_star, v_err) =
        controllers::voltage_loop(v_hat_dq, v_dq, i_lv_dq, omega_pu, x_v, c.pu.b_f, &c.inner);
    let (v_s_star, i_err) = controllers::current_loop(
        i_s_star, i_s_dq, v_dq, omega_pu, x_i, c.pu.r_f, c.pu.x_f, &c.inner,
    );
    let m = controllers::modulation(v_s_star, theta);

    // DC side.
    let i_x = m[0] * i_s[0] + m[1] * i_s[1];
    let i_dc_star =
        controllers::dc_voltage_control(v_dc, i_x, p, c.set.p_star, c.pu.g_dc, &c.dc);
    let (i_dc, d_i_tau) = converter::dc_source(i_dc_star, s[I_TAU], c.pu.tau_dc, c.pu.i_max);

    let phys = converter::converter_physical(v_dc, i_s, v_f, m, i_lv, i_dc, &c.pu);

    let ds = &mut dx[off..off + dim];
    ds[V_DC] = phys.d_v_dc;
    ds[I_TAU] = d_i_tau;
    ds[I_S] = phys.d_i_s[0];
    ds[I_S + 1] = phys.d_i_s[1];
    ds[V_F] = phys.d_v_f[0];
    ds[V_F + 1] = phys.d_v_f[1];
    // LV/MV series branch from the filter node to the bus.
    let kk = wb / c.pu.lvmv.l_series;
    ds[I_LV] = kk * (v_f[0] - v_bus[0] - c.pu.lvmv.r_series * i_lv[0]);
    ds[I_LV + 1] = kk * (v_f[1] - v_bus[1] - c.pu.lvmv.r_series * i_lv[1]);
    // Magnetizing branch on the bus side.
    ds[PSI_M] = wb * v_bus[0];
    ds[PSI_M + 1] = wb * v_bus[1];
    ds[X_V] = v_err[0];
    ds[X_V + 1] = v_err[1];
    ds[X_I] = i_err[0];
    ds[X_I + 1] = i_err[1];
    ds[CTRL..dim].copy_from_slice(&ctrl_d[..dim - CTRL]);

    let inj = [
        i_lv[0] - psi[0] / c.pu.lvmv.l_mag - v_bus[0] / c.pu.lvmv.r_mag,
        i_lv[1] - psi[1] / c.pu.lvmv.l_mag - v_bus[1] / c.pu.lvmv.r_mag,
    ];
    let (p_bus, q_bus) = instantaneous_power(v_bus, inj);
    let diag = DeviceDiag {
        omega_pu,
        p: p_bus,
        q: q_bus,
        v_dc,
        i_tau: s[I_TAU],
        saturated: s[I_TAU].abs() >= c.pu.i_max,
    };
    (inj, diag)
}

/// Back-solve the converter states from the bus phasor and injected
/// power, walking inward through the transformer and filter.
fn init_converter(
    c: &ConverterDevice,
    v_bus: Complex,
    s_inj: Complex,
) -> Result<(Vec<f64>, GfcSetpoints), InitError> {
    use gfc_state::*;
    let j = Complex::new(0.0, 1.0);
    let pu = &c.pu;
    let i_inj = (s_inj / v_bus).conj();
    let y_mag = Complex::new(1.0 / pu.lvmv.r_mag, 0.0) + Complex::new(1.0, 0.0) / (j * pu.lvmv.l_mag);
    let i_lv = i_inj + v_bus * y_mag;
    let v_f = v_bus + Complex::new(pu.lvmv.r_series, pu.lvmv.l_series) * i_lv;
    let i_s = i_lv + j * pu.b_f * v_f;
    let v_s = v_f + Complex::new(pu.r_f, pu.x_f) * i_s;
    // v_dc = 1 pu, so the pu modulation phasor equals v_s.
    let i_x = (v_s * i_s.conj()).re;
    let i_tau = pu.g_dc + i_x;
    if i_tau.abs() >= pu.i_max {
        return Err(InitError::SaturatedAtRest(i_tau));
    }
    let sp = v_f * i_lv.conj();
    let set = GfcSetpoints {
        p_star: sp.re,
        q_star: sp.im,
        v_star: v_f.norm(),
    };
    let dim = CTRL + c.gfc.state_dim();
    let mut xs = vec![0.0; dim];
    xs[V_DC] = 1.0;
    xs[I_TAU] = i_tau;
    xs[I_S] = i_s.re;
    xs[I_S + 1] = i_s.im;
    xs[V_F] = v_f.re;
    xs[V_F + 1] = v_f.im;
    xs[I_LV] = i_lv.re;
    xs[I_LV + 1] = i_lv.im;
    let psi = v_bus / j;
    xs[PSI_M] = psi.re;
    xs[PSI_M + 1] = psi.im;
    // Loop integrators hold the reference magnitude with zero error.
    match &c.gfc {
        Gfc::Droop(par) => {
            xs[CTRL] = v_f.arg();
            xs[CTRL + 1] = set.v_star / par.voltage.k_i;
        }
        Gfc::Vsm(par) => {
            xs[CTRL] = v_f.arg();
            xs[CTRL + 1] = 1.0;
            xs[CTRL + 2] = set.v_star / par.voltage.k_i;
        }
        Gfc::Matching(par) => {
            xs[CTRL] = v_f.arg();
            xs[CTRL + 1] = set.v_star / par.voltage.k_i;
        }
        Gfc::Dvoc(_) => {
            xs[CTRL] = v_f.re;
            xs[CTRL + 1] = v_f.im;
        }
    }
    Ok((xs, set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::build_nine_bus;

    fn nine_bus_spec(strategy: &str) -> SystemSpec {
        let case = build_nine_bus(2.25);
        let devices = vec![
            DeviceSpec {
                name: "sm1".into(),
                bus: 0,
                kind: DeviceKind::Machine(Box::new(SmParams::default())),
                role: Role::Slack { vmag: 1.0 },
            },
            DeviceSpec {
                name: "gfc2".into(),
                bus: 1,
                kind: DeviceKind::Converter(
                    Box::new(ConverterParams::default()),
                    Gfc::from_name(strategy).unwrap(),
                ),
                role: Role::Pv { p: 0.75, vmag: 1.0 },
            },
            DeviceSpec {
                name: "gfc3".into(),
                bus: 2,
                kind: DeviceKind::Converter(
                    Box::new(ConverterParams::default()),
                    Gfc::from_name(strategy).unwrap(),
                ),
                role: Role::Pv { p: 0.75, vmag: 1.0 },
            },
        ];
        SystemSpec { case, devices }
    }

    #[test]
    fn initialization_reaches_rotating_equilibrium() {
        for strategy in ["droop", "vsm", "matching", "dvoc"] {
            let mut sys = SystemModel::build(nine_bus_spec(strategy)).unwrap();
            let x = sys.initialize(1e-8).unwrap();
            let env = sys.env();
            let mut r = vec![0.0; sys.dim()];
            sys.rotating_residual(&x, &env, &mut r);
            assert!(
                numerics::inf_norm(&r) <= 1e-8,
                "{strategy}: residual {}",
                numerics::inf_norm(&r)
            );
        }
    }

    #[test]
    fn initialized_devices_sit_at_their_dispatch() {
        let mut sys = SystemModel::build(nine_bus_spec("droop")).unwrap();
        let x = sys.initialize(1e-8).unwrap();
        let env = sys.env();
        let diag = sys.diagnostics(0.0, &x, &env);
        // PV converters inject their dispatch at the bus.
        assert!((diag[1].p - 0.75).abs() < 1e-6, "p = {}", diag[1].p);
        assert!((diag[2].p - 0.75).abs() < 1e-6);
        // Machine covers the remaining load plus losses.
        assert!(diag[0].p > 0.7 && diag[0].p < 1.0, "slack p = {}", diag[0].p);
        for d in &diag {
            assert!((d.omega_pu - 1.0).abs() < 1e-9);
        }
        assert!((diag[1].v_dc - 1.0).abs() < 1e-9);
        assert!(!diag[1].saturated);
    }
}
