//! Electrical network dynamics in stationary αβ coordinates.
//!
//! Lines are nominal π sections with their shunt capacitance lumped at
//! the bus nodes, transformers are series R-L branches with an R-L
//! magnetizing shunt, and loads are constant admittances. Every bus
//! carries a capacitor (line charging plus a small snubber at device
//! buses), so the whole network is a linear ODE driven by the device
//! injection currents, and the bus voltage is the capacitor voltage.

use crate::numerics::StateLayout;
use serde::{Deserialize, Serialize};

pub type Complex = nalgebra::Complex<f64>;

/// Per-unit base quantities of the system.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PerUnitBase {
    /// Power base, VA.
    pub s_b: f64,
    /// Line-line RMS voltage base, volts.
    pub v_b: f64,
    /// Angular frequency base, rad/s.
    pub omega_b: f64,
}

impl PerUnitBase {
    pub fn nine_bus() -> Self {
        Self {
            s_b: 100e6,
            v_b: 230e3,
            omega_b: 2.0 * std::f64::consts::PI * 50.0,
        }
    }

    pub fn z_b(&self) -> f64 {
        self.v_b * self.v_b / self.s_b
    }

    pub fn i_b(&self) -> f64 {
        self.s_b / (3f64.sqrt() * self.v_b)
    }
}

/// π-section line; `c_half` is the shunt capacitance at each end
/// (susceptance in pu at the base frequency), lumped into the bus
/// capacitors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PiLine {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub l: f64,
    pub c_half: f64,
}

/// Two-winding transformer with magnetizing branch; impedances in pu on
/// the transformer's own rating `s_r`. Modeled as the total series
/// R-L branch plus an R‖L magnetizing shunt at the `from` bus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearTransformer {
    pub s_r: f64,
    pub v1: f64,
    pub v2: f64,
    pub r1: f64,
    pub l1: f64,
    pub r2: f64,
    pub l2: f64,
    pub rm: f64,
    pub lm: f64,
}

impl LinearTransformer {
    /// Table values for the 13.8 kV / 230 kV step-up transformer.
    pub fn mv_hv() -> Self {
        Self {
            s_r: 210e6,
            v1: 13.8e3,
            v2: 230e3,
            r1: 0.0027,
            l1: 0.08,
            r2: 0.0027,
            l2: 0.08,
            rm: 500.0,
            lm: 500.0,
        }
    }

    /// Table values for the 1 kV / 13.8 kV converter-module transformer.
    pub fn lv_mv() -> Self {
        Self {
            s_r: 1.6e6,
            v1: 1.0e3,
            v2: 13.8e3,
            r1: 0.0073,
            l1: 0.018,
            r2: 0.0073,
            l2: 0.018,
            rm: 347.0,
            lm: 156.0,
        }
    }

    /// Rescale the rating (impedances stay in pu on the new rating).
    pub fn with_rating(mut self, s_r: f64) -> Self {
        self.s_r = s_r;
        self
    }

    /// Impedance conversion factor to the system base.
    pub fn to_system(&self, base: &PerUnitBase) -> ScaledTransformer {
        let k = base.s_b / self.s_r;
        ScaledTransformer {
            r_series: (self.r1 + self.r2) * k,
            l_series: (self.l1 + self.l2) * k,
            r_mag: self.rm * k,
            l_mag: self.lm * k,
        }
    }
}

/// Transformer impedances converted to the system base.
#[derive(Debug, Clone, Copy)]
pub struct ScaledTransformer {
    pub r_series: f64,
    pub l_series: f64,
    pub r_mag: f64,
    pub l_mag: f64,
}

/// Transformer placed between two buses of the case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformerBranch {
    pub from: usize,
    pub to: usize,
    pub params: LinearTransformer,
}

/// Constant-impedance load; admittance fixed at construction from the
/// nominal power drawn at 1 pu voltage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstantImpedanceLoad {
    pub bus: usize,
    pub p_nom: f64,
    pub q_nom: f64,
}

impl ConstantImpedanceLoad {
    pub fn g(&self) -> f64 {
        self.p_nom
    }

    /// Imaginary part of the load admittance (negative for inductive).
    pub fn b(&self) -> f64 {
        -self.q_nom
    }
}

/// Static description of the electrical network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkCase {
    pub n_bus: usize,
    pub bus_names: Vec<String>,
    /// Per-bus voltage base, volts line-line RMS.
    pub bus_v_base: Vec<f64>,
    pub lines: Vec<PiLine>,
    pub transformers: Vec<TransformerBranch>,
    pub loads: Vec<ConstantImpedanceLoad>,
    /// Additional shunt susceptance per bus (snubber at device buses).
    pub snubber_b: Vec<f64>,
    pub base: PerUnitBase,
}

impl NetworkCase {
    pub fn validate(&self) -> Result<(), String> {
        for l in &self.lines {
            if l.from >= self.n_bus || l.to >= self.n_bus {
                return Err("line endpoint out of range".into());
            }
            if !(l.l > 0.0) || l.r < 0.0 || l.c_half < 0.0 {
                return Err("invalid line parameters".into());
            }
        }
        for t in &self.transformers {
            if t.from >= self.n_bus || t.to >= self.n_bus {
                return Err("transformer endpoint out of range".into());
            }
        }
        for ld in &self.loads {
            if ld.bus >= self.n_bus {
                return Err("load bus out of range".into());
            }
        }
        // Connectivity over lines + transformers.
        let mut seen = vec![false; self.n_bus];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(b) = stack.pop() {
            for l in &self.lines {
                for (u, v) in [(l.from, l.to), (l.to, l.from)] {
                    if u == b && !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            for t in &self.transformers {
                for (u, v) in [(t.from, t.to), (t.to, t.from)] {
                    if u == b && !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err("network graph is not connected".into());
        }
        Ok(())
    }

    /// Total shunt susceptance at each bus (line charging + snubber).
    pub fn bus_capacitance(&self) -> Vec<f64> {
        let mut c = self.snubber_b.clone();
        for l in &self.lines {
            c[l.from] += l.c_half;
            c[l.to] += l.c_half;
        }
        c
    }
}

/// The standard 9-bus topology: generation at buses 1-3 behind
/// step-up transformers, a six-bus 230 kV ring, loads at buses 5, 7
/// and 9. Line impedances follow the canonical published case data;
/// transformers use the catalog MV/HV values.
pub fn build_nine_bus(base_load_pu: f64) -> NetworkCase {
    let base = PerUnitBase::nine_bus();
    let lines = vec![
        // (from, to, r, x, b_total) on 100 MVA / 230 kV
        (3, 4, 0.0100, 0.0850, 0.176),
        (3, 8, 0.0170, 0.0920, 0.158),
        (4, 5, 0.0320, 0.1610, 0.306),
        (5, 6, 0.0085, 0.0720, 0.149),
        (6, 7, 0.0119, 0.1008, 0.209),
        (7, 8, 0.0390, 0.1700, 0.358),
    ]
    .into_iter()
    .map(|(from, to, r, l, b)| PiLine {
        from,
        to,
        r,
        l,
        c_half: b / 2.0,
    })
    .collect();
    let transformers = (0..3)
        .map(|g| TransformerBranch {
            from: g,
            to: 3 + 2 * g,
            params: LinearTransformer::mv_hv(),
        })
        .collect();
    let per_load = base_load_pu / 3.0;
    let loads = [4, 6, 8]
        .iter()
        .map(|&bus| ConstantImpedanceLoad {
            bus,
            p_nom: per_load,
            // Canonical-case aggregate power factor (Q/P = 1.15/3.15);
            // the inductive draw absorbs the line-charging surplus so
            // load buses sit near 1 pu.
            q_nom: per_load * (1.15 / 3.15),
        })
        .collect();
    let mut snubber_b = vec![0.0; 9];
    for b in snubber_b.iter_mut().take(3) {
        *b = 0.01;
    }
    let bus_v_base = (0..9)
        .map(|b| if b < 3 { 13.8e3 } else { 230e3 })
        .collect();
    NetworkCase {
        n_bus: 9,
        bus_names: (1..=9).map(|i| format!("bus{i}")).collect(),
        bus_v_base,
        lines,
        transformers,
        loads,
        snubber_b,
        base,
    }
}

/// Instantaneous active/reactive power of amplitude-invariant αβ
/// quantities in per-unit (the 3/2 factor is absorbed by the base).
pub fn instantaneous_power(v: [f64; 2], i: [f64; 2]) -> (f64, f64) {
    let p = v[0] * i[0] + v[1] * i[1];
    let q = v[1] * i[0] - v[0] * i[1];
    (p, q)
}

/// Runtime-varying network conditions (events).
#[derive(Debug, Clone)]
pub struct NetworkEnv {
    /// Additional shunt conductance per bus (load steps).
    pub extra_load_g: Vec<f64>,
    /// Opened transformer branches (machine trip).
    pub transformer_open: Vec<bool>,
}

impl NetworkEnv {
    pub fn new(case: &NetworkCase) -> Self {
        Self {
            extra_load_g: vec![0.0; case.n_bus],
            transformer_open: vec![false; case.transformers.len()],
        }
    }
}

/// State indices of the network block within the global layout.
#[derive(Debug, Clone)]
pub struct NetworkIndices {
    pub bus_v: Vec<usize>,
    pub line_i: Vec<usize>,
    pub tfm_i: Vec<usize>,
    pub tfm_psi: Vec<usize>,
}

/// Network model bound to a global state layout.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    pub case: NetworkCase,
    pub idx: NetworkIndices,
    bus_c: Vec<f64>,
    tfm_sys: Vec<ScaledTransformer>,
}

impl NetworkModel {
    pub fn new(case: NetworkCase, layout: &mut StateLayout) -> Self {
        let bus_v = (0..case.n_bus)
            .map(|b| layout.push_pair(&case.bus_names[b], "v"))
            .collect();
        let line_i = (0..case.lines.len())
            .map(|k| layout.push_pair(&format!("line{k}"), "i"))
            .collect();
        let mut tfm_i = Vec::new();
        let mut tfm_psi = Vec::new();
        for k in 0..case.transformers.len() {
            tfm_i.push(layout.push_pair(&format!("tfm{k}"), "i"));
            tfm_psi.push(layout.push_pair(&format!("tfm{k}"), "psi_m"));
        }
        let bus_c = case.bus_capacitance();
        let tfm_sys = case
            .transformers
            .iter()
            .map(|t| t.params.to_system(&case.base))
            .collect();
        Self {
            case,
            idx: NetworkIndices {
                bus_v,
                line_i,
                tfm_i,
                tfm_psi,
            },
            bus_c,
            tfm_sys,
        }
    }

    pub fn bus_voltage(&self, x: &[f64], bus: usize) -> [f64; 2] {
        let i = self.idx.bus_v[bus];
        [x[i], x[i + 1]]
    }

    /// Write the network-state derivatives given the device injection
    /// currents per bus. KCL at each bus: the capacitor absorbs the sum
    /// of branch, load, magnetizing and device currents.
    pub fn derivatives(
        &self,
        x: &[f64],
        injections: &[[f64; 2]],
        env: &NetworkEnv,
        dx: &mut [f64],
    ) {
        let wb = self.case.base.omega_b;
        let nb = self.case.n_bus;
        // Net current into each bus node (starts with device injections).
        let mut inet = [[0.0f64; 2]; 32];
        let inet = &mut inet[..nb];
        for (b, inj) in injections.iter().enumerate() {
            inet[b] = *inj;
        }
        for (k, line) in self.case.lines.iter().enumerate() {
            let ii = self.idx.line_i[k];
            let i = [x[ii], x[ii + 1]];
            let vf = self.bus_voltage(x, line.from);
            let vt = self.bus_voltage(x, line.to);
            let kk = wb / line.l;
            dx[ii] = kk * (vf[0] - vt[0] - line.r * i[0]);
            dx[ii + 1] = kk * (vf[1] - vt[1] - line.r * i[1]);
            inet[line.from][0] -= i[0];
            inet[line.from][1] -= i[1];
            inet[line.to][0] += i[0];
            inet[line.to][1] += i[1];
        }
        for (k, t) in self.case.transformers.iter().enumerate() {
            let st = &self.tfm_sys[k];
            let ii = self.idx.tfm_i[k];
            let pi = self.idx.tfm_psi[k];
            if env.transformer_open[k] {
                dx[ii] = 0.0;
                dx[ii + 1] = 0.0;
                dx[pi] = 0.0;
                dx[pi + 1] = 0.0;
                continue;
            }
            let i = [x[ii], x[ii + 1]];
            let vf = self.bus_voltage(x, t.from);
            let vt = self.bus_voltage(x, t.to);
            let kk = wb / st.l_series;
            dx[ii] = kk * (vf[0] - vt[0] - st.r_series * i[0]);
            dx[ii + 1] = kk * (vf[1] - vt[1] - st.r_series * i[1]);
            inet[t.from][0] -= i[0];
            inet[t.from][1] -= i[1];
            inet[t.to][0] += i[0];
            inet[t.to][1] += i[1];
            // Magnetizing branch (L with parallel core-loss R) at `from`.
            dx[pi] = wb * vf[0];
            dx[pi + 1] = wb * vf[1];
            let im = [x[pi] / st.l_mag, x[pi + 1] / st.l_mag];
            inet[t.from][0] -= im[0] + vf[0] / st.r_mag;
            inet[t.from][1] -= im[1] + vf[1] / st.r_mag;
        }
        for ld in &self.case.loads {
            let v = self.bus_voltage(x, ld.bus);
            let g = ld.g() + env.extra_load_g[ld.bus];
            let b = ld.b();
            inet[ld.bus][0] -= g * v[0] - b * v[1];
            inet[ld.bus][1] -= g * v[1] + b * v[0];
        }
        for b in 0..nb {
            // Load steps may target a bus without a base load.
            if self.case.loads.iter().all(|l| l.bus != b) && env.extra_load_g[b] != 0.0 {
                let v = self.bus_voltage(x, b);
                inet[b][0] -= env.extra_load_g[b] * v[0];
                inet[b][1] -= env.extra_load_g[b] * v[1];
            }
            let vi = self.idx.bus_v[b];
            let kk = wb / self.bus_c[b];
            dx[vi] = kk * inet[b][0];
            dx[vi + 1] = kk * inet[b][1];
        }
    }

    /// Total stored inductive/capacitive energy (pu-seconds) of the
    /// network block; used by the energy-balance tests.
    pub fn stored_energy(&self, x: &[f64]) -> f64 {
        let wb = self.case.base.omega_b;
        let mut e = 0.0;
        for (b, &vi) in self.idx.bus_v.iter().enumerate() {
            let c = self.bus_c[b] / wb;
            e += 0.5 * c * (x[vi] * x[vi] + x[vi + 1] * x[vi + 1]);
        }
        for (k, line) in self.case.lines.iter().enumerate() {
            let ii = self.idx.line_i[k];
            let l = line.l / wb;
            e += 0.5 * l * (x[ii] * x[ii] + x[ii + 1] * x[ii + 1]);
        }
        for (k, st) in self.tfm_sys.iter().enumerate() {
            let ii = self.idx.tfm_i[k];
            let l = st.l_series / wb;
            e += 0.5 * l * (x[ii] * x[ii] + x[ii + 1] * x[ii + 1]);
            let pi = self.idx.tfm_psi[k];
            let im = [x[pi] / st.l_mag, x[pi + 1] / st.l_mag];
            e += 0.5 * (st.l_mag / wb) * (im[0] * im[0] + im[1] * im[1]);
        }
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::StateLayout;

    #[test]
    fn nine_bus_counts_match_the_standard_case() {
        let case = build_nine_bus(2.0);
        assert_eq!(case.n_bus, 9);
        assert_eq!(case.lines.len(), 6);
        assert_eq!(case.transformers.len(), 3);
        assert_eq!(case.loads.len(), 3);
        case.validate().unwrap();
        // Load uniformly split between buses 5, 7, 9.
        for ld in &case.loads {
            assert!((ld.p_nom - 2.0 / 3.0).abs() < 1e-12);
            assert!([4, 6, 8].contains(&ld.bus));
        }
    }

    #[test]
    fn mv_hv_transformer_matches_catalog_row() {
        let t = LinearTransformer::mv_hv();
        assert_eq!(t.s_r, 210e6);
        assert_eq!(t.r1, 0.0027);
        assert_eq!(t.l1, 0.08);
        assert_eq!(t.rm, 500.0);
        assert_eq!(t.lm, 500.0);
    }

    #[test]
    fn per_unit_base_identities() {
        let b = PerUnitBase::nine_bus();
        assert!((b.z_b() - 230e3 * 230e3 / 100e6).abs() < 1e-9);
        assert!((b.i_b() - 100e6 / (3f64.sqrt() * 230e3)).abs() < 1e-9);
    }

    #[test]
    fn unexcited_network_has_zero_derivatives() {
        let case = build_nine_bus(2.0);
        let mut layout = StateLayout::new();
        let net = NetworkModel::new(case, &mut layout);
        let n = layout.total_dim();
        let x = vec![0.0; n];
        let mut dx = vec![0.0; n];
        let env = NetworkEnv::new(&net.case);
        net.derivatives(&x, &[[0.0; 2]; 9], &env, &mut dx);
        assert!(dx.iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn load_draws_nominal_power_at_one_pu() {
        let ld = ConstantImpedanceLoad {
            bus: 0,
            p_nom: 0.7,
            q_nom: 0.2,
        };
        let v = [1.0, 0.0];
        let i = [ld.g() * v[0] - ld.b() * v[1], ld.g() * v[1] + ld.b() * v[0]];
        let (p, q) = instantaneous_power(v, i);
        assert!((p - 0.7).abs() < 1e-12);
        assert!((q - 0.2).abs() < 1e-12);
    }

    #[test]
    fn instantaneous_power_basics() {
        assert_eq!(instantaneous_power([1.0, 0.0], [1.0, 0.0]), (1.0, 0.0));
        let (p, q) = instantaneous_power([1.0, 0.0], [0.0, -1.0]);
        assert!(p.abs() < 1e-15 && (q - 1.0).abs() < 1e-15);
    }

    #[test]
    fn power_is_rotation_invariant() {
        // p and q computed in αβ agree with any common dq rotation.
        let v = [0.83, -0.41];
        let i = [-0.2, 0.95];
        let (p, q) = instantaneous_power(v, i);
        for k in 0..8 {
            let th = k as f64 * 0.7;
            let rot = |x: [f64; 2]| {
                [
                    th.cos() * x[0] + th.sin() * x[1],
                    -th.sin() * x[0] + th.cos() * x[1],
                ]
            };
            let (pr, qr) = instantaneous_power(rot(v), rot(i));
            assert!((p - pr).abs() < 1e-12);
            assert!((q - qr).abs() < 1e-12);
        }
    }
}
