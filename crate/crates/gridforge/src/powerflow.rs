//! Phasor-domain AC power flow used to seed the steady-state
//! initialization.
//!
//! Loads, line charging, snubbers and magnetizing branches are folded
//! into the admittance matrix, so only device buses carry injections:
//! one slack bus plus PV buses with fixed P and |V|. Solved with the
//! shared finite-difference Newton.

use crate::network::{Complex, NetworkCase};
use crate::numerics::{self, inf_norm};
use thiserror::Error;

#[derive(Debug, Clone)]
pub struct PowerFlowSpec {
    pub slack_bus: usize,
    pub slack_vmag: f64,
    /// (bus, active power injection, voltage magnitude)
    pub pv: Vec<(usize, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    /// Complex bus voltages; the real/imag parts are the αβ components
    /// at t = 0.
    pub v: Vec<Complex>,
    /// Net device injection current at every bus (zero away from
    /// device buses).
    pub i_inj: Vec<Complex>,
}

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("power flow diverged: residual {0:.3e}")]
    Diverged(f64),
}

/// Nodal admittance matrix including loads and shunts.
pub fn admittance_matrix(case: &NetworkCase) -> nalgebra::DMatrix<Complex> {
    let n = case.n_bus;
    let mut y = nalgebra::DMatrix::<Complex>::zeros(n, n);
    let j = Complex::new(0.0, 1.0);
    for line in &case.lines {
        let ys = Complex::new(1.0, 0.0) / Complex::new(line.r, line.l);
        y[(line.from, line.from)] += ys + j * line.c_half;
        y[(line.to, line.to)] += ys + j * line.c_half;
        y[(line.from, line.to)] -= ys;
        y[(line.to, line.from)] -= ys;
    }
    for t in &case.transformers {
        let st = t.params.to_system(&case.base);
        let ys = Complex::new(1.0, 0.0) / Complex::new(st.r_series, st.l_series);
        let ym = Complex::new(1.0 / st.r_mag, 0.0) + Complex::new(1.0, 0.0) / (j * st.l_mag);
        y[(t.from, t.from)] += ys + ym;
        y[(t.to, t.to)] += ys;
        y[(t.from, t.to)] -= ys;
        y[(t.to, t.from)] -= ys;
    }
    for ld in &case.loads {
        y[(ld.bus, ld.bus)] += Complex::new(ld.g(), ld.b());
    }
    for (b, &sn) in case.snubber_b.iter().enumerate() {
        y[(b, b)] += j * sn;
    }
    y
}

pub fn solve_power_flow(
    case: &NetworkCase,
    spec: &PowerFlowSpec,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let n = case.n_bus;
    let y = admittance_matrix(case);
    let is_pv = |b: usize| spec.pv.iter().any(|&(pb, _, _)| pb == b);
    let p_spec: Vec<f64> = (0..n)
        .map(|b| {
            spec.pv
                .iter()
                .find(|&&(pb, _, _)| pb == b)
                .map(|&(_, p, _)| p)
                .unwrap_or(0.0)
        })
        .collect();
    let vmag_fixed: Vec<Option<f64>> = (0..n)
        .map(|b| {
            if b == spec.slack_bus {
                Some(spec.slack_vmag)
            } else {
                spec.pv
                    .iter()
                    .find(|&&(pb, _, _)| pb == b)
                    .map(|&(_, _, vm)| vm)
            }
        })
        .collect();

    // Unknown vector: theta at all non-slack buses, then |V| at PQ buses.
    let theta_buses: Vec<usize> = (0..n).filter(|&b| b != spec.slack_bus).collect();
    let vm_buses: Vec<usize> = (0..n)
        .filter(|&b| b != spec.slack_bus && !is_pv(b))
        .collect();
    let dim = theta_buses.len() + vm_buses.len();
    let guess = vec![0.0; theta_buses.len()]
        .into_iter()
        .chain(vm_buses.iter().map(|_| 1.0))
        .collect::<Vec<f64>>();

    let assemble = |u: &[f64]| -> Vec<Complex> {
        let mut v = vec![Complex::new(0.0, 0.0); n];
        for b in 0..n {
            let th = theta_buses
                .iter()
                .position(|&tb| tb == b)
                .map(|k| u[k])
                .unwrap_or(0.0);
            let vm = match vmag_fixed[b] {
                Some(vm) => vm,
                None => {
                    let k = vm_buses.iter().position(|&vb| vb == b).unwrap();
                    u[theta_buses.len() + k]
                }
            };
            v[b] = Complex::new(vm * th.cos(), vm * th.sin());
        }
        v
    };

    let residual = |u: &[f64], r: &mut [f64]| {
        let v = assemble(u);
        let vv = nalgebra::DVector::from_vec(v.clone());
        let i = &y * &vv;
        // S_b = V_b * conj(I_b): device injection power at each bus.
        for (k, &b) in theta_buses.iter().enumerate() {
            let s = v[b] * i[b].conj();
            r[k] = s.re - p_spec[b];
        }
        for (k, &b) in vm_buses.iter().enumerate() {
            let s = v[b] * i[b].conj();
            r[theta_buses.len() + k] = s.im;
        }
    };

    let sol = numerics::solve_equilibrium(residual, &guess, 1e-10, 50).map_err(|e| {
        let mut r = vec![0.0; dim];
        let res = residual;
        res(&e.best, &mut r);
        PowerFlowError::Diverged(inf_norm(&r))
    })?;
    let v = assemble(&sol);
    let vv = nalgebra::DVector::from_vec(v.clone());
    let i = &y * &vv;
    Ok(PowerFlowSolution {
        v,
        i_inj: i.as_slice().to_vec(),
    })
}

impl PowerFlowSolution {
    /// Device injection apparent power at a bus.
    pub fn injection_power(&self, bus: usize) -> Complex {
        self.v[bus] * self.i_inj[bus].conj()
    }
}
