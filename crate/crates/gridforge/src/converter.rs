//! Aggregated two-level voltage source converter: DC link with a
//! saturated controllable current source, averaged switching stage,
//! RLC output filter, and the module scaling laws for the reduced-order
//! model of a modular large-scale converter system.

use crate::network::{LinearTransformer, PerUnitBase, ScaledTransformer};
use serde::{Deserialize, Serialize};

/// Per-module component values in SI units (one module = two identical
/// AC-coupled converters behind one LV/MV transformer).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModuleParams {
    /// DC loss conductance per converter, Ω⁻¹.
    pub g_dc: f64,
    /// DC-link capacitance per converter, F.
    pub c_dc: f64,
    /// Filter resistance, Ω.
    pub r: f64,
    /// Filter inductance, H.
    pub l: f64,
    /// Filter capacitance, F.
    pub c: f64,
    /// Rating per converter, VA.
    pub s_r: f64,
}

impl Default for ModuleParams {
    fn default() -> Self {
        Self {
            g_dc: 0.83,
            c_dc: 0.008,
            r: 0.001,
            l: 200e-6,
            c: 300e-6,
            s_r: 500e3,
        }
    }
}

/// Aggregate values produced by the scaling laws
/// G = 2n·g, C_dc = 2n·c_dc, R = r/2n, L = l/2n, C = 2n·c.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateParams {
    pub g_dc: f64,
    pub c_dc: f64,
    pub r: f64,
    pub l: f64,
    pub c: f64,
    pub s_agg: f64,
}

/// Apply the module scaling laws for `n` modules of two converters.
pub fn scale_module_params(m: &ModuleParams, n: usize) -> AggregateParams {
    assert!(n >= 1, "module count must be at least 1");
    let k = 2.0 * n as f64;
    AggregateParams {
        g_dc: k * m.g_dc,
        c_dc: k * m.c_dc,
        r: m.r / k,
        l: m.l / k,
        c: k * m.c,
        s_agg: k * m.s_r,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConverterParams {
    pub module: ModuleParams,
    /// Module count.
    pub n: usize,
    /// DC source response time, seconds.
    pub tau_dc: f64,
    /// DC current limit, pu of the aggregate rating.
    pub i_max: f64,
    /// Nominal DC voltage, volts.
    pub v_dc_star: f64,
    /// AC filter-terminal voltage base, volts line-line RMS.
    pub v_ac: f64,
    /// Use the literal catalog DC conductance instead of the 1%-loss
    /// default (the literal value implies several-MW idle losses).
    pub literal_g_dc: bool,
    pub lv_mv: LinearTransformer,
}

impl Default for ConverterParams {
    fn default() -> Self {
        Self {
            module: ModuleParams::default(),
            n: 100,
            tau_dc: 50e-3,
            i_max: 1.2,
            v_dc_star: 2.44e3,
            v_ac: 1.0e3,
            literal_g_dc: false,
            lv_mv: LinearTransformer::lv_mv(),
        }
    }
}

/// Converter quantities in per-unit on the system base.
#[derive(Debug, Clone, Copy)]
pub struct ConverterPu {
    /// Filter resistance, pu.
    pub r_f: f64,
    /// Filter reactance at ω_b, pu.
    pub x_f: f64,
    /// Filter susceptance at ω_b, pu.
    pub b_f: f64,
    /// DC capacitance constant C·v_dc_b²/s_b, seconds.
    pub c_dc: f64,
    /// DC loss conductance, pu.
    pub g_dc: f64,
    pub tau_dc: f64,
    /// DC current limit, pu on the system base.
    pub i_max: f64,
    /// Aggregate rating over system base.
    pub rating: f64,
    /// Physical modulation magnitude per pu modulation
    /// (m_physical = m_pu / k_m).
    pub k_m: f64,
    pub omega_b: f64,
    /// LV/MV transformer (rating scaled by 2n) on the system base.
    pub lvmv: ScaledTransformer,
}

impl ConverterParams {
    pub fn to_pu(&self, base: &PerUnitBase) -> ConverterPu {
        let agg = scale_module_params(&self.module, self.n);
        let wb = base.omega_b;
        let z_lv = self.v_ac * self.v_ac / base.s_b;
        let g_dc_si = if self.literal_g_dc {
            agg.g_dc
        } else {
            // 1% of the aggregate rating dissipated at nominal DC voltage.
            0.01 * agg.s_agg / (self.v_dc_star * self.v_dc_star)
        };
        let lvmv = self
            .lv_mv
            .clone()
            .with_rating(2.0 * self.n as f64 * self.lv_mv.s_r)
            .to_system(base);
        // Amplitude-invariant phase-peak AC base voltage.
        let v_ac_pk = self.v_ac * (2.0f64 / 3.0).sqrt();
        ConverterPu {
            r_f: agg.r / z_lv,
            x_f: wb * agg.l / z_lv,
            b_f: wb * agg.c * z_lv,
            c_dc: agg.c_dc * self.v_dc_star * self.v_dc_star / base.s_b,
            g_dc: g_dc_si * self.v_dc_star * self.v_dc_star / base.s_b,
            tau_dc: self.tau_dc,
            i_max: self.i_max * agg.s_agg / base.s_b,
            rating: agg.s_agg / base.s_b,
            k_m: self.v_dc_star / (2.0 * v_ac_pk),
            omega_b: wb,
            lvmv,
        }
    }
}

/// DC source: first-order lag on the current reference, hard saturation
/// on the delivered current. Returns (i_dc, i̇_τ).
pub fn dc_source(i_dc_star: f64, i_tau: f64, tau_dc: f64, i_max: f64) -> (f64, f64) {
    let i_dc = if i_tau.abs() < i_max {
        i_tau
    } else {
        i_tau.signum() * i_max
    };
    (i_dc, (i_dc_star - i_tau) / tau_dc)
}

/// Physical state derivatives of the DC link and output filter.
///
/// All quantities in pu; `m` is the pu modulation (switching-node
/// voltage per pu DC voltage), so v_s = m·v_dc and i_x = mᵀi_s which
/// makes the power identity v_dc·i_x = v_sᵀi_s hold exactly.
#[allow(clippy::too_many_arguments)]
pub fn converter_physical(
    v_dc: f64,
    i_s: [f64; 2],
    v_f: [f64; 2],
    m: [f64; 2],
    i_out: [f64; 2],
    i_dc: f64,
    pu: &ConverterPu,
) -> PhysicalDerivs {
    let v_s = [m[0] * v_dc, m[1] * v_dc];
    let i_x = m[0] * i_s[0] + m[1] * i_s[1];
    let d_v_dc = (i_dc - pu.g_dc * v_dc - i_x) / pu.c_dc;
    let kl = pu.omega_b / pu.x_f;
    let d_i_s = [
        kl * (v_s[0] - pu.r_f * i_s[0] - v_f[0]),
        kl * (v_s[1] - pu.r_f * i_s[1] - v_f[1]),
    ];
    let kc = pu.omega_b / pu.b_f;
    let d_v_f = [kc * (i_s[0] - i_out[0]), kc * (i_s[1] - i_out[1])];
    PhysicalDerivs {
        d_v_dc,
        d_i_s,
        d_v_f,
        i_x,
        v_s,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PhysicalDerivs {
    pub d_v_dc: f64,
    pub d_i_s: [f64; 2],
    pub d_v_f: [f64; 2],
    pub i_x: f64,
    pub v_s: [f64; 2],
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_laws_catalog_values() {
        let agg = scale_module_params(&ModuleParams::default(), 100);
        assert!((agg.c_dc - 1.6).abs() < 1e-12);
        assert!((agg.l - 1e-6).abs() < 1e-18);
        assert!((agg.g_dc - 166.0).abs() < 1e-9);
        assert!((agg.c - 0.06).abs() < 1e-12);
        assert!((agg.s_agg - 100e6).abs() < 1e-3);
    }

    #[test]
    fn n_equals_one_is_the_parallel_law() {
        let m = ModuleParams::default();
        let one = scale_module_params(&m, 1);
        let two = scale_module_params(&m, 2);
        assert!((two.g_dc - 2.0 * one.g_dc).abs() < 1e-12);
        assert!((two.r - one.r / 2.0).abs() < 1e-15);
    }

    #[test]
    fn saturation_clamps_with_odd_symmetry() {
        let (i, _) = dc_source(0.0, 1.0, 0.05, 1.2);
        assert_eq!(i, 1.0);
        let (i, _) = dc_source(0.0, 1.5, 0.05, 1.2);
        assert_eq!(i, 1.2);
        let (i, _) = dc_source(0.0, -1.5, 0.05, 1.2);
        assert_eq!(i, -1.2);
    }

    #[test]
    fn dc_source_first_order_step() {
        // Step reference 0 -> 1 with τ = 50 ms: i_τ(τ) = 63.2%.
        let tau = 0.05;
        let dt = 1e-5;
        let mut i_tau = 0.0;
        let mut t = 0.0;
        while t < tau {
            let (_, d1) = dc_source(1.0, i_tau, tau, 1.2);
            let (_, d2) = dc_source(1.0, i_tau + dt * d1, tau, 1.2);
            i_tau += dt * 0.5 * (d1 + d2);
            t += dt;
        }
        assert!((i_tau - (1.0 - (-1.0f64).exp())).abs() < 1e-4);
    }

    #[test]
    fn dc_equilibrium_has_zero_derivatives() {
        let pu = ConverterParams::default().to_pu(&crate::network::PerUnitBase::nine_bus());
        let d = converter_physical(
            1.0,
            [0.0; 2],
            [0.0; 2],
            [0.0; 2],
            [0.0; 2],
            pu.g_dc,
            &pu,
        );
        assert!(d.d_v_dc.abs() < 1e-15);
        assert!(d.d_i_s[0].abs() < 1e-15 && d.d_v_f[1].abs() < 1e-15);
    }

    #[test]
    fn switching_stage_conserves_power() {
        // v_dc·i_x == v_sᵀ i_s for arbitrary modulation and current.
        let pu = ConverterParams::default().to_pu(&crate::network::PerUnitBase::nine_bus());
        let mut s = 0x12345u64;
        let mut rnd = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..100 {
            let m = [rnd(), rnd()];
            let i_s = [rnd(), rnd()];
            let v_dc = 1.0 + 0.3 * rnd();
            let d = converter_physical(v_dc, i_s, [0.0; 2], m, [0.0; 2], 0.0, &pu);
            let lhs = v_dc * d.i_x;
            let rhs = d.v_s[0] * i_s[0] + d.v_s[1] * i_s[1];
            assert!((lhs - rhs).abs() < 1e-14);
        }
    }

    #[test]
    fn saturated_source_with_excess_draw_discharges_the_link() {
        let pu = ConverterParams::default().to_pu(&crate::network::PerUnitBase::nine_bus());
        // AC power draw above v_dc·i_max forces v̇_dc < 0.
        let v_dc = 1.0;
        let m = [1.3, 0.0];
        let i_s = [1.0, 0.0]; // i_x = 1.3 > i_max
        let (i_dc, _) = dc_source(2.0, 2.0, pu.tau_dc, pu.i_max);
        let d = converter_physical(v_dc, i_s, [1.0, 0.0], m, i_s, i_dc, &pu);
        assert!(i_dc <= pu.i_max);
        assert!(d.d_v_dc < 0.0);
    }

    #[test]
    fn pu_conversion_matches_hand_values() {
        let pu = ConverterParams::default().to_pu(&crate::network::PerUnitBase::nine_bus());
        let wb = 2.0 * std::f64::consts::PI * 50.0;
        assert!((pu.x_f - wb * 1e-6 / 0.01).abs() < 1e-9);
        assert!((pu.b_f - wb * 0.06 * 0.01).abs() < 1e-9);
        assert!((pu.c_dc - 1.6 * 2440.0 * 2440.0 / 100e6).abs() < 1e-9);
        assert!((pu.i_max - 1.2).abs() < 1e-12);
        assert!((pu.g_dc - 0.01).abs() < 1e-12);
    }
}
