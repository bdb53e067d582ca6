//! Randomized invariants of the component laws: exact power transfer
//! through the switching stage, the DC-source clamp, the dVOC αβ/polar
//! equivalence and metric homogeneity.

use gridforge::controllers::{dvoc_frequency, dvoc_reference, DvocParams};
use gridforge::converter::{converter_physical, dc_source, ConverterParams};
use gridforge::network::{instantaneous_power, PerUnitBase};
use gridforge::scenarios::frequency_metrics;
use proptest::prelude::*;

const WSTAR: f64 = 100.0 * std::f64::consts::PI;

proptest! {
    /// v_dc·i_x == v_sᵀi_s: the averaged switching stage moves power
    /// between the DC link and the stator without creating any.
    #[test]
    fn switching_stage_power_identity(
        m0 in -1.5f64..1.5, m1 in -1.5f64..1.5,
        i0 in -2.0f64..2.0, i1 in -2.0f64..2.0,
        v_dc in 0.2f64..1.8,
    ) {
        let pu = ConverterParams::default().to_pu(&PerUnitBase::nine_bus());
        let d = converter_physical(v_dc, [i0, i1], [0.0; 2], [m0, m1], [0.0; 2], 0.0, &pu);
        let rhs = d.v_s[0] * i0 + d.v_s[1] * i1;
        prop_assert!((v_dc * d.i_x - rhs).abs() <= 1e-12);
    }

    /// The delivered DC current never leaves [−i_max, i_max] and passes
    /// the lag state through untouched below the limit.
    #[test]
    fn dc_source_clamp_bound(
        i_star in -3.0f64..3.0,
        i_tau in -3.0f64..3.0,
        i_max in 0.1f64..2.0,
        tau in 0.01f64..0.2,
    ) {
        let (i_dc, d_i_tau) = dc_source(i_star, i_tau, tau, i_max);
        prop_assert!(i_dc.abs() <= i_max);
        if i_tau.abs() < i_max {
            prop_assert_eq!(i_dc, i_tau);
        }
        // The lag ignores the clamp: it always relaxes toward i_star.
        prop_assert!((d_i_tau - (i_star - i_tau) / tau).abs() <= 1e-12);
    }

    /// The αβ oscillator law equals the polar form at κ = π/2:
    /// θ̇ = ω★ + η(p★/v★² − p/‖v̂‖²) and the matching amplitude law.
    #[test]
    fn dvoc_alpha_beta_matches_polar_form(
        va in -1.5f64..1.5, vb in -1.5f64..1.5,
        ia in -1.0f64..1.0, ib in -1.0f64..1.0,
        p_star in -0.5f64..0.5, q_star in -0.5f64..0.5,
    ) {
        let v_hat = [va, vb];
        let n = va.hypot(vb);
        prop_assume!(n > 0.1);
        let par = DvocParams::default();
        let d = dvoc_reference(v_hat, [ia, ib], p_star, q_star, 1.0, WSTAR, &par);
        let (p, q) = instantaneous_power(v_hat, [ia, ib]);
        let theta_dot = WSTAR + par.eta * (p_star - p / (n * n));
        let n_dot = par.eta * (q_star - q / (n * n)) * n
            + par.eta * par.alpha * (1.0 - n * n) * n;
        prop_assert!((dvoc_frequency(v_hat, d) - theta_dot).abs() <= 1e-10);
        prop_assert!(((v_hat[0] * d[0] + v_hat[1] * d[1]) / n - n_dot).abs() <= 1e-10);
    }

    /// Nadir and RoCoF are positively homogeneous in the frequency
    /// deviation: scaling Δω scales both metrics by the same factor.
    #[test]
    fn metrics_scale_linearly_in_deviation(
        c in 0.01f64..10.0,
        a1 in -1.0f64..1.0, a2 in -1.0f64..1.0,
        f1 in 0.5f64..4.0, lam in 0.1f64..2.0,
    ) {
        let t: Vec<f64> = (0..=2000).map(|i| i as f64 * 1e-3).collect();
        let dev: Vec<f64> = t
            .iter()
            .map(|&tv| (a1 * (f1 * tv).sin() + a2 * tv) * (-lam * tv).exp())
            .collect();
        let at = |k: f64| {
            let w: Vec<f64> = dev.iter().map(|d| WSTAR + k * d).collect();
            frequency_metrics(&t, &w, WSTAR, 0.0, 0.25)
        };
        let (n1, r1) = at(1.0);
        let (nc, rc) = at(c);
        prop_assert!((nc - c * n1).abs() <= 1e-9 * nc.max(1.0));
        prop_assert!((rc - c * r1).abs() <= 1e-9 * rc.max(1.0));
    }
}
