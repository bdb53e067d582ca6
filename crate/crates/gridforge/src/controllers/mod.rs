//! Converter control: cascaded AC voltage/current loops, modulation,
//! DC-voltage control, and the four grid-forming reference models
//! (droop, virtual synchronous machine, matching, dispatchable virtual
//! oscillator).
//!
//! All controller arithmetic is in per-unit. Gains whose published
//! bases are ambiguous default to values re-derived from the equal
//! proportional load-sharing criterion: every strategy produces the
//! same steady-state frequency deviation for a given power deviation.

use serde::{Deserialize, Serialize};

/// Rotation by θ: αβ = R(θ)·dq.
#[inline]
pub fn rotate(theta: f64, x: [f64; 2]) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * x[0] - s * x[1], s * x[0] + c * x[1]]
}

/// Inverse rotation: dq = R(−θ)·αβ.
#[inline]
pub fn rotate_inv(theta: f64, x: [f64; 2]) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [c * x[0] + s * x[1], -s * x[0] + c * x[1]]
}

/// J₂·x, rotation by π/2.
#[inline]
pub fn j2(x: [f64; 2]) -> [f64; 2] {
    [-x[1], x[0]]
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InnerLoopGains {
    pub k_pv: f64,
    pub k_iv: f64,
    pub k_pi: f64,
    pub k_ii: f64,
}

impl Default for InnerLoopGains {
    fn default() -> Self {
        // The voltage-loop integral gain is one tenth of the published
        // 232.2 (base ambiguous): taken per second it excites a 20-30 Hz
        // sub-synchronous mode against the network for every reference
        // model, while a tenth sits in the window that is small-signal
        // stable at equilibrium yet stiff enough to reproduce the
        // DC-source saturation collapse.
        Self {
            k_pv: 0.52,
            k_iv: 23.22,
            k_pi: 0.73,
            k_ii: 0.0059,
        }
    }
}

/// AC voltage loop in the controller dq frame.
///
/// ẋ_v = v̂ − v;  i_s★ = i + CωJ₂v + K_pv(v̂−v) + K_iv·x_v
/// with the filter susceptance `b_f` (pu) supplying the feed-forward.
#[allow(clippy::too_many_arguments)]
pub fn voltage_loop(
    v_hat: [f64; 2],
    v: [f64; 2],
    i: [f64; 2],
    omega_pu: f64,
    x_v: [f64; 2],
    b_f: f64,
    g: &InnerLoopGains,
) -> ([f64; 2], [f64; 2]) {
    let err = [v_hat[0] - v[0], v_hat[1] - v[1]];
    let ff = j2(v);
    let i_s_star = [
        i[0] + b_f * omega_pu * ff[0] + g.k_pv * err[0] + g.k_iv * x_v[0],
        i[1] + b_f * omega_pu * ff[1] + g.k_pv * err[1] + g.k_iv * x_v[1],
    ];
    (i_s_star, err)
}

/// AC current loop in the controller dq frame.
///
/// ẋ_i = i_s★ − i_s;  v_s★ = v + (LωJ₂ + RI₂)i_s + K_pi(i_s★−i_s) + K_ii·x_i.
#[allow(clippy::too_many_arguments)]
pub fn current_loop(
    i_s_star: [f64; 2],
    i_s: [f64; 2],
    v: [f64; 2],
    omega_pu: f64,
    x_i: [f64; 2],
    r_f: f64,
    x_f: f64,
    g: &InnerLoopGains,
) -> ([f64; 2], [f64; 2]) {
    let err = [i_s_star[0] - i_s[0], i_s_star[1] - i_s[1]];
    let ff = j2(i_s);
    let v_s_star = [
        v[0] + x_f * omega_pu * ff[0] + r_f * i_s[0] + g.k_pi * err[0] + g.k_ii * x_i[0],
        v[1] + x_f * omega_pu * ff[1] + r_f * i_s[1] + g.k_pi * err[1] + g.k_ii * x_i[1],
    ];
    (v_s_star, err)
}

/// Rotate the switching-node voltage reference into αβ and scale by
/// the nominal DC voltage: m = v_s★/v_dc★ in pu (v_dc★ = 1 pu).
pub fn modulation(v_s_star_dq: [f64; 2], theta: f64) -> [f64; 2] {
    rotate(theta, v_s_star_dq)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DcControlParams {
    /// Proportional DC-voltage gain, pu current per pu voltage.
    pub k_dc: f64,
}

impl Default for DcControlParams {
    fn default() -> Self {
        // Re-derived so the matching sharing slope 1/k_dc equals the
        // common 1e-3 pu droop slope (0.05 Hz per pu at 50 Hz); the
        // table literal in amperes per volt has an ambiguous base.
        Self { k_dc: 1000.0 }
    }
}

/// DC current reference: proportional DC-voltage control plus
/// feed-forward of the power setpoint and the filter losses.
/// All quantities in pu with v_dc★ = 1.
pub fn dc_voltage_control(
    v_dc: f64,
    i_x: f64,
    p: f64,
    p_star: f64,
    g_dc: f64,
    params: &DcControlParams,
) -> f64 {
    params.k_dc * (1.0 - v_dc) + g_dc * v_dc + p_star + (v_dc * i_x - p)
}

/// Proportional-integral AC voltage-magnitude regulator shared by
/// droop, VSM and matching control.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VoltagePi {
    pub k_p: f64,
    pub k_i: f64,
}

impl Default for VoltagePi {
    fn default() -> Self {
        Self { k_p: 0.001, k_i: 0.5 }
    }
}

impl VoltagePi {
    /// Output and integrator derivative for error (v★ − v).
    pub fn eval(&self, v_star: f64, v_mag: f64, integ: f64) -> (f64, f64) {
        let err = v_star - v_mag;
        (self.k_p * err + self.k_i * integ, err)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DroopParams {
    /// Frequency droop slope, pu frequency per pu power.
    pub d_omega_pu: f64,
    pub voltage: VoltagePi,
}

impl Default for DroopParams {
    fn default() -> Self {
        Self {
            // 2π·0.05 rad/s per pu power, i.e. 1e-3 pu/pu; droop, VSM,
            // matching and dVOC all share this steady-state slope.
            d_omega_pu: 1e-3,
            voltage: VoltagePi::default(),
        }
    }
}

/// Droop reference: ω = ω★ + d_ω(p★ − p) and PI voltage magnitude.
/// Returns (ω in pu, v̂_d, voltage-integrator derivative).
pub fn droop_reference(
    p: f64,
    v_mag: f64,
    integ: f64,
    p_star: f64,
    v_star: f64,
    params: &DroopParams,
) -> (f64, f64, f64) {
    let omega_pu = 1.0 + params.d_omega_pu * (p_star - p);
    let (v_hat_d, d_integ) = params.voltage.eval(v_star, v_mag, integ);
    (omega_pu, v_hat_d, d_integ)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VsmParams {
    /// Steady-state droop slope, pu frequency per pu power
    /// (equals 1/(D_p·ω★) of the synchronverter form).
    pub d_omega_pu: f64,
    /// Inertia-to-damping ratio J/D_p, seconds.
    pub t_j: f64,
    pub voltage: VoltagePi,
}

impl Default for VsmParams {
    fn default() -> Self {
        Self {
            // Common 1e-3 pu sharing slope.
            d_omega_pu: 1e-3,
            // Catalog ratio J/D_p = 2e3/1e5.
            t_j: 0.02,
            voltage: VoltagePi::default(),
        }
    }
}

/// Synchronverter frequency dynamics plus excitation PI.
///
/// θ̈ = (D_p/J)(ω★−ω) + (p★−p)/(Jω★) expressed with the slope and the
/// time constant t_j = J/D_p; the reference magnitude is ω·M_f·i_f with
/// the excitation product regulated by the PI.
/// Returns (ω pu, ω̇ pu/s, v̂_d, excitation-integrator derivative).
pub fn vsm_reference(
    p: f64,
    v_mag: f64,
    omega_pu: f64,
    integ: f64,
    p_star: f64,
    v_star: f64,
    params: &VsmParams,
) -> (f64, f64, f64, f64) {
    let d_omega = ((1.0 - omega_pu) + params.d_omega_pu * (p_star - p)) / params.t_j;
    let (psi_f, d_integ) = params.voltage.eval(v_star, v_mag, integ);
    let v_hat_d = omega_pu * psi_f;
    (omega_pu, d_omega, v_hat_d, d_integ)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MatchingParams {
    pub voltage: VoltagePi,
}

impl Default for MatchingParams {
    fn default() -> Self {
        Self {
            voltage: VoltagePi::default(),
        }
    }
}

/// Matching control: the converter frequency is the DC voltage scaled
/// by k_θ = ω★/v_dc★, i.e. ω in pu equals v_dc in pu; the modulation
/// magnitude μ comes from the voltage PI.
/// Returns (ω pu, μ, integrator derivative).
pub fn matching_reference(
    v_dc_pu: f64,
    v_mag: f64,
    integ: f64,
    v_star: f64,
    params: &MatchingParams,
) -> (f64, f64, f64) {
    let (mu, d_integ) = params.voltage.eval(v_star, v_mag, integ);
    (v_dc_pu, mu, d_integ)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DvocParams {
    /// Synchronization gain, rad/s.
    pub eta: f64,
    /// Amplitude-regulation gain (dimensionless in the pu form).
    pub alpha: f64,
    /// Network impedance angle, rad.
    pub kappa: f64,
}

impl Default for DvocParams {
    fn default() -> Self {
        // Power-droop slope η/v★² matches the common 1/k_dc pu slope
        // (η in rad/s since the oscillator runs in real time). The 0.96
        // factor compensates the instantaneous ‖v̂‖² divisor: the
        // operating amplitude sits slightly below v★, which would
        // otherwise steepen the realized slope by ~8%.
        let omega_b = 2.0 * std::f64::consts::PI * 50.0;
        let eta = 0.96e-3 * omega_b;
        Self {
            eta,
            // 2ηα matches the ~0.5/s integral action of the PI voltage
            // regulators of the other strategies.
            alpha: 0.5 / (2.0 * eta),
            kappa: std::f64::consts::FRAC_PI_2,
        }
    }
}

/// Oscillator state derivative of dVOC in αβ coordinates:
/// v̂̇ = ω★J₂v̂ + η(Kv̂ − R₂(κ)i + (α/v★²)(v★²−‖v̂‖²)v̂).
#[allow(clippy::too_many_arguments)]
pub fn dvoc_reference(
    v_hat: [f64; 2],
    i: [f64; 2],
    p_star: f64,
    q_star: f64,
    v_star: f64,
    omega_star: f64,
    params: &DvocParams,
) -> [f64; 2] {
    let v2 = v_star * v_star;
    let (sk, ck) = params.kappa.sin_cos();
    let rot_k = |x: [f64; 2]| [ck * x[0] - sk * x[1], sk * x[0] + ck * x[1]];
    // K v̂ = (1/v★²) R(κ) [[p★, q★], [−q★, p★]] v̂.
    let a_v = [
        p_star * v_hat[0] + q_star * v_hat[1],
        -q_star * v_hat[0] + p_star * v_hat[1],
    ];
    let k_v = rot_k([a_v[0] / v2, a_v[1] / v2]);
    let r_i = rot_k(i);
    let n2 = v_hat[0] * v_hat[0] + v_hat[1] * v_hat[1];
    let amp = params.alpha / v2 * (v2 - n2);
    [
        omega_star * -v_hat[1] + params.eta * (k_v[0] - r_i[0] + amp * v_hat[0]),
        omega_star * v_hat[0] + params.eta * (k_v[1] - r_i[1] + amp * v_hat[1]),
    ]
}

/// Instantaneous frequency (rad/s) implied by the oscillator state and
/// its derivative.
pub fn dvoc_frequency(v_hat: [f64; 2], d_v_hat: [f64; 2]) -> f64 {
    let n2 = v_hat[0] * v_hat[0] + v_hat[1] * v_hat[1];
    (v_hat[0] * d_v_hat[1] - v_hat[1] * d_v_hat[0]) / n2
}

/// Strategy selection with per-strategy gains.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Gfc {
    Droop(DroopParams),
    Vsm(VsmParams),
    Matching(MatchingParams),
    Dvoc(DvocParams),
}

impl Gfc {
    pub fn name(&self) -> &'static str {
        match self {
            Gfc::Droop(_) => "droop",
            Gfc::Vsm(_) => "vsm",
            Gfc::Matching(_) => "matching",
            Gfc::Dvoc(_) => "dvoc",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "droop" => Some(Gfc::Droop(DroopParams::default())),
            "vsm" => Some(Gfc::Vsm(VsmParams::default())),
            "matching" => Some(Gfc::Matching(MatchingParams::default())),
            "dvoc" => Some(Gfc::Dvoc(DvocParams::default())),
            _ => None,
        }
    }

    /// Number of reference-model states.
    pub fn state_dim(&self) -> usize {
        match self {
            Gfc::Droop(_) | Gfc::Matching(_) => 2, // θ, voltage integrator
            Gfc::Vsm(_) => 3,                      // θ, ω, excitation integrator
            Gfc::Dvoc(_) => 2,                     // v̂ αβ
        }
    }
}
