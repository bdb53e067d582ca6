//! Electromagnetic-transient simulation of mixed synchronous-machine /
//! grid-forming-converter power systems.
//!
//! The library models the full circuit — network, machines, converters
//! with their DC links and cascaded controls — as one flat ODE in
//! stationary αβ coordinates and integrates it with fixed-step
//! methods. Scenario drivers reproduce load-step and
//! loss-of-machine studies on the 9-bus test system and compute
//! frequency-performance metrics per grid-forming strategy.
//!
//! ```
//! use gridforge::controllers::{droop_reference, DroopParams};
//!
//! // A 0.5 pu power deficit lifts the frequency reference by the
//! // sharing slope times the deficit.
//! let par = DroopParams::default();
//! let (omega_pu, _, _) = droop_reference(0.25, 1.0, 0.0, 0.75, 1.0, &par);
//! assert!((omega_pu - (1.0 + 0.5 * par.d_omega_pu)).abs() < 1e-12);
//! ```

pub mod controllers;
pub mod converter;
pub mod machine;
pub mod network;
pub mod numerics;
pub mod powerflow;
pub mod scenarios;
pub mod system;
