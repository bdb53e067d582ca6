//! Print the right-most eigenvalues of the linearized system for a
//! preset, in the rotating frame (shift pair states by ±j·ω_b).
use gridforge::numerics::StateKind;
use gridforge::scenarios::{build_system, preset};
use gridforge::system::DeviceDiag;
use nalgebra::{Complex, DMatrix};

fn main() {
    let strategy = std::env::args().nth(1).unwrap_or_else(|| "droop".into());
    let mut cfg = preset("large-disturbance", &strategy, Some(0.75)).unwrap();
    for kv in std::env::args().skip(2) {
        let (k, v) = kv.split_once('=').expect("key=value");
        cfg.overrides.insert(k.to_string(), v.parse().unwrap());
    }
    let mut model = build_system(&cfg).unwrap();
    let x0 = model.initialize(1e-8).unwrap();
    let n = x0.len();
    let env = model.env();
    let mut f0 = vec![0.0; n];
    let ndev = model.devices.len();
    let mut diag = vec![DeviceDiag::default(); ndev];
    model.derivatives(0.0, &x0, &env, &mut f0, &mut diag);
    // FD Jacobian
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut xp = x0.clone();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        let h = 1e-5 * (1.0 + x0[j].abs());
        xp[j] = x0[j] + h;
        model.derivatives(0.0, &xp, &env, &mut fp, &mut diag);
        xp[j] = x0[j] - h;
        model.derivatives(0.0, &xp, &env, &mut fm, &mut diag);
        xp[j] = x0[j];
        for i in 0..n {
            a[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    // Shift to rotating frame: complex pairs z = x_a + j x_b rotate at
    // ω_b; subtract ω_b·S where S is the pairwise rotation generator.
    let wb = 2.0 * std::f64::consts::PI * 50.0;
    let kinds: Vec<StateKind> = model.layout.kinds().to_vec();
    for (i, k) in kinds.iter().enumerate() {
        match k {
            StateKind::AlphaOfPair => a[(i, i + 1)] += wb,
            StateKind::BetaOfPair => a[(i, i - 1)] -= wb,
            _ => {}
        }
    }
    let eig = a.complex_eigenvalues();
    let mut ev: Vec<Complex<f64>> = eig.iter().cloned().collect();
    ev.sort_by(|p, q| q.re.partial_cmp(&p.re).unwrap());
    println!("strategy={strategy} dim={n}");
    for e in ev.iter().take(16) {
        println!("  {:>12.4} {:+12.4}j   |f|={:.1} Hz", e.re, e.im, e.im.abs() / (2.0 * std::f64::consts::PI));
    }
    // Mode shape of the right-most eigenvalue via inverse iteration.
    let lam = ev[0] + Complex::new(1e-3, 0.0);
    let ac = a.map(|v| Complex::new(v, 0.0));
    let mut m = ac.clone();
    for i in 0..n {
        m[(i, i)] -= lam;
    }
    let lu = m.lu();
    let mut v = nalgebra::DVector::<Complex<f64>>::from_fn(n, |i, _| Complex::new(1.0 / (1.0 + i as f64), 0.1));
    for _ in 0..5 {
        v = lu.solve(&v).expect("singular");
        let nv = v.norm();
        v /= Complex::new(nv, 0.0);
    }
    let entries = model.layout.entries();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| v[j].norm().partial_cmp(&v[i].norm()).unwrap());
    println!("  mode shape (top 20):");
    for &i in idx.iter().take(20) {
        let e = &entries[i];
        println!("    {:>8.4}  {}.{}", v[i].norm(), e.device, e.state);
    }
}
