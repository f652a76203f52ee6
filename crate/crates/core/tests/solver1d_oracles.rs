use nozzle_lab::geometry::ChannelGeometry;
use nozzle_lab::profile::Profile;
use nozzle_lab::solver1d::*;
use nozzle_lab::thermo::PressureLaw;
use std::f64::consts::PI;

const GAMMA: f64 = 2.0;
const KAPPA: f64 = 1.0;

fn law() -> PressureLaw {
    PressureLaw::power_law(GAMMA, KAPPA).unwrap()
}

fn sound(rho: f64) -> f64 {
    (GAMMA * KAPPA * rho.powf(GAMMA - 1.0)).sqrt()
}

fn pressure(rho: f64) -> f64 {
    KAPPA * rho.powf(GAMMA)
}

/// Velocity jump across the wave connecting `rho_k` to `rho`.
fn wave_curve(rho: f64, rho_k: f64) -> f64 {
    if rho <= rho_k {
        2.0 / (GAMMA - 1.0) * (sound(rho) - sound(rho_k))
    } else {
        ((pressure(rho) - pressure(rho_k)) * (rho - rho_k) / (rho * rho_k)).sqrt()
    }
}

/// Exact isentropic Riemann solution sampled at `ξ = x/t`.
fn exact_riemann(l: (f64, f64), r: (f64, f64), xi: f64) -> (f64, f64) {
    let f = |rho: f64| wave_curve(rho, l.0) + wave_curve(rho, r.0) + r.1 - l.1;
    let (mut a, mut b) = (1e-8, 100.0);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if f(m) > 0.0 {
            b = m;
        } else {
            a = m;
        }
    }
    let rs = 0.5 * (a + b);
    let us = 0.5 * (l.1 + r.1) + 0.5 * (wave_curve(rs, r.0) - wave_curve(rs, l.0));
    if xi < us {
        let (rl, ul) = l;
        if rs > rl {
            let j = ((pressure(rs) - pressure(rl)) * rs * rl / (rs - rl)).sqrt();
            if xi < ul - j / rl { (rl, ul) } else { (rs, us) }
        } else {
            let (head, tail) = (ul - sound(rl), us - sound(rs));
            if xi < head {
                (rl, ul)
            } else if xi > tail {
                (rs, us)
            } else {
                let c = (GAMMA - 1.0) / (GAMMA + 1.0) * (ul + 2.0 * sound(rl) / (GAMMA - 1.0) - xi);
                let rho = (c * c / (GAMMA * KAPPA)).powf(1.0 / (GAMMA - 1.0));
                (rho, xi + c)
            }
        }
    } else {
        let (rr, ur) = r;
        if rs > rr {
            let j = ((pressure(rs) - pressure(rr)) * rs * rr / (rs - rr)).sqrt();
            if xi > ur + j / rr { (rr, ur) } else { (rs, us) }
        } else {
            let (head, tail) = (ur + sound(rr), us + sound(rs));
            if xi > head {
                (rr, ur)
            } else if xi < tail {
                (rs, us)
            } else {
                let c = (GAMMA - 1.0) / (GAMMA + 1.0) * (-ur + 2.0 * sound(rr) / (GAMMA - 1.0) + xi);
                let rho = (c * c / (GAMMA * KAPPA)).powf(1.0 / (GAMMA - 1.0));
                (rho, xi - c)
            }
        }
    }
}

#[test]
fn constant_area_matches_exact_riemann_solution() {
    let t_end = 0.08;
    let mut errors = Vec::new();
    for n in [100, 200, 400] {
        let grid = Grid1D::uniform(n, 1.0).unwrap();
        let rho: Vec<f64> = grid.z.iter().map(|&z| if z < 0.5 { 2.0 } else { 1.0 }).collect();
        let s0 = State1D::from_primitive(rho, &vec![0.0; n]).unwrap();
        let tr = run_1d(&System1D::Euler, &grid, &law(), &s0, &[t_end], &RunOptions1D::default()).unwrap();
        let s = &tr.states[0];
        let err: f64 = grid
            .z
            .iter()
            .enumerate()
            .map(|(i, &z)| (s.rho[i] - exact_riemann((2.0, 0.0), (1.0, 0.0), (z - 0.5) / t_end).0).abs())
            .sum::<f64>()
            * grid.dz;
        errors.push(err);
    }
    assert!(errors[0] < 0.02, "{errors:?}");
    assert!(errors[1] < errors[0] && errors[2] < errors[1], "{errors:?}");
}

#[test]
fn exact_riemann_oracle_is_consistent() {
    // identical states produce no waves; the star state joins both curves
    assert_eq!(exact_riemann((1.0, 0.2), (1.0, 0.2), 0.3), (1.0, 0.2));
    let (r, u) = exact_riemann((2.0, 0.0), (1.0, 0.0), 0.0);
    assert!(r > 1.0 && r < 2.0 && u > 0.0);
}

fn nozzle_geometry() -> ChannelGeometry {
    ChannelGeometry::axisymmetric(Profile::polynomial(&[1.0, 0.5]).with_sin(&[0.0, 0.1]), 0.1, 16).unwrap()
}

fn smooth_state(grid: &Grid1D) -> State1D {
    let rho: Vec<f64> = grid.z.iter().map(|z| 1.0 + 0.2 * (-(z - 0.5f64).powi(2) / 0.01).exp()).collect();
    let u: Vec<f64> = grid.z.iter().map(|z| 0.1 * (PI * z).sin().powi(2)).collect();
    State1D::from_primitive(rho, &u).unwrap()
}

fn restrict(fine: &[f64]) -> Vec<f64> {
    fine.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect()
}

#[test]
fn euler_self_convergence_is_second_order() {
    let geom = nozzle_geometry();
    let mut sols = Vec::new();
    for n in [64, 128, 256, 512] {
        let grid = Grid1D::new(&geom, n).unwrap();
        let opts = RunOptions1D { dt_max: Some(0.2 / n as f64), ..Default::default() };
        let tr = run_1d(&System1D::Euler, &grid, &law(), &smooth_state(&grid), &[0.1], &opts).unwrap();
        sols.push(tr.states[0].rho.clone());
    }
    let diff = |c: &[f64], f: &[f64]| {
        let r = restrict(f);
        c.iter().zip(&r).map(|(a, b)| (a - b).abs()).sum::<f64>() / c.len() as f64
    };
    let d1 = diff(&sols[0], &sols[1]);
    let d2 = diff(&sols[1], &sols[2]);
    let d3 = diff(&sols[2], &sols[3]);
    let q1 = (d1 / d2).log2();
    let q2 = (d2 / d3).log2();
    assert!(q2 >= 1.8, "orders {q1:.3} {q2:.3}");
}

#[test]
fn linear_viscous_decay_matches_heat_equation() {
    // negligible pressure isolates ν∂²u on a straight channel
    let weak = PressureLaw::power_law(2.0, 1e-4).unwrap();
    let visc = Visc1DParams::new(0.75, 0.0).unwrap();
    let n = 128;
    let grid = Grid1D::uniform(n, 1.0).unwrap();
    let u0 = 1e-6;
    let u: Vec<f64> = grid.z.iter().map(|z| u0 * (PI * z).sin()).collect();
    let s0 = State1D::from_primitive(vec![1.0; n], &u).unwrap();
    let t = 0.05;
    let opts = RunOptions1D { dt_max: Some(1e-4), ..Default::default() };
    let tr = run_1d(&System1D::NsDrift(visc), &grid, &weak, &s0, &[t], &opts).unwrap();
    let v = tr.states[0].velocity();
    let amp = 2.0 * grid.z.iter().zip(&v).map(|(z, v)| v * (PI * z).sin()).sum::<f64>() * grid.dz;
    let expected = u0 * (-visc.nu() * PI * PI * t).exp();
    assert!((amp / expected - 1.0).abs() < 0.05, "amplitude {amp:.4e} vs {expected:.4e}");
}

#[test]
fn strong_viscosity_decays_h1_seminorm() {
    let geom = nozzle_geometry();
    let grid = Grid1D::new(&geom, 64).unwrap();
    let visc = Visc1DParams::new(50.0, 1.0).unwrap();
    let mut s = smooth_state(&grid);
    let h1 = |s: &State1D| {
        let v = s.velocity();
        v.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / grid.dz
    };
    let mut prev = h1(&s);
    for _ in 0..40 {
        let dt = 0.8 * max_stable_dt(&s, &grid, &law());
        s = ns_drift_step(&s, &grid, &law(), &visc, dt).unwrap();
        let now = h1(&s);
        assert!(now <= prev * (1.0 + 1e-12), "{now} > {prev}");
        prev = now;
    }
}

#[test]
fn ns_drift_energy_audit() {
    let geom = nozzle_geometry();
    let grid = Grid1D::new(&geom, 128).unwrap();
    let visc = Visc1DParams::new(0.05, 0.05).unwrap();
    let s0 = smooth_state(&grid);
    let times: Vec<f64> = (0..=20).map(|k| 0.01 * k as f64).collect();
    let tr = run_1d(&System1D::NsDrift(visc), &grid, &law(), &s0, &times, &RunOptions1D::default()).unwrap();
    for k in 1..times.len() {
        let a = tr.energy[k] + tr.dissipation[k];
        let b = tr.energy[k - 1] + tr.dissipation[k - 1];
        assert!(a <= b + 1e-8 * (times[k] - times[k - 1]), "step {k}: {a} > {b}");
    }
    let m0 = tr.mass[0];
    for m in &tr.mass {
        assert!((m - m0).abs() <= 1e-12 * tr.n_steps as f64 * m0);
    }
}

#[test]
fn breakdown_is_reported() {
    // velocities above the breakdown threshold stop the run after one step
    let grid = Grid1D::uniform(32, 1.0).unwrap();
    let u: Vec<f64> = grid.z.iter().map(|z| 2e3 * (PI * z).sin()).collect();
    let s0 = State1D::from_primitive(vec![1.0; 32], &u).unwrap();
    let r = run_1d(&System1D::Euler, &grid, &law(), &s0, &[0.01], &RunOptions1D::default());
    assert!(matches!(r, Err(nozzle_lab::Error::Breakdown { .. }) | Err(nozzle_lab::Error::Positivity { .. })));
}
