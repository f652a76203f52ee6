//! Relative energy between the 3D inviscid flow and the lifted 1D Euler
//! solution as the channel thins, with eps = lambda. A small grid keeps
//! the run short; the acceptance harness uses a finer one.

use nozzle_lab::profile::Profile;
use nozzle_lab::relent::{self, ReferenceModel, StudyCell, StudyConfig, StudyMode};
use nozzle_lab::solver1d::Limiter;

fn main() -> nozzle_lab::Result<()> {
    let cfg = StudyConfig {
        mode: StudyMode::Inviscid,
        reference_model: ReferenceModel::Drift,
        radius: Profile::polynomial(&[1.0, 0.5]),
        gamma: 2.0,
        kappa: 1.0,
        mu: 1.0,
        eta: 1.0,
        cells: [0.2, 0.1, 0.05].iter().map(|&e| StudyCell { epsilon: e, lambda: e }).collect(),
        density: Profile::constant(1.0).with_cos(&[0.1]),
        velocity: Profile::constant(0.0).with_sin(&[0.2]),
        horizon: 0.2,
        n_outputs: 4,
        n_r: 8,
        n_z: 32,
        snapshots_per_unit_time: 400,
        reference_dt_max: None,
        limiter: Limiter::Minmod,
        check_fault: false,
    };
    let report = relent::convergence_study(&cfg)?;
    for (x, s) in report.abscissa.iter().zip(&report.sup_normalized) {
        println!("eps + lambda = {x:.3}  sup E/|Omega| = {s:.3e}");
    }
    println!("floor {:.2e}, monotone {}, fitted q {:?}", report.floor, report.monotone, report.fitted_q());
    Ok(())
}
