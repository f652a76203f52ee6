//! Viscous thin-channel study at fixed lambda = 1, comparing the
//! drift-form reference with the slip-averaged one.

use nozzle_lab::profile::Profile;
use nozzle_lab::relent::{self, ReferenceModel, StudyCell, StudyConfig, StudyMode};
use nozzle_lab::solver1d::Limiter;

fn main() -> nozzle_lab::Result<()> {
    let base = StudyConfig {
        mode: StudyMode::Viscous,
        reference_model: ReferenceModel::Drift,
        radius: Profile::polynomial(&[1.0, 0.5]),
        gamma: 2.0,
        kappa: 1.0,
        mu: 1.0,
        eta: 1.0,
        cells: [0.2, 0.1].iter().map(|&e| StudyCell { epsilon: e, lambda: 1.0 }).collect(),
        density: Profile::constant(1.0).with_cos(&[0.1]),
        velocity: Profile::constant(0.0).with_sin(&[0.2]),
        horizon: 0.05,
        n_outputs: 2,
        n_r: 8,
        n_z: 32,
        snapshots_per_unit_time: 400,
        reference_dt_max: Some(1e-4),
        limiter: Limiter::Minmod,
        check_fault: false,
    };
    for model in [ReferenceModel::Drift, ReferenceModel::SlipAveraged] {
        let report = relent::convergence_study(&StudyConfig { reference_model: model, ..base.clone() })?;
        let sup: Vec<String> = report.sup_normalized.iter().map(|s| format!("{s:.3e}")).collect();
        println!("{model:?}: sup E/|Omega| at eps {:?} = [{}]", report.abscissa, sup.join(", "));
    }
    Ok(())
}
