//! Closed-form Korn blow-up field on a circular channel: the ratio of
//! symmetric to full gradient energy decays like eps^2.

use nozzle_lab::geometry::ChannelGeometry;
use nozzle_lab::korn::{self, KernelElement};
use nozzle_lab::profile::Profile;

fn main() -> nozzle_lab::Result<()> {
    let q = KernelElement::profile(Profile::constant(0.0).with_sin(&[1.0]))?;
    for eps in [0.4, 0.2, 0.1, 0.05] {
        let g = ChannelGeometry::circular([Profile::default(), Profile::default()], Profile::constant(1.0), eps, 16)?;
        let b = korn::example_blowup_field(&q, &g)?;
        println!(
            "eps {eps:<5} mean |grad|^2 {:.6}  mean |sym|^2 {:.6e}  ratio {:.3e}  lower bound on ko1 {:.2}",
            b.mean_grad, b.mean_sym, b.ratio_sym_over_grad, b.lower_bound
        );
    }
    Ok(())
}
