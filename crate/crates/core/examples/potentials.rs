//! Potentials Γ(f) and Γ(D f) of a grid density, and the integration-by-parts consistency check.
//!
//! `cargo run --release --example potentials`

use kolmo::experiment::{ibp_consistency, ibp_density, ibp_density_derivative};
use kolmo::{GridFunction, GridSpec, GroupPoint, KernelEvaluator, OperatorSpec};

fn main() -> kolmo::Result<()> {
    let ev = KernelEvaluator::from_spec(&OperatorSpec::langevin())?;
    let spec = GridSpec::uniform(vec![-1.0, -1.0, -1.0], vec![1.0, 1.0, 1.0], 24)?;
    let f = GridFunction::from_fn(spec.clone(), ibp_density)?;
    let df = GridFunction::from_fn(spec, |x, t| ibp_density_derivative(0, x, t))?;
    for (x, t) in [([0.0, 0.0], 0.5), ([0.2, -0.1], 0.9)] {
        let z = GroupPoint::from_slice(&x, t)?;
        let pv = ev.potentials(&[&f], &z, true)?.swap_remove(0);
        println!("z = {x:?}, t = {t}: Γ(f) = {:.6e}  Γ(D f) = {:.6e}", pv.value, pv.gradient[0]);
    }
    let ibp = ibp_consistency(&ev, &f, &[df], 8)?;
    println!("integration by parts at {}³: relative gap {:.3e} over {} points", ibp.resolution, ibp.relative_error, ibp.points);
    Ok(())
}
