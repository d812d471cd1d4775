//! Fundamental solution of the Langevin operator: value, covariance and mass conservation.
//!
//! `cargo run --release --example kernel`

use kolmo::experiment::kernel_mass;
use kolmo::{GroupPoint, KernelEvaluator, OperatorSpec};

fn main() -> kolmo::Result<()> {
    let ev = KernelEvaluator::from_spec(&OperatorSpec::langevin())?;
    let origin = GroupPoint::origin(2);
    println!("C(1) = {}", ev.covariance(1.0)?);
    println!("Γ((0,0),1) = {:.15}  (√3/2π = {:.15})", ev.gamma(&GroupPoint::from_slice(&[0.0, 0.0], 1.0)?, &origin)?, 3f64.sqrt() / (2.0 * std::f64::consts::PI));
    for t in [0.25, 1.0, 4.0] {
        let z = GroupPoint::from_slice(&[0.5, 0.25], t)?;
        let mass = kernel_mass(&ev, t)?.unwrap_or(f64::NAN);
        println!("t = {t}: Γ((0.5,0.25),t) = {:.6e}  ∫Γ dx = {mass:.12}", ev.gamma(&z, &origin)?);
    }
    let before = GroupPoint::from_slice(&[0.0, 0.0], -0.5)?;
    println!("Γ vanishes before the pole: {}", ev.gamma(&before, &origin)?);
    Ok(())
}
