//! Group law, inverse, dilations and the homogeneous norm on the Langevin group.
//!
//! `cargo run --release --example lie_group`

use kolmo::lie::Cylinder;
use kolmo::{GroupPoint, KolmogorovGroup, OperatorSpec};

fn main() -> kolmo::Result<()> {
    let g = KolmogorovGroup::from_spec(&OperatorSpec::langevin())?;
    let z = GroupPoint::from_slice(&[0.3, -0.2], 0.1)?;
    let w = GroupPoint::from_slice(&[-0.5, 0.4], -0.25)?;
    let zw = g.compose(&z, &w)?;
    println!("z ∘ w      = x {:?} t {:.4}", zw.x.as_slice(), zw.t);
    let back = g.compose(&zw, &g.inverse(&w))?;
    println!("(z ∘ w) ∘ w⁻¹ = x {:?} t {:.4}", back.x.as_slice(), back.t);
    for r in [0.5, 1.0, 2.0] {
        let d = g.dilate(r, &z)?;
        println!("r = {r}: ‖δ_r z‖ = {:.6}, r‖z‖ = {:.6}", g.hom_norm(&d), r * g.hom_norm(&z));
    }
    println!("dilation jacobian r = 2: {}", g.dilation_jacobian(2.0));
    let q = Cylinder::unit_at_origin(2, 1.0)?;
    let inside = GroupPoint::from_slice(&[0.2, 0.1], -0.5)?;
    println!("(0.2, 0.1, -0.5) in Q_1: {}", q.contains(&g, &inside));
    println!("|Q_1| = {:.6}", q.exact_volume(&g.blocks));
    Ok(())
}
