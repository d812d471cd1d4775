//! Reproduction u = −Γ(K u) of a smooth bump through the kernel potential.
//!
//! `cargo run --release --example representation`

use kolmo::estimates::representation::{representation_check, Bump};
use kolmo::{KernelEvaluator, OperatorSpec};

fn main() -> kolmo::Result<()> {
    let op = OperatorSpec::langevin();
    let ev = KernelEvaluator::from_spec(&op)?;
    let rep = representation_check(&ev, &op, &Bump::standard(2), &[16, 32], 12)?;
    for l in &rep.levels {
        println!("{}³: relative L² error {:.4e} over {} points", l.resolution, l.relative_l2_error, l.lattice_points);
    }
    println!("monotone: {}", rep.monotone);
    Ok(())
}
