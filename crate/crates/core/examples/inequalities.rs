//! Sobolev and Caccioppoli constants measured on the standard solution family.
//!
//! `cargo run --release --example inequalities`

use kolmo::experiment::{caccioppoli_report, sobolev_report};
use kolmo::OperatorSpec;

fn main() -> kolmo::Result<()> {
    let op = OperatorSpec::langevin();
    let res = [16, 24, 32];
    let sob = sobolev_report(&op, &res, 0.5, 1.0, 42)?;
    for l in &sob.levels {
        println!("sobolev     {}³: max constant {:.4e}", l.resolution, l.max_constant);
    }
    println!("sobolev drift {:.4}", sob.drift);
    let cac = caccioppoli_report(&op, &res, 0.5, 1.0, 42)?;
    for l in &cac.levels {
        println!("caccioppoli {}³: max constant {:.4e}", l.resolution, l.max_constant);
    }
    println!("caccioppoli drift {:.4}", cac.drift);
    Ok(())
}
