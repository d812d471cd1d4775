//! Kalman rank, block structure and the exponents attached to three drift matrices.
//!
//! `cargo run --release --example structure`

use nalgebra::DMatrix;

use kolmo::operator::{detect_block_structure, exponents, kalman_rank};
use kolmo::OperatorSpec;

fn main() -> kolmo::Result<()> {
    let cases = [
        ("langevin", DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]), 1),
        ("chain_3", DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]), 1),
        ("degenerate", DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]), 1),
    ];
    for (name, b, m0) in cases {
        let rank = kalman_rank(&b, m0)?;
        match detect_block_structure(&b, m0) {
            Ok(blocks) => println!("{name:<10} rank {rank}  kappa {}  m {:?}  Q {}", blocks.kappa, blocks.m, blocks.q_dim),
            Err(e) => println!("{name:<10} rank {rank}  rejected: {e}"),
        }
    }
    let ex = OperatorSpec::langevin().exponents()?;
    println!("langevin q = {}: alpha {:.6} beta {:.6} mu {:.6} gamma {:.6}", ex.q, ex.alpha, ex.beta, ex.mu, ex.gamma);
    for q in [4.0, 4.5, 6.0] {
        let e = exponents(q, 4)?;
        println!("q = {q}: alpha {:.4} {} beta {:.4}", e.alpha, if e.alpha > e.beta { ">" } else { "<=" }, e.beta);
    }
    Ok(())
}
