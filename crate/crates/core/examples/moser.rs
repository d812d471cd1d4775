//! Moser iteration on the solution family at 64³, for p = 1 and p = −1.
//!
//! `cargo run --release --example moser`

use kolmo::config::ExperimentConfig;
use kolmo::experiment::moser_blocks;
use kolmo::OperatorSpec;

fn main() -> kolmo::Result<()> {
    let op = OperatorSpec::langevin();
    let mut cfg = ExperimentConfig::langevin();
    cfg.resolutions = vec![64];
    cfg.p = vec![1.0, -1.0];
    for one_sided in [false, true] {
        let (blocks, skipped) = moser_blocks(&cfg, &op, one_sided)?;
        for b in &blocks {
            for run in &b.runs {
                let main = run.bracketed.as_ref().map_or(&run.raw, |br| &br.report);
                println!(
                    "{}p = {:>4}: levels {} gap {:.4}  log C {:.3}  sweep exponent {:.3}  verdict {}",
                    if one_sided { "one-sided " } else { "two-sided " },
                    run.p,
                    main.schedule.n_max + 1,
                    main.max_deepest_level_gap,
                    main.log_fitted_constant,
                    run.sweep.max_exponent,
                    run.verdict
                );
            }
        }
        if !skipped.is_empty() {
            println!("skipped resolutions {skipped:?}");
        }
    }
    Ok(())
}
