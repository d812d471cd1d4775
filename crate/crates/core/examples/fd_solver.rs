//! Explicit finite-difference solve of the Langevin operator against the exact kernel translate.
//!
//! `cargo run --release --example fd_solver`

use kolmo::estimates::family::kernel_boundary;
use kolmo::solver::{admissible_dt, fd_solve_cauchy};
use kolmo::{GridSpec, GroupPoint, KernelEvaluator, OperatorSpec};

fn main() -> kolmo::Result<()> {
    let op = OperatorSpec::langevin();
    let ev = KernelEvaluator::from_spec(&op)?;
    let pole = GroupPoint { t: -1.5, ..GroupPoint::origin(2) };
    for res in [16, 32, 64] {
        let spec = GridSpec::uniform(vec![-1.0, -1.0, -1.0], vec![1.0, 1.0, 1.0], res)?;
        let init: Vec<f64> = (0..spec.slice_len())
            .map(|s| ev.gamma(&GroupPoint::from_slice(&spec.spatial_node(s), -1.0)?, &pole))
            .collect::<kolmo::Result<_>>()?;
        let dt = 0.9 * admissible_dt(&op, &spec)?;
        let sol = fd_solve_cauchy(&op, &spec, &init, dt, &kernel_boundary(&op, pole.clone())?)?;
        let mut worst: f64 = 0.0;
        for i in 0..spec.len() {
            let (x, t) = spec.node(i);
            let exact = ev.gamma(&GroupPoint::from_slice(&x, t)?, &pole)?;
            worst = worst.max((sol.solution.values()[i] - exact).abs());
        }
        println!("{res}³: dt {:.2e}, {} steps, max error {worst:.3e}", sol.dt, sol.substeps);
    }
    Ok(())
}
