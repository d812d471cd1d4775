//! Parses a config with rough coefficients and runs the structure and kernel experiments.
//!
//! `cargo run --release --example config_run`

use kolmo::config::load;
use kolmo::experiment::run;

const CONFIG: &str = "
[operator]
preset = langevin
q = 6

[coefficients]
b1 = x1
c = -0.5*abs(sin(3*x1))

[domain]
resolutions = 16, 24

[experiment]
run = structure, kernel
seed = 7
";

fn main() -> kolmo::Result<()> {
    let cfg = load(CONFIG)?;
    let out = std::env::temp_dir().join("kolmo-config-run");
    let report = run(&cfg, &cfg.experiments, &out)?;
    for e in &report.experiments {
        println!("{:<10} {}  artifacts {:?}", e.name, if e.verdict { "PASS" } else { "FAIL" }, e.artifacts);
    }
    println!("report written to {}", out.join("report.json").display());
    Ok(())
}
