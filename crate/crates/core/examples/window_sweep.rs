//! Retrains the full model for several rationale window lengths.
//!
//!     cargo run --release --example window_sweep -- [KEY=VALUE ...]
//!
//! `eval.sweep_sizes=2,5,10,20` picks the lengths.

use std::error::Error;

use persona_vq::config::RunConfig;
use persona_vq::eval::{render_sweep, window_sweep};
use persona_vq::simulator::generate;

fn main() -> Result<(), Box<dyn Error>> {
    let mut cfg = RunConfig::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').ok_or("arguments are KEY=VALUE")?;
        cfg.apply_override(k, v)?;
    }
    cfg.validate()?;

    let world = generate(&cfg.world)?;
    let rows = window_sweep(&cfg.train, &world.train, Some(&world.validation), &world.test, &cfg.eval.sweep_sizes)?;
    print!("{}", render_sweep(&rows));
    let accs: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
    let spread = accs.iter().cloned().fold(f64::MIN, f64::max) - accs.iter().cloned().fold(f64::MAX, f64::min);
    println!("spread {:.2} points", 100.0 * spread);
    Ok(())
}
