//! Trains every ablation variant on the same world and prints them side by
//! side: the full model, continuous personas, chosen-response rationales,
//! and no persona at all.
//!
//!     cargo run --release --example ablations -- [KEY=VALUE ...]

use std::error::Error;

use persona_vq::config::RunConfig;
use persona_vq::eval::{render_table, run_ablation};
use persona_vq::simulator::{bayes_accuracy, generate};

fn main() -> Result<(), Box<dyn Error>> {
    let mut cfg = RunConfig::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').ok_or("arguments are KEY=VALUE")?;
        cfg.apply_override(k, v)?;
    }
    cfg.validate()?;

    let world = generate(&cfg.world)?;
    let mut reports = Vec::new();
    for &variant in &cfg.eval.variants {
        let (model, report) = run_ablation(variant, &world.train, Some(&world.validation), &world.test, &cfg.train)?;
        println!("{variant}: {:.4} ({} active codes)", report.accuracy, model.codebook.active_codes());
        reports.push(report);
    }
    println!();
    print!("{}", render_table(&reports));
    println!("bayes {:.4}", bayes_accuracy(&world.truth, &world.test)?);
    Ok(())
}
