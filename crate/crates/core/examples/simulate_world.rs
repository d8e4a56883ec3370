//! Generates a synthetic preference world, writes it to disk, reads it back
//! and reports how learnable it is.
//!
//!     cargo run --release --example simulate_world -- [DIR] [world.KEY=VALUE ...]

use std::error::Error;
use std::path::PathBuf;

use persona_vq::config::RunConfig;
use persona_vq::data::{split_disjointness_check, Split};
use persona_vq::simulator::{bayes_accuracy, generate, World};

fn main() -> Result<(), Box<dyn Error>> {
    let mut cfg = RunConfig::default();
    let mut dir = None;
    for arg in std::env::args().skip(1) {
        match arg.split_once('=') {
            Some((k, v)) => cfg.apply_override(k, v)?,
            None => dir = Some(PathBuf::from(arg)),
        }
    }
    cfg.world.validate()?;

    let world = generate(&cfg.world)?;
    println!(
        "{} prototypes, closest pair {:.3} apart",
        world.truth.prototypes.rows(),
        world.truth.min_prototype_distance()
    );
    for split in [Split::Train, Split::Validation, Split::Test] {
        let ds = world.split(split);
        let history: usize = ds.users().map(|u| u.history.len()).sum();
        println!(
            "{:<10} {:>4} users {:>6} history {:>6} current  bayes {:.4}",
            split.as_str(),
            ds.num_users(),
            history,
            ds.num_current(),
            bayes_accuracy(&world.truth, ds)?
        );
    }
    let multimodal = world.truth.users.values().filter(|p| p.len() > 1).count();
    println!("{multimodal} users mix two prototypes");

    let Some(dir) = dir else {
        return Ok(());
    };
    world.write(&dir)?;
    let back = World::read(&dir)?;
    let violations = split_disjointness_check(&back.train, &back.validation, &back.test);
    println!("wrote {} ({} disjointness violations)", dir.display(), violations.len());
    assert_eq!(back.test.feedback_jsonl(), world.test.feedback_jsonl());
    Ok(())
}
