//! Trains a small model and looks inside it: code usage, which codes each
//! test user lands on, and how one user's persona changes their rewards.
//!
//!     cargo run --release --example inspect_codebook -- [KEY=VALUE ...]

use std::error::Error;

use persona_vq::cli::inspect_report;
use persona_vq::config::RunConfig;
use persona_vq::reward::train;
use persona_vq::simulator::generate;

fn main() -> Result<(), Box<dyn Error>> {
    let mut cfg = RunConfig::default();
    cfg.train.codebook_size = 16;
    cfg.train.epochs = 30;
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').ok_or("arguments are KEY=VALUE")?;
        cfg.apply_override(k, v)?;
    }
    cfg.validate()?;

    let world = generate(&cfg.world)?;
    let model = train(&world.train, Some(&world.validation), &cfg.train)?;
    let report = inspect_report(&model, Some(&world.test))?;
    let usage: Vec<u64> = report["usage"]
        .as_array()
        .map(|a| a.iter().filter_map(|v| v.as_u64()).collect())
        .unwrap_or_default();
    println!("test windows per code: {usage:?}");
    println!("{} of {} codes active after training", model.codebook.active_codes(), model.codebook.size());

    // Users sharing a ground-truth prototype should share codes.
    for user in world.test.users().take(8) {
        let state = model.persona_state(&user.history, &world.test)?;
        println!(
            "{} prototypes {:?} codes {:?}",
            user.user_id, world.truth.users[&user.user_id], state.trace.persona.code_indices
        );
    }

    let (a, b) = {
        let mut users = world.test.users();
        (users.next().ok_or("empty test split")?, users.next().ok_or("one test user")?)
    };
    let item = &a.current[0];
    let e = world.test.episode_embedding(&item.episode_id)?;
    let first = world.test.response_embedding(&item.chosen)?;
    let second = world.test.response_embedding(&item.rejected)?;
    for user in [a, b] {
        let persona = model.persona_state(&user.history, &world.test)?.trace.persona;
        println!(
            "P(first preferred) on {} under {}'s persona: {:.3}",
            item.episode_id,
            user.user_id,
            model.pair_prob(&persona, e, first, second)?
        );
    }
    Ok(())
}
