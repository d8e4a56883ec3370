//! Trains the full persona model on a simulated world, evaluates it on
//! unseen users, and round-trips the checkpoint.
//!
//!     cargo run --release --example train_and_eval -- [KEY=VALUE ...]
//!
//! Keys are dotted config keys, e.g. `train.epochs=30 world.seed=2`.

use std::error::Error;

use persona_vq::config::RunConfig;
use persona_vq::eval::{evaluate, render_table};
use persona_vq::reward::{continue_training, Model};
use persona_vq::simulator::{bayes_accuracy, generate};

fn main() -> Result<(), Box<dyn Error>> {
    let mut cfg = RunConfig::default();
    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').ok_or("arguments are KEY=VALUE")?;
        cfg.apply_override(k, v)?;
    }
    cfg.validate()?;

    let world = generate(&cfg.world)?;
    let model = Model::init(&world.train, &cfg.train)?;
    println!(
        "{} parameters, {} codes of dim {}",
        model.num_params(),
        model.codebook.size(),
        model.persona_dim()
    );
    let model = continue_training(model, &world.train, Some(&world.validation), cfg.train.epochs, |m| {
        if m.epoch % 10 == 0 {
            println!(
                "epoch {:>3}  nll {:.4}  commit {:.4}  train {:.4}  val {:.4}",
                m.epoch,
                m.nll,
                m.commit_loss,
                m.train_acc,
                m.val_acc.unwrap_or(f64::NAN)
            );
        }
    })?;

    let report = evaluate(&model, &world.test)?;
    print!("{}", render_table(std::slice::from_ref(&report)));
    let bayes = bayes_accuracy(&world.truth, &world.test)?;
    println!("bayes {bayes:.4}, model reaches {:.1}% of it", 100.0 * report.accuracy / bayes);

    let path = std::env::temp_dir().join("persona_vq_example.epck");
    model.save(&path)?;
    let back = Model::load(&path)?;
    assert_eq!(evaluate(&back, &world.test)?, report);
    println!("checkpoint {} reloads to the same report", path.display());
    Ok(())
}
