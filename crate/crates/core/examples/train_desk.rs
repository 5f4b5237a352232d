//! Trains the desk model for a few hundred steps, saves a checkpoint and
//! reports classification accuracy across thresholds.
//!
//! cargo run --release --example train_desk -- 300 /tmp/desk.ckpt

use std::path::PathBuf;
use std::time::Instant;

use avsep::eval::classification_csv;
use avsep::{evaluate_classification, generate_clips, Result, Split, TrainConfig, Trainer, TAU_SWEEP};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().map_or(300, |s| s.parse().expect("steps"));
    let ckpt = PathBuf::from(args.next().unwrap_or_else(|| "desk.ckpt".into()));
    let cfg = TrainConfig { steps, ..TrainConfig::default() };
    let clips = generate_clips(&cfg.audio(), cfg.arch().frame_size, cfg.classes, &cfg.corpus, cfg.seed)?;

    let mut trainer = Trainer::new(&cfg, &clips)?;
    println!("{} trainable values", trainer.model.store.num_trainable_values());
    let start = Instant::now();
    trainer.run(|r| {
        if r.step % 50 == 0 || r.step + 1 == steps {
            println!(
                "step {:>5}  c_loss {:.3}/{:.3}  sep {:.4}  grad {:.2}  {:.0?}",
                r.step, r.c_loss1, r.c_loss2, r.sep_loss, r.grad_norm, start.elapsed()
            );
        }
    })?;
    trainer.model.save(&ckpt)?;
    println!("saved {}", ckpt.display());

    let acc = evaluate_classification(&trainer.model, &clips, Split::Test, &TAU_SWEEP)?;
    print!("{}", classification_csv(&TAU_SWEEP, &[("desk".into(), acc)]));
    Ok(())
}
