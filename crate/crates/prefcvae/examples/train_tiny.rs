//! Train a small model for a few epochs on in-memory scenes and watch the
//! loss fall. Runs in seconds; the full pipeline lives in the `prefcvae`
//! binary.

use prefcvae::scenegen::{synth_scene, GenConfig, Scene, Split};
use prefcvae::trainer::{train, TrainError};
use prefcvae::{ModelConfig, TrainConfig};

fn scenes(cfg: &GenConfig, n: usize, split: Split) -> Vec<Scene> {
    let base = cfg.id_range(split).start;
    (0..n as u64).map(|i| synth_scene(cfg, base + i, split)).collect()
}

fn main() -> Result<(), TrainError> {
    let gen = GenConfig { seed: 3, ..GenConfig::default() };
    let train_scenes = scenes(&gen, 80, Split::Train);
    let val_scenes = scenes(&gen, 20, Split::Val);

    let cfg = TrainConfig {
        epochs: 5,
        model: ModelConfig {
            hidden: 16,
            depth: 2,
            pool_dim: 8,
            future_dim: 8,
            decoder_hidden: 16,
            decoder_depth: 1,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    };

    let outcome = train(&train_scenes, &val_scenes, &cfg, 1)?;
    println!("epoch  base-loss  pref-loss  val-loss");
    for e in &outcome.log {
        println!(
            "{:>5}  {:>9.4}  {:>9.4}  {:>8.4}",
            e.epoch, e.base_loss, e.pref_loss, e.val_loss
        );
    }
    println!(
        "best epoch {} (val {:.4}), gate on {:.0}% of steps, {} skipped",
        outcome.best_epoch,
        outcome.log[outcome.best_epoch - 1].val_loss,
        100.0 * outcome.gate_fraction,
        outcome.skipped_steps,
    );
    let first = outcome.log.first().unwrap().val_loss;
    let last = outcome.log.last().unwrap().val_loss;
    assert!(last < first, "validation loss should improve on this toy run");
    Ok(())
}
