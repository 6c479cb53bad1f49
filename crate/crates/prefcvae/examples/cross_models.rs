//! Cross-test two independently trained models: encode velocity-scaled
//! futures with one model's posterior, decode with the other, and check the
//! decoded speeds still follow the scales. Models that learned the same
//! latent convention stay consistent across the swap.

use prefcvae::evalsuite::cross_test;
use prefcvae::scenegen::{synth_scene, GenConfig, Scene, Split};
use prefcvae::trainer::train;
use prefcvae::{ModelConfig, PredictorModel, TrainConfig};

fn scenes(cfg: &GenConfig, n: usize, split: Split) -> Vec<Scene> {
    let base = cfg.id_range(split).start;
    (0..n as u64).map(|i| synth_scene(cfg, base + i, split)).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gen = GenConfig { seed: 21, ..GenConfig::default() };
    let train_scenes = scenes(&gen, 100, Split::Train);
    let val_scenes = scenes(&gen, 20, Split::Val);
    let test_scenes = scenes(&gen, 25, Split::Test);

    let cfg = TrainConfig {
        epochs: 6,
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

    let a = train(&train_scenes, &val_scenes, &cfg, 1)?.best_model;
    let b = train(&train_scenes, &val_scenes, &cfg, 2)?.best_model;
    let models: [(&str, &PredictorModel); 2] = [("A", &a), ("B", &b)];

    println!("agent-wise VR (%), encoders down, decoders across:");
    print!("{:>4}", "");
    for (name, _) in &models {
        print!("{name:>9}");
    }
    println!();
    for (enc_name, enc) in &models {
        print!("{enc_name:>4}");
        for (_, dec) in &models {
            let r = cross_test(enc, dec, &test_scenes, 0)?;
            print!("{:>9.3}", r.aw_vr);
        }
        println!();
    }
    Ok(())
}
