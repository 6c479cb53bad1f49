//! Sweep the semantic latent slot across its grid and watch the decoded
//! average velocity respond. A preference-trained model shows a wide,
//! monotone velocity ramp; an untrained one barely moves.

use prefcvae::evalsuite::{traverse, EvalError, PinMode};
use prefcvae::scenegen::{synth_scene, GenConfig, Scene, Split};
use prefcvae::trainer::train;
use prefcvae::{ModelConfig, PredictorModel, TrainConfig};

fn scenes(cfg: &GenConfig, n: usize, split: Split) -> Vec<Scene> {
    let base = cfg.id_range(split).start;
    (0..n as u64).map(|i| synth_scene(cfg, base + i, split)).collect()
}

fn show(tag: &str, model: &PredictorModel, test: &[Scene]) -> Result<(), EvalError> {
    let t = traverse(model, test, PinMode::AllAgents, 0)?;
    println!("{tag}:");
    println!("  z        {}", t.grid.iter().map(|z| format!("{z:>6.2}")).collect::<String>());
    println!("  vel m/s  {}", t.mean_velocity.iter().map(|v| format!("{v:>6.2}")).collect::<String>());
    println!(
        "  range {:.3} m/s, strictly increasing: {}",
        t.vel_range, t.strictly_increasing
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gen = GenConfig { seed: 5, ..GenConfig::default() };
    let train_scenes = scenes(&gen, 120, Split::Train);
    let val_scenes = scenes(&gen, 24, Split::Val);
    let test_scenes = scenes(&gen, 24, Split::Test);

    let cfg = TrainConfig {
        epochs: 8,
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

    let untrained = PredictorModel::new(cfg.model.clone(), 1)?;
    show("untrained", &untrained, &test_scenes)?;

    let outcome = train(&train_scenes, &val_scenes, &cfg, 1)?;
    show("preference-trained (8 epochs)", &outcome.best_model, &test_scenes)?;
    Ok(())
}
