//! Fine-tunes the projection on 10 shots per class of a benchmark whose
//! visual prototypes are rotated 30 degrees away from their concepts.
//!
//! ```text
//! cargo run --release --example few_shot_finetune -- [epochs]
//! ```

use runa::harness::eval::{run_finetune, EvalSettings, FinetuneSettings};
use runa::harness::report::format_table;
use runa::harness::synth::{generate_synthetic, presets};
use runa::scoring::ScoreMethod;
use runa::train::{FewShotConfig, TrainConfig};

fn main() -> runa::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(50);
    let data = generate_synthetic(&presets::finetune())?;
    let settings = FinetuneSettings {
        few_shot: FewShotConfig {
            shots_per_class: 10,
            seed: 1,
        },
        train: TrainConfig {
            epochs,
            ..TrainConfig::default()
        },
        eval: EvalSettings::new(ScoreMethod::MaxSim),
        all_shots: false,
    };
    let out = run_finetune(&data.train_pool, &data.eval, &data.bank, &settings)?;

    println!("{} shots, {epochs} epochs", out.shots.len());
    for (epoch, loss) in out.training.loss_history.iter().enumerate().step_by(10) {
        println!("  epoch {:>3}  loss {loss:.3}", epoch + 1);
    }
    println!(
        "  loss {:.3} -> {:.3}",
        out.training.initial_loss,
        out.training.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    println!("\nidentity projection");
    print!("{}", format_table(&[out.before]));
    println!("fine-tuned projection");
    print!("{}", format_table(&[out.after]));
    Ok(())
}
