//! Trains one classifier on a small benchmark dataset and prints its report.
//!
//! ```text
//! cargo run --release --example train_classifier -- [llr|mlp|cnn] [lin|mult|rigid|xor] [white|corr] [alpha] [epochs] [seed]
//! ```

use std::env;
use std::time::Instant;

use attribution_bench::datagen::{build_dataset, BackgroundKind, ScenarioKind, ScenarioSpec};
use attribution_bench::models::{train, ArchKind, ArchitectureSpec, TrainingConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());

    let arch = ArchKind::from_id(&arg(0, "llr")).ok_or("architecture must be llr, mlp or cnn")?;
    let scenario: ScenarioKind = serde_json::from_value(arg(1, "lin").into())?;
    let background: BackgroundKind = serde_json::from_value(arg(2, "white").into())?;
    let alpha: f64 = arg(3, "0.18").parse()?;
    let epochs: usize = arg(4, "500").parse()?;
    let seed: u64 = arg(5, "0").parse()?;

    let spec = ScenarioSpec::small(scenario, background, alpha, seed);
    let data = build_dataset(&spec)?;
    let mut config = TrainingConfig::paper(scenario, spec.side, seed);
    config.epochs = epochs;

    let start = Instant::now();
    let model = train(&ArchitectureSpec::new(arch, spec.side), &data, &config)?;
    let r = &model.report;
    println!("dataset        {}", r.dataset);
    println!("architecture   {arch} ({} parameters)", model.network.parameter_count());
    println!("best epoch     {} of {}", r.best_epoch, epochs);
    println!("best val loss  {:.4}", r.best_val_loss);
    println!("val accuracy   {:.1}%", 100.0 * r.val_accuracy);
    println!("test accuracy  {:.1}%", 100.0 * r.test_accuracy);
    println!("elapsed        {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
