//! Sweeps the signal weight and picks the smallest alpha at which a model
//! reaches the accuracy threshold on average.
//!
//! ```text
//! cargo run --release --example snr_calibration -- [llr|mlp|cnn] [lin|mult|rigid|xor] [white|corr]
//! ```

use attribution_bench::datagen::{BackgroundKind, ScenarioKind, ScenarioSpec};
use attribution_bench::models::{alpha_grid, calibrate_snr, ArchKind, TrainingConfig, ACCURACY_THRESHOLD};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let arch = ArchKind::from_id(&arg(0, "llr")).ok_or("architecture must be llr, mlp or cnn")?;
    let scenario: ScenarioKind = serde_json::from_value(arg(1, "lin").into())?;
    let background: BackgroundKind = serde_json::from_value(arg(2, "white").into())?;

    // A reduced sweep: 2,000 samples, 40 epochs, 3 models per alpha.
    let mut template = ScenarioSpec::small(scenario, background, 0.0, 11);
    template.n_samples = 2000;
    let mut training = TrainingConfig::paper(scenario, 8, 11);
    training.epochs = 40;
    let alphas = alpha_grid(0.05, 0.4, 8);
    let result = calibrate_snr(&template, arch, &alphas, 3, ACCURACY_THRESHOLD, &training)?;

    println!("{arch} on {scenario}/{background}, threshold {:.0}%", 100.0 * result.threshold);
    for row in &result.table {
        let marker = if row.alpha == result.chosen_alpha { "  <- chosen" } else { "" };
        println!("  alpha {:.3}  mean accuracy {:.1}%{marker}", row.alpha, 100.0 * row.mean_accuracy);
    }
    Ok(())
}
