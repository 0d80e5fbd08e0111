//! Trains a linear model, explains one test sample with every registered
//! method, and scores each map against the ground-truth mask.
//!
//! ```text
//! cargo run --release --example explain_sample -- [sample-index]
//! ```

use attribution_bench::datagen::{build_dataset, BackgroundKind, ScenarioKind, ScenarioSpec};
use attribution_bench::explain::{explain_batch, Method, MethodParams};
use attribution_bench::metrics::score_map;
use attribution_bench::models::{train, ArchKind, ArchitectureSpec, TrainingConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let index: usize = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let mut spec = ScenarioSpec::small(ScenarioKind::Lin, BackgroundKind::White, 0.3, 1);
    spec.n_samples = 2000;
    let data = build_dataset(&spec)?;
    let mut config = TrainingConfig::paper(ScenarioKind::Lin, 8, 1);
    config.epochs = 60;
    let model = train(&ArchitectureSpec::new(ArchKind::Llr, 8), &data, &config)?;
    println!("{}: LLR test accuracy {:.1}%", data.name(), 100.0 * model.report.test_accuracy);

    let sample = data.test.get(index).ok_or("sample index out of range")?;
    let params = MethodParams::default();
    let maps = explain_batch(&model.network, &Method::ALL, &[(index, sample)], &data.test, &params, 7)?;
    println!("\n{:<22} {:>6} {:>6} {:>9}", "method", "emd", "ima", "precision");
    for map in &maps {
        let r = score_map(map, &sample.mask)?;
        let flag = if r.degenerate { "  (zero map)" } else { "" };
        println!("{:<22} {:>6.3} {:>6.3} {:>9.3}{flag}", r.method, r.emd, r.ima, r.precision);
    }
    Ok(())
}
