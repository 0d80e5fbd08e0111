//! Generates a benchmark dataset, saves it, and draws a few samples with
//! their ground-truth masks in the terminal.
//!
//! ```text
//! cargo run --release --example generate_dataset -- [lin|mult|rigid|xor] [white|corr] [alpha] [out-dir]
//! ```

use std::env;

use attribution_bench::datagen::{build_dataset, load_dataset, save_dataset, BackgroundKind, LabeledSample, ScenarioKind, ScenarioSpec};

fn shade(v: f64, max: f64) -> char {
    let ramp = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    let t = (v.abs() / max).clamp(0.0, 1.0);
    ramp[((t * (ramp.len() - 1) as f64).round()) as usize]
}

fn draw(s: &LabeledSample) {
    let side = s.image.side();
    let max = s.image.max_abs().max(1e-12);
    for r in 0..side {
        let pixels: String = (0..side).map(|c| shade(s.image.get(r, c), max)).collect();
        let mask: String = (0..side).map(|c| if s.mask.get(r, c) { '#' } else { '.' }).collect();
        println!("  {pixels}    {mask}");
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let scenario: ScenarioKind = serde_json::from_value(arg(0, "lin").into())?;
    let background: BackgroundKind = serde_json::from_value(arg(1, "white").into())?;
    let alpha: f64 = arg(2, "0.5").parse()?;
    let out = arg(3, "bench-out/example-dataset");

    let mut spec = ScenarioSpec::small(scenario, background, alpha, 42);
    spec.n_samples = 1000;
    let data = build_dataset(&spec)?;
    let dir = std::path::Path::new(&out).join(data.name());
    save_dataset(&data, &dir)?;
    let reloaded = load_dataset(&dir)?;
    assert_eq!(reloaded, data, "round trip through disk");

    println!("{} -> {}", data.name(), dir.display());
    println!("train/val/test: {}/{}/{}", data.train.len(), data.val.len(), data.test.len());
    let ones = data.train.iter().filter(|s| s.label == 1).count();
    println!("class balance (train): {ones} of {} are class 1", data.train.len());
    for s in data.test.iter().take(3) {
        println!("\nlabel {}  |image|  mask ({} pixels)", s.label, s.mask.count());
        draw(s);
    }
    Ok(())
}
