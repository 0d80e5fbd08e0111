//! Runs the whole benchmark from a JSON config through the library API, then
//! reruns it to show that cached artifacts are reused.
//!
//! ```text
//! cargo run --release --example benchmark_pipeline -- [config.json] [out-dir]
//! ```

use std::time::Instant;

use attribution_bench::harness::{BenchmarkConfig, Pipeline, Stage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let config_path = args.first().map(String::as_str).unwrap_or("configs/smoke.json");
    let mut config = BenchmarkConfig::load(config_path.as_ref())?;
    if let Some(out) = args.get(1) {
        config.output_root = out.into();
    }
    let pipeline = Pipeline::new(config)?.verbose(true);

    let start = Instant::now();
    let outcome = pipeline.run(Stage::Report)?;
    println!("first run: {:.1}s, {} failures", start.elapsed().as_secs_f64(), outcome.failures.len());

    let start = Instant::now();
    let again = pipeline.run(Stage::Report)?;
    println!("rerun: {:.1}s", start.elapsed().as_secs_f64());

    let report = again.report.ok_or("report stage did not run")?;
    for cell in report.cells.iter().filter(|c| c.metric.id() == "emd") {
        match &cell.stats {
            Some(s) => println!(
                "{:<28} {:<4} {:<22} median {:.3}  IQR [{:.3}, {:.3}]  n={}",
                cell.dataset, cell.arch, cell.method, s.median, s.q1, s.q3, s.n
            ),
            None => println!("{:<28} {:<4} {:<22} missing", cell.dataset, cell.arch, cell.method),
        }
    }
    println!("report written to {}", pipeline.report_dir().display());
    Ok(())
}
