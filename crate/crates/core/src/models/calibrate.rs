use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{ArchKind, ArchitectureSpec};
use super::train::{train, TrainingConfig};
use crate::datagen::{build_dataset, ScenarioSpec};
use crate::error::{Error, Result};

/// The accuracy level a classifier must reach for its scenario to count as
/// solved.
pub const ACCURACY_THRESHOLD: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub alpha: f64,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub arch: ArchKind,
    pub threshold: f64,
    pub chosen_alpha: f64,
    pub table: Vec<CalibrationRow>,
}

/// `count` evenly spaced values from `lo` to `hi` inclusive.
pub fn alpha_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}

/// Smallest alpha whose mean accuracy reaches `threshold`, from
/// `(alpha, mean accuracy)` pairs sorted by alpha.
pub fn select_alpha(table: &[(f64, f64)], threshold: f64) -> Result<f64> {
    table
        .iter()
        .find(|(_, acc)| *acc >= threshold)
        .map(|(alpha, _)| *alpha)
        .ok_or_else(|| Error::CalibrationFailed {
            threshold,
            table: table.to_vec(),
        })
}

/// Trains `trials` models per alpha and picks the smallest alpha whose mean
/// test accuracy reaches `threshold`. Trial `t` draws its dataset with seed
/// `template.seed + t` and its model with seed `config.seed + t`.
pub fn calibrate_snr(
    template: &ScenarioSpec,
    arch: ArchKind,
    alphas: &[f64],
    trials: usize,
    threshold: f64,
    config: &TrainingConfig,
) -> Result<Calibration> {
    if alphas.is_empty() || trials == 0 {
        return Err(Error::InvalidArgument("calibration needs alphas and at least one trial".into()));
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!("alpha grid {alphas:?} is not strictly ascending")));
    }
    let spec = ArchitectureSpec::new(arch, template.side);
    let jobs: Vec<(usize, usize)> = (0..alphas.len()).flat_map(|a| (0..trials).map(move |t| (a, t))).collect();
    let accuracies: Vec<f64> = jobs
        .par_iter()
        .map(|&(a, t)| {
            let mut data_spec = template.clone();
            data_spec.alpha = alphas[a];
            data_spec.seed = template.seed.wrapping_add(t as u64);
            let data = build_dataset(&data_spec)?;
            let mut cfg = config.clone();
            cfg.seed = config.seed.wrapping_add(t as u64);
            Ok(train(&spec, &data, &cfg)?.report.test_accuracy)
        })
        .collect::<Result<_>>()?;
    let table: Vec<CalibrationRow> = alphas
        .iter()
        .enumerate()
        .map(|(a, &alpha)| {
            let accs = accuracies[a * trials..(a + 1) * trials].to_vec();
            let mean = accs.iter().sum::<f64>() / trials as f64;
            CalibrationRow {
                alpha,
                accuracies: accs,
                mean_accuracy: mean,
            }
        })
        .collect();
    let pairs: Vec<(f64, f64)> = table.iter().map(|r| (r.alpha, r.mean_accuracy)).collect();
    let chosen_alpha = select_alpha(&pairs, threshold)?;
    Ok(Calibration {
        arch,
        threshold,
        chosen_alpha,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{BackgroundKind, ScenarioKind};

    #[test]
    fn selection_rule() {
        let table = [(0.1, 0.5), (0.2, 0.7), (0.3, 0.85), (0.4, 0.95)];
        assert_eq!(select_alpha(&table, 0.8).unwrap(), 0.3);
        let all = [(0.1, 0.9), (0.2, 0.95)];
        assert_eq!(select_alpha(&all, 0.8).unwrap(), 0.1);
        match select_alpha(&[(0.1, 0.5)], 0.8) {
            Err(Error::CalibrationFailed { table, .. }) => assert_eq!(table, vec![(0.1, 0.5)]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn grid_spacing() {
        let g = alpha_grid(0.05, 1.0, 20);
        assert_eq!(g.len(), 20);
        assert_eq!(g[0], 0.05);
        assert!((g[19] - 1.0).abs() < 1e-15);
        assert!((g[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn tiny_sweep_picks_a_passing_alpha() {
        let mut template = ScenarioSpec::small(ScenarioKind::Lin, BackgroundKind::White, 0.0, 0);
        template.n_samples = 400;
        let config = TrainingConfig {
            epochs: 10,
            learning_rate: 0.01,
            batch_size: 32,
            seed: 0,
        };
        let cal = calibrate_snr(&template, ArchKind::Llr, &[0.01, 0.9], 2, 0.8, &config).unwrap();
        assert_eq!(cal.chosen_alpha, 0.9);
        assert!(cal.table[0].mean_accuracy < 0.8);
        assert!(calibrate_snr(&template, ArchKind::Llr, &[0.5, 0.2], 1, 0.8, &config).is_err());
    }
}
