use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{BackgroundKind, ScenarioKind, ScenarioSpec};
use crate::error::{Error, Result};
use crate::explain::{Method, MethodParams};
use crate::models::{ArchKind, TrainingConfig, ACCURACY_THRESHOLD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Emd,
    Ima,
    Precision,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Emd, MetricKind::Ima, MetricKind::Precision];

    pub fn id(self) -> &'static str {
        match self {
            MetricKind::Emd => "emd",
            MetricKind::Ima => "ima",
            MetricKind::Precision => "precision",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizePreset {
    /// 8x8 images, N = 10,000.
    #[default]
    Small,
    /// 64x64 images, N = 40,000.
    Large,
}

/// One dataset to benchmark. Unset fields take the preset's values; an
/// unset `alpha` is chosen by calibration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub scenario: ScenarioKind,
    pub background: BackgroundKind,
    #[serde(default)]
    pub size: SizePreset,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub split: Option<[f64; 3]>,
    #[serde(default)]
    pub image_dir: Option<PathBuf>,
    /// Defaults to the global seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

impl DatasetConfig {
    /// The generation recipe with `alpha` filled in.
    pub fn spec(&self, alpha: f64, global_seed: u64) -> ScenarioSpec {
        let seed = self.seed.unwrap_or(global_seed);
        let mut spec = match self.size {
            SizePreset::Small => ScenarioSpec::small(self.scenario, self.background, alpha, seed),
            SizePreset::Large => ScenarioSpec::large(self.scenario, self.background, alpha, seed),
        };
        if let Some(n) = self.n_samples {
            spec.n_samples = n;
        }
        if let Some(split) = self.split {
            spec.split = split;
        }
        spec.image_dir = self.image_dir.clone();
        spec
    }

    pub fn label(&self) -> String {
        let side = match self.size {
            SizePreset::Small => 8,
            SizePreset::Large => 64,
        };
        format!("{}_{}_{side}px", self.scenario.dir_name(), self.background.dir_name())
    }
}

fn default_trials() -> usize {
    10
}

fn default_threshold() -> f64 {
    ACCURACY_THRESHOLD
}

/// Signal-to-noise sweep for datasets without a fixed alpha.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub arch: ArchKind,
    /// Strictly ascending candidate alphas.
    pub alphas: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Overrides the dataset size during calibration only.
    #[serde(default)]
    pub n_samples: Option<usize>,
    #[serde(default)]
    pub epochs: Option<usize>,
}

fn default_root() -> PathBuf {
    PathBuf::from("bench-out")
}

fn default_trainings() -> usize {
    5
}

fn default_metrics() -> Vec<MetricKind> {
    MetricKind::ALL.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_root")]
    pub output_root: PathBuf,
    pub datasets: Vec<DatasetConfig>,
    pub architectures: Vec<ArchKind>,
    /// Models trained per (dataset, architecture).
    #[serde(default = "default_trainings")]
    pub trainings: usize,
    /// Overrides the number of training epochs.
    #[serde(default)]
    pub epochs: Option<usize>,
    pub methods: Vec<String>,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    /// Caps the explained samples per dataset.
    #[serde(default)]
    pub max_samples: Option<usize>,
    #[serde(default)]
    pub method_params: MethodParams,
    #[serde(default)]
    pub calibration: Option<CalibrationConfig>,
    /// LLR cannot solve the non-linear scenarios and is skipped for them
    /// unless this is set.
    #[serde(default)]
    pub llr_on_nonlinear: bool,
}

impl BenchmarkConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: BenchmarkConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        BenchmarkConfig::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Checks every id and recipe before any compute happens.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.datasets.is_empty() {
            return bad("no datasets configured".into());
        }
        if self.architectures.is_empty() {
            return bad("no architectures configured".into());
        }
        if self.methods.is_empty() {
            return bad("no methods configured".into());
        }
        if self.trainings == 0 {
            return bad("trainings must be at least 1".into());
        }
        if self.epochs == Some(0) || self.max_samples == Some(0) {
            return bad("epochs and max_samples must be positive when set".into());
        }
        for id in &self.methods {
            Method::parse(id).map_err(|e| Error::Config(e.to_string()))?;
        }
        let mut labels = std::collections::BTreeSet::new();
        for d in &self.datasets {
            let alpha = match (d.alpha, &self.calibration) {
                (Some(a), _) => a,
                (None, Some(c)) => *c.alphas.first().unwrap_or(&0.5),
                (None, None) => return bad(format!("dataset {} has no alpha and no calibration section", d.label())),
            };
            d.spec(alpha, self.seed)
                .validate()
                .map_err(|e| Error::Config(format!("dataset {}: {e}", d.label())))?;
            if !labels.insert((d.label(), d.alpha.map(f64::to_bits))) {
                return bad(format!("dataset {} is listed twice", d.label()));
            }
        }
        if let Some(c) = &self.calibration {
            if c.alphas.is_empty() || c.alphas.windows(2).any(|w| w[0] >= w[1]) {
                return bad("calibration alphas must be nonempty and strictly ascending".into());
            }
            if c.trials == 0 || !(0.0..=1.0).contains(&c.threshold) {
                return bad("calibration needs trials >= 1 and a threshold in [0, 1]".into());
            }
        }
        Ok(())
    }

    pub fn parsed_methods(&self) -> Vec<Method> {
        self.methods.iter().map(|id| Method::parse(id).expect("validated")).collect()
    }

    /// Architectures trained on a dataset of this scenario.
    pub fn architectures_for(&self, scenario: ScenarioKind) -> Vec<ArchKind> {
        self.architectures
            .iter()
            .copied()
            .filter(|&a| a != ArchKind::Llr || scenario == ScenarioKind::Lin || self.llr_on_nonlinear)
            .collect()
    }

    pub fn training(&self, scenario: ScenarioKind, side: usize, model_seed: u64) -> TrainingConfig {
        let mut cfg = TrainingConfig::paper(scenario, side, model_seed);
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "datasets": [{"scenario": "lin", "background": "white", "alpha": 0.18}],
        "architectures": ["llr"],
        "methods": ["saliency", "sobel"]
    }"#;

    #[test]
    fn defaults_fill_in() {
        let c = BenchmarkConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.trainings, 5);
        assert_eq!(c.metrics, MetricKind::ALL.to_vec());
        assert_eq!(c.method_params, MethodParams::default());
        let spec = c.datasets[0].spec(0.18, 3);
        assert_eq!((spec.side, spec.n_samples, spec.seed), (8, 10_000, 3));
    }

    #[test]
    fn unknown_ids_are_rejected() {
        let bad_method = MINIMAL.replace("\"sobel\"", "\"gradcam\"");
        let err = BenchmarkConfig::from_json(&bad_method).unwrap_err().to_string();
        assert!(err.contains("gradcam") && err.contains("integrated_gradients"), "{err}");
        let bad_arch = MINIMAL.replace("[\"llr\"]", "[\"resnet\"]");
        assert!(matches!(BenchmarkConfig::from_json(&bad_arch), Err(Error::Config(_))));
        let extra = MINIMAL.replace("\"architectures\"", "\"archs\": 1, \"architectures\"");
        assert!(BenchmarkConfig::from_json(&extra).is_err());
    }

    #[test]
    fn missing_alpha_needs_calibration() {
        let no_alpha = MINIMAL.replace(", \"alpha\": 0.18", "");
        assert!(BenchmarkConfig::from_json(&no_alpha).is_err());
        let with_cal = no_alpha.replace(
            "\"methods\"",
            "\"calibration\": {\"arch\": \"llr\", \"alphas\": [0.1, 0.2]}, \"methods\"",
        );
        let c = BenchmarkConfig::from_json(&with_cal).unwrap();
        assert_eq!(c.calibration.unwrap().trials, 10);
    }

    #[test]
    fn llr_skips_nonlinear_scenarios() {
        let mut c = BenchmarkConfig::from_json(MINIMAL).unwrap();
        c.architectures = ArchKind::ALL.to_vec();
        assert_eq!(c.architectures_for(ScenarioKind::Xor), [ArchKind::Mlp, ArchKind::Cnn]);
        assert_eq!(c.architectures_for(ScenarioKind::Lin).len(), 3);
        c.llr_on_nonlinear = true;
        assert_eq!(c.architectures_for(ScenarioKind::Mult).len(), 3);
    }
}
