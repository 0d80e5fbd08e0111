use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::pattern::TetrominoKind;
use crate::error::{Error, Result};

/// How the class-conditional signal enters a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Additive T (class 0) or L (class 1) at fixed positions.
    Lin,
    /// Multiplicative T or L at fixed positions.
    Mult,
    /// Additive T or L under a random rotation and translation.
    Rigid,
    /// Both shapes in every sample; the class is the sign agreement.
    Xor,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Lin,
        ScenarioKind::Mult,
        ScenarioKind::Rigid,
        ScenarioKind::Xor,
    ];

    /// Name used in dataset directory names.
    pub fn dir_name(self) -> &'static str {
        match self {
            ScenarioKind::Lin => "linear",
            ScenarioKind::Mult => "multiplicative",
            ScenarioKind::Rigid => "translations_rotations",
            ScenarioKind::Xor => "xor",
        }
    }

    pub fn is_multiplicative(self) -> bool {
        self == ScenarioKind::Mult
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioKind::Lin => "LIN",
            ScenarioKind::Mult => "MULT",
            ScenarioKind::Rigid => "RIGID",
            ScenarioKind::Xor => "XOR",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundKind {
    /// i.i.d. standard normal pixels.
    White,
    /// White noise blurred with a Gaussian.
    Corr,
    /// Grayscale natural images from a user-supplied directory.
    Imagenet,
}

impl BackgroundKind {
    pub fn dir_name(self) -> &'static str {
        match self {
            BackgroundKind::White => "white",
            BackgroundKind::Corr => "correlated",
            BackgroundKind::Imagenet => "imagenet",
        }
    }
}

impl fmt::Display for BackgroundKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            BackgroundKind::White => "WHITE",
            BackgroundKind::Corr => "CORR",
            BackgroundKind::Imagenet => "IMAGENET",
        };
        f.write_str(s)
    }
}

/// Complete recipe for one dataset. Generation is a pure function of this
/// value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: ScenarioKind,
    pub background: BackgroundKind,
    /// Pixels per image edge.
    pub side: usize,
    /// Pixels per tetromino block edge.
    pub pattern_thickness: usize,
    /// Signal weight in `[0, 1]`.
    pub alpha: f64,
    /// Gaussian smoothing of the signal pattern; 0 disables.
    pub sigma_pattern: f64,
    /// Gaussian smoothing of the noise (CORR only).
    pub sigma_background: f64,
    pub n_samples: usize,
    /// Train / validation / test fractions.
    pub split: [f64; 3],
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_dir: Option<PathBuf>,
}

impl ScenarioSpec {
    /// The small benchmark: 8x8 images, 1-px blocks, no pattern smoothing,
    /// CORR blur of 3 px, N = 10,000 split 80/10/10.
    pub fn small(scenario: ScenarioKind, background: BackgroundKind, alpha: f64, seed: u64) -> Self {
        ScenarioSpec {
            scenario,
            background,
            side: 8,
            pattern_thickness: 1,
            alpha,
            sigma_pattern: 0.0,
            sigma_background: 3.0,
            n_samples: 10_000,
            split: [0.8, 0.1, 0.1],
            seed,
            image_dir: None,
        }
    }

    /// The full benchmark: 64x64 images, 8-px blocks (4-px for RIGID),
    /// pattern blur 1.5, CORR blur 10, N = 40,000 split 90/5/5.
    pub fn large(scenario: ScenarioKind, background: BackgroundKind, alpha: f64, seed: u64) -> Self {
        ScenarioSpec {
            scenario,
            background,
            side: 64,
            pattern_thickness: if scenario == ScenarioKind::Rigid { 4 } else { 8 },
            alpha,
            sigma_pattern: 1.5,
            sigma_background: 10.0,
            n_samples: 40_000,
            split: [0.9, 0.05, 0.05],
            seed,
            image_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if self.sigma_pattern < 0.0 || self.sigma_background < 0.0 {
            return bad("smoothing sigmas must be non-negative".into());
        }
        if self.n_samples < 2 {
            return bad(format!("need at least 2 samples, got {}", self.n_samples));
        }
        if self.split.iter().any(|f| *f < 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {:?} must be non-negative and sum to 1", self.split));
        }
        if self.pattern_thickness == 0 {
            return bad("pattern thickness must be positive".into());
        }
        if self.background == BackgroundKind::Imagenet && self.image_dir.is_none() {
            return bad("IMAGENET backgrounds need an image_dir".into());
        }
        // the static layout must fit; RIGID needs any placement to exist
        if self.scenario == ScenarioKind::Rigid {
            if 3 * self.pattern_thickness > self.side {
                return bad(format!(
                    "{}px blocks do not fit a {}px image under rotation",
                    self.pattern_thickness, self.side
                ));
            }
        } else {
            StaticLayout::new(self.side, self.pattern_thickness)?;
        }
        Ok(())
    }

    /// `{scenario}_{J}d{K}p_{alpha}_{background}`, with `J = side / 8`.
    pub fn dataset_name(&self) -> String {
        format!(
            "{}_{}d{}p_{}_{}",
            self.scenario.dir_name(),
            (self.side / 8).max(1),
            self.pattern_thickness,
            self.alpha,
            self.background.dir_name()
        )
    }

    /// Split sizes `(train, val, test)`; test absorbs rounding.
    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let n = self.n_samples;
        let train = ((self.split[0] * n as f64).round() as usize).min(n);
        let val = ((self.split[1] * n as f64).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

/// Fixed pattern positions for the LIN, MULT and XOR scenarios: the T
/// sits one block in from the top-left corner, the L one block in from the
/// bottom-right corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticLayout {
    pub t_position: (usize, usize),
    pub l_position: (usize, usize),
}

impl StaticLayout {
    pub fn new(side: usize, thickness: usize) -> Result<Self> {
        let (t_rows, t_cols) = TetrominoKind::T.extent(0);
        let (l_rows, l_cols) = TetrominoKind::L.extent(0);
        let t_position = (thickness, thickness);
        let fits = side >= thickness * (l_rows + 1) && side >= thickness * (l_cols + 1);
        if !fits {
            return Err(Error::InvalidArgument(format!(
                "{thickness}px blocks leave no inset layout on a {side}px image"
            )));
        }
        let l_position = (
            side - thickness - l_rows * thickness,
            side - thickness - l_cols * thickness,
        );
        let t_end = (t_position.0 + t_rows * thickness, t_position.1 + t_cols * thickness);
        let overlap = l_position.0 < t_end.0 && l_position.1 < t_end.1;
        if overlap || t_end.0 > side || t_end.1 > side {
            return Err(Error::InvalidArgument(format!(
                "{thickness}px T and L patterns collide on a {side}px image"
            )));
        }
        Ok(StaticLayout {
            t_position,
            l_position,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_names() {
        let mut spec = ScenarioSpec::large(ScenarioKind::Lin, BackgroundKind::White, 0.03, 0);
        assert_eq!(spec.dataset_name(), "linear_8d8p_0.03_white");
        spec.scenario = ScenarioKind::Rigid;
        spec.pattern_thickness = 4;
        spec.background = BackgroundKind::Corr;
        spec.alpha = 0.375;
        assert_eq!(spec.dataset_name(), "translations_rotations_8d4p_0.375_correlated");
        let small = ScenarioSpec::small(ScenarioKind::Xor, BackgroundKind::Corr, 0.15, 0);
        assert_eq!(small.dataset_name(), "xor_1d1p_0.15_correlated");
    }

    #[test]
    fn split_sizes_preserve_total() {
        let spec = ScenarioSpec::small(ScenarioKind::Lin, BackgroundKind::White, 0.18, 0);
        assert_eq!(spec.split_sizes(), (8_000, 1_000, 1_000));
        let spec = ScenarioSpec::large(ScenarioKind::Lin, BackgroundKind::White, 0.03, 0);
        assert_eq!(spec.split_sizes(), (36_000, 2_000, 2_000));
        let mut odd = spec.clone();
        odd.n_samples = 101;
        let (a, b, c) = odd.split_sizes();
        assert_eq!(a + b + c, 101);
    }

    #[test]
    fn layouts() {
        let small = StaticLayout::new(8, 1).unwrap();
        assert_eq!(small.t_position, (1, 1));
        assert_eq!(small.l_position, (4, 5));
        let large = StaticLayout::new(64, 8).unwrap();
        assert_eq!(large.l_position, (32, 40));
        assert!(StaticLayout::new(8, 4).is_err());
    }

    #[test]
    fn validation() {
        let mut spec = ScenarioSpec::small(ScenarioKind::Lin, BackgroundKind::White, 0.5, 0);
        assert!(spec.validate().is_ok());
        spec.alpha = 1.5;
        assert!(spec.validate().is_err());
        spec.alpha = 0.5;
        spec.split = [0.5, 0.5, 0.5];
        assert!(spec.validate().is_err());
        spec.split = [0.8, 0.1, 0.1];
        spec.background = BackgroundKind::Imagenet;
        assert!(spec.validate().is_err());
    }
}
