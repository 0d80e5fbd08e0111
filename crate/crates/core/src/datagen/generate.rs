use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::background::BackgroundSampler;
use super::grid::{ImageGrid, Mask};
use super::pattern::{make_pattern, sample_rigid_transform, RigidTransform, TetrominoKind, TetrominoPattern};
use super::scenario::{ScenarioKind, ScenarioSpec, StaticLayout};
use super::smooth::{gaussian_smooth, threshold_support};
use crate::error::{Error, Result};

pub const GENERATOR_VERSION: &str = concat!("attribution-bench-datagen/", env!("CARGO_PKG_VERSION"));

/// Signs of the T and L patterns in an XOR sample. Equal signs are class 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum XorCase {
    #[serde(rename = "++")]
    PlusPlus,
    #[serde(rename = "--")]
    MinusMinus,
    #[serde(rename = "+-")]
    PlusMinus,
    #[serde(rename = "-+")]
    MinusPlus,
}

impl XorCase {
    pub const ALL: [XorCase; 4] = [
        XorCase::PlusPlus,
        XorCase::MinusMinus,
        XorCase::PlusMinus,
        XorCase::MinusPlus,
    ];

    /// `(sign of T, sign of L)`.
    pub fn signs(self) -> (f64, f64) {
        match self {
            XorCase::PlusPlus => (1.0, 1.0),
            XorCase::MinusMinus => (-1.0, -1.0),
            XorCase::PlusMinus => (1.0, -1.0),
            XorCase::MinusPlus => (-1.0, 1.0),
        }
    }

    pub fn label(self) -> u8 {
        match self {
            XorCase::PlusPlus | XorCase::MinusMinus => 0,
            XorCase::PlusMinus | XorCase::MinusPlus => 1,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<XorCase> {
        XorCase::ALL.get(code as usize).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub image: ImageGrid,
    pub label: u8,
    pub mask: Mask,
    pub transform: RigidTransform,
    pub xor_case: Option<XorCase>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator_version: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: ScenarioSpec,
    /// Pattern offsets; `None` for RIGID.
    pub layout: Option<StaticLayout>,
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn name(&self) -> String {
        self.spec.dataset_name()
    }

    pub fn side(&self) -> usize {
        self.spec.side
    }

    pub fn splits(&self) -> [(&'static str, &[LabeledSample]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits one additive sample into its signal `H∘a` (already placed by the
/// pattern's rotation and position, which commutes with the zero-padded
/// blur) and its background component. `alpha` is only checked here: the
/// weighted sum is formed after batch normalization by [`assemble_additive`].
pub fn generate_additive(
    pattern: &ImageGrid,
    background: &ImageGrid,
    alpha: f64,
    sigma_pattern: f64,
) -> Result<(ImageGrid, ImageGrid)> {
    check_alpha(alpha)?;
    if pattern.side() != background.side() {
        return Err(Error::InvalidArgument(format!(
            "pattern side {} differs from background side {}",
            pattern.side(),
            background.side()
        )));
    }
    Ok((gaussian_smooth(pattern, sigma_pattern)?, background.clone()))
}

/// `alpha * signal + (1 - alpha) * noise` on normalized components.
pub fn assemble_additive(signal: &ImageGrid, noise: &ImageGrid, alpha: f64) -> Result<ImageGrid> {
    check_alpha(alpha)?;
    let data = signal
        .data()
        .iter()
        .zip(noise.data())
        .map(|(s, n)| alpha * s + (1.0 - alpha) * n)
        .collect();
    ImageGrid::new(signal.side(), data)
}

/// `(1 - alpha * signal) * noise` elementwise on normalized components.
pub fn generate_multiplicative(signal: &ImageGrid, noise: &ImageGrid, alpha: f64) -> Result<ImageGrid> {
    check_alpha(alpha)?;
    let data = signal
        .data()
        .iter()
        .zip(noise.data())
        .map(|(s, n)| (1.0 - alpha * s) * n)
        .collect();
    ImageGrid::new(signal.side(), data)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")))
    }
}

/// Frobenius norm of the whole batch viewed as one matrix.
pub fn frobenius_norm(batch: &[ImageGrid]) -> f64 {
    batch.iter().map(ImageGrid::sum_squares).sum::<f64>().sqrt()
}

/// Divides every grid by the batch Frobenius norm.
pub fn frobenius_normalize(mut batch: Vec<ImageGrid>) -> Result<Vec<ImageGrid>> {
    let norm = frobenius_norm(&batch);
    if batch.is_empty() || norm == 0.0 {
        return Err(Error::InvalidArgument("cannot normalize an empty or all-zero batch".into()));
    }
    for g in &mut batch {
        g.scale(1.0 / norm);
    }
    Ok(batch)
}

/// Divides every sample by the dataset-wide maximum absolute pixel. Returns
/// the divisor.
pub fn rescale_dataset(samples: &mut [ImageGrid]) -> Result<f64> {
    let max = samples.iter().map(ImageGrid::max_abs).fold(0.0, f64::max);
    if max == 0.0 || !max.is_finite() {
        return Err(Error::InvalidArgument(format!("cannot rescale a dataset with max |x| = {max}")));
    }
    for g in samples.iter_mut() {
        g.scale(1.0 / max);
    }
    Ok(max)
}

/// Ground-truth mask for one sample. `smoothed_signal` is the sample's signal
/// component before normalization; it is only consulted for RIGID.
pub fn build_ground_truth(spec: &ScenarioSpec, smoothed_signal: &ImageGrid) -> Result<Mask> {
    match spec.scenario {
        ScenarioKind::Rigid => threshold_support(smoothed_signal),
        _ => static_mask(spec),
    }
}

/// Union of the thresholded supports of the smoothed T and L at their fixed
/// positions.
pub fn static_mask(spec: &ScenarioSpec) -> Result<Mask> {
    let layout = StaticLayout::new(spec.side, spec.pattern_thickness)?;
    let t = make_pattern(TetrominoKind::T, 0, layout.t_position, spec.pattern_thickness, spec.side)?;
    let l = make_pattern(TetrominoKind::L, 0, layout.l_position, spec.pattern_thickness, spec.side)?;
    let t_support = threshold_support(&gaussian_smooth(&t.grid, spec.sigma_pattern)?)?;
    let l_support = threshold_support(&gaussian_smooth(&l.grid, spec.sigma_pattern)?)?;
    Ok(t_support.union(&l_support))
}

/// Per-sample randomness: one stream for the label, one for the content.
fn sample_rng(seed: u64, index: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * index as u64 + stream);
    rng
}

struct SamplePlan {
    label: u8,
    xor_case: Option<XorCase>,
}

/// Labels are Bernoulli(1/2). XOR cases alternate within each label in sample
/// order, so the four cases are exactly balanced up to label imbalance.
fn plan_samples(spec: &ScenarioSpec) -> Vec<SamplePlan> {
    let mut seen = [0usize; 2];
    (0..spec.n_samples)
        .map(|n| {
            let label = sample_rng(spec.seed, n, 0).random_bool(0.5) as u8;
            let xor_case = (spec.scenario == ScenarioKind::Xor).then(|| {
                let k = seen[label as usize];
                seen[label as usize] += 1;
                match (label, k % 2) {
                    (0, 0) => XorCase::PlusPlus,
                    (0, _) => XorCase::MinusMinus,
                    (_, 0) => XorCase::PlusMinus,
                    _ => XorCase::MinusPlus,
                }
            });
            SamplePlan { label, xor_case }
        })
        .collect()
}

struct Components {
    signal: ImageGrid,
    noise: ImageGrid,
    transform: RigidTransform,
}

struct Generator<'a> {
    spec: &'a ScenarioSpec,
    layout: Option<StaticLayout>,
    static_signals: Option<[ImageGrid; 2]>,
    background: BackgroundSampler,
}

impl<'a> Generator<'a> {
    fn new(spec: &'a ScenarioSpec) -> Result<Self> {
        let (layout, static_signals) = if spec.scenario == ScenarioKind::Rigid {
            (None, None)
        } else {
            let layout = StaticLayout::new(spec.side, spec.pattern_thickness)?;
            let t = make_pattern(TetrominoKind::T, 0, layout.t_position, spec.pattern_thickness, spec.side)?;
            let l = make_pattern(TetrominoKind::L, 0, layout.l_position, spec.pattern_thickness, spec.side)?;
            let signals = [
                gaussian_smooth(&t.grid, spec.sigma_pattern)?,
                gaussian_smooth(&l.grid, spec.sigma_pattern)?,
            ];
            (Some(layout), Some(signals))
        };
        Ok(Generator {
            spec,
            layout,
            static_signals,
            background: BackgroundSampler::new(spec)?,
        })
    }

    /// Unnormalized components of sample `n`. Pure in `(spec, n, plan)`.
    fn components(&self, n: usize, plan: &SamplePlan) -> Result<Components> {
        let spec = self.spec;
        let mut rng = sample_rng(spec.seed, n, 1);
        let kind = if plan.label == 0 { TetrominoKind::T } else { TetrominoKind::L };
        let (signal, transform) = match (spec.scenario, &self.static_signals) {
            (ScenarioKind::Rigid, _) => {
                let tr = sample_rigid_transform(&mut rng, kind, spec.pattern_thickness, spec.side)?;
                let pattern = place(kind, tr, spec)?;
                (gaussian_smooth(&pattern.grid, spec.sigma_pattern)?, tr)
            }
            (ScenarioKind::Xor, Some([t, l])) => {
                let (st, sl) = plan.xor_case.expect("XOR plans carry a case").signs();
                let mut s = t.clone();
                s.scale(st);
                s.add_scaled(l, sl);
                (s, RigidTransform::IDENTITY)
            }
            (_, Some(signals)) => (signals[plan.label as usize].clone(), RigidTransform::IDENTITY),
            _ => unreachable!("static scenarios precompute their signals"),
        };
        let noise = self.background.sample(n, &mut rng)?;
        Ok(Components { signal, noise, transform })
    }
}

fn place(kind: TetrominoKind, tr: RigidTransform, spec: &ScenarioSpec) -> Result<TetrominoPattern> {
    make_pattern(kind, tr.quarter_turns, (tr.row, tr.col), spec.pattern_thickness, spec.side)
}

/// Generates, normalizes, assembles, rescales and splits a dataset.
///
/// The batch norms are found in a first pass that keeps only per-sample sums;
/// the second pass regenerates each sample from its own rng streams and
/// assembles it, so memory holds one copy of the images. Pixels are rounded to
/// 32-bit precision, the on-disk format, so saving is lossless.
pub fn build_dataset(spec: &ScenarioSpec) -> Result<Dataset> {
    spec.validate()?;
    let generator = Generator::new(spec)?;
    let plans = plan_samples(spec);

    let sums: Vec<(f64, f64)> = (0..spec.n_samples)
        .into_par_iter()
        .map(|n| {
            let c = generator.components(n, &plans[n])?;
            Ok((c.signal.sum_squares(), c.noise.sum_squares()))
        })
        .collect::<Result<_>>()?;
    let signal_norm = sums.iter().map(|s| s.0).sum::<f64>().sqrt();
    let noise_norm = sums.iter().map(|s| s.1).sum::<f64>().sqrt();
    if signal_norm == 0.0 || noise_norm == 0.0 {
        return Err(Error::InvalidArgument("signal or background batch is all zero".into()));
    }

    let static_mask = match spec.scenario {
        ScenarioKind::Rigid => None,
        _ => Some(static_mask(spec)?),
    };
    let assembled: Vec<(ImageGrid, Mask, RigidTransform)> = (0..spec.n_samples)
        .into_par_iter()
        .map(|n| {
            let Components {
                mut signal,
                mut noise,
                transform,
            } = generator.components(n, &plans[n])?;
            let mask = match &static_mask {
                Some(m) => m.clone(),
                None => threshold_support(&signal)?,
            };
            signal.scale(1.0 / signal_norm);
            noise.scale(1.0 / noise_norm);
            let image = if spec.scenario.is_multiplicative() {
                generate_multiplicative(&signal, &noise, spec.alpha)?
            } else {
                assemble_additive(&signal, &noise, spec.alpha)?
            };
            Ok((image, mask, transform))
        })
        .collect::<Result<_>>()?;

    let (mut images, rest): (Vec<ImageGrid>, Vec<(Mask, RigidTransform)>) =
        assembled.into_iter().map(|(i, m, t)| (i, (m, t))).unzip();
    rescale_dataset(&mut images)?;
    for g in &mut images {
        for v in g.data_mut() {
            *v = *v as f32 as f64;
        }
    }

    let mut samples = images
        .into_iter()
        .zip(rest)
        .zip(&plans)
        .map(|((image, (mask, transform)), plan)| LabeledSample {
            image,
            label: plan.label,
            mask,
            transform,
            xor_case: plan.xor_case,
        });
    let (n_train, n_val, n_test) = spec.split_sizes();
    let train: Vec<_> = samples.by_ref().take(n_train).collect();
    let val: Vec<_> = samples.by_ref().take(n_val).collect();
    let test: Vec<_> = samples.take(n_test).collect();
    for (name, split) in [("train", &train), ("val", &val), ("test", &test)] {
        let ones = split.iter().filter(|s| s.label == 1).count();
        if ones == 0 || ones == split.len() {
            return Err(Error::InvalidArgument(format!(
                "{name} split of {} samples lacks one of the labels; increase n_samples",
                split.len()
            )));
        }
    }
    Ok(Dataset {
        spec: spec.clone(),
        layout: generator.layout,
        train,
        val,
        test,
        provenance: Provenance {
            generator_version: GENERATOR_VERSION.to_string(),
            seed: spec.seed,
        },
    })
}
