//! Model-agnostic attribution by switching patches between the sample and a
//! baseline.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use super::map::PatchGrid;
use crate::datagen::{ImageGrid, LabeledSample};
use crate::error::{Error, Result};
use crate::models::Classifier;
use crate::tensor::{forward_primitive, Primitive, Tensor};

const EVAL_CHUNK: usize = 512;

/// `logit[target]` for each row of `rows` (row-major, `d` columns).
pub fn target_logits(model: &dyn Classifier, rows: &[f64], d: usize, target: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len() / d);
    for chunk in rows.chunks(EVAL_CHUNK * d) {
        let logits = model.logits(&Tensor::new(vec![chunk.len() / d, d], chunk.to_vec())?)?;
        let k = logits.shape()[1];
        out.extend(logits.data().chunks(k).map(|r| r[target]));
    }
    Ok(out)
}

fn check_inputs(model: &dyn Classifier, x: &ImageGrid, baseline: &ImageGrid, patches: &PatchGrid) -> Result<()> {
    if x.len() != model.input_len() || baseline.len() != x.len() {
        return Err(Error::shape(
            "attribution",
            format!("sample {} / baseline {} pixels for a {}-input model", x.len(), baseline.len(), model.input_len()),
        ));
    }
    if patches.count() * patches.size().pow(2) != x.len() {
        return Err(Error::shape("attribution", "patch grid does not cover the sample"));
    }
    Ok(())
}

/// Mean cross-entropy of `rows` against `labels`.
fn mean_ce(model: &dyn Classifier, rows: &[f64], d: usize, labels: &[usize]) -> Result<f64> {
    let logits = model.logits(&Tensor::new(vec![labels.len(), d], rows.to_vec())?)?;
    Ok(forward_primitive(&Primitive::CrossEntropy(labels.to_vec()), &[&logits])?.data()[0])
}

/// Increase of the batch cross-entropy when one patch is shuffled across the
/// batch, averaged over `repeats` shuffles and broadcast to the patch.
pub fn permutation_feature_importance<R: Rng + ?Sized>(
    model: &dyn Classifier,
    batch: &[LabeledSample],
    patches: &PatchGrid,
    repeats: usize,
    rng: &mut R,
) -> Result<ImageGrid> {
    if repeats == 0 {
        return Err(Error::InvalidArgument("permutation importance needs at least one repeat".into()));
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("permutation importance needs a nonempty batch".into()));
    }
    let d = model.input_len();
    let n = batch.len();
    let mut rows = Vec::with_capacity(n * d);
    for s in batch {
        if s.image.len() != d {
            return Err(Error::shape("pfi", format!("sample of {} pixels for a {d}-input model", s.image.len())));
        }
        rows.extend_from_slice(s.image.data());
    }
    let labels: Vec<usize> = batch.iter().map(|s| s.label as usize).collect();
    let base = mean_ce(model, &rows, d, &labels)?;
    let mut importance = vec![0.0; patches.count()];
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffled = rows.clone();
    for (p, imp) in importance.iter_mut().enumerate() {
        let pixels: Vec<usize> = patches.pixels(p).collect();
        let mut total = 0.0;
        for _ in 0..repeats {
            order.shuffle(rng);
            for (dst, &src) in order.iter().enumerate() {
                for &i in &pixels {
                    shuffled[dst * d + i] = rows[src * d + i];
                }
            }
            total += mean_ce(model, &shuffled, d, &labels)? - base;
        }
        for (dst, _) in order.iter().enumerate() {
            for &i in &pixels {
                shuffled[dst * d + i] = rows[dst * d + i];
            }
        }
        *imp = total / repeats as f64;
    }
    Ok(patches.broadcast(&importance))
}

/// Monte-Carlo Shapley values over patches: for each random ordering the
/// patches are switched from baseline to sample one at a time and each is
/// credited with the change in the target logit.
pub fn shapley_value_sampling<R: Rng + ?Sized>(
    model: &dyn Classifier,
    x: &ImageGrid,
    baseline: &ImageGrid,
    target: usize,
    patches: &PatchGrid,
    permutations: usize,
    rng: &mut R,
) -> Result<ImageGrid> {
    check_inputs(model, x, baseline, patches)?;
    if permutations == 0 {
        return Err(Error::InvalidArgument("Shapley sampling needs at least one permutation".into()));
    }
    let (m, d) = (patches.count(), x.len());
    let mut phi = vec![0.0; m];
    let mut order: Vec<usize> = (0..m).collect();
    for _ in 0..permutations {
        order.shuffle(rng);
        let mut rows = Vec::with_capacity((m + 1) * d);
        let mut current = baseline.data().to_vec();
        rows.extend_from_slice(&current);
        for &p in &order {
            for i in patches.pixels(p) {
                current[i] = x.data()[i];
            }
            rows.extend_from_slice(&current);
        }
        let values = target_logits(model, &rows, d, target)?;
        for (k, &p) in order.iter().enumerate() {
            phi[p] += values[k + 1] - values[k];
        }
    }
    for v in &mut phi {
        *v /= permutations as f64;
    }
    Ok(patches.broadcast(&phi))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Kernel SHAP over patches. With enough budget every proper nonempty
/// coalition is enumerated and weighted by the Shapley kernel; otherwise
/// coalition sizes are drawn in proportion to the kernel's total mass per
/// size and members uniformly, each draw weighted equally. The weighted least
/// squares fit is constrained so the values sum to `f(x) - f(b)`.
pub fn kernel_shap<R: Rng + ?Sized>(
    model: &dyn Classifier,
    x: &ImageGrid,
    baseline: &ImageGrid,
    target: usize,
    patches: &PatchGrid,
    coalitions: usize,
    rng: &mut R,
) -> Result<ImageGrid> {
    check_inputs(model, x, baseline, patches)?;
    let (m, d) = (patches.count(), x.len());
    if coalitions < m + 2 {
        return Err(Error::InvalidArgument(format!(
            "kernel SHAP needs at least {} coalitions for {m} patches, got {coalitions}",
            m + 2
        )));
    }
    let ends = target_logits(model, &[baseline.data(), x.data()].concat(), d, target)?;
    let (f_base, f_full) = (ends[0], ends[1]);
    if m == 1 {
        return Ok(patches.broadcast(&[f_full - f_base]));
    }

    let exhaustive = m < 63 && (1u64 << m) - 2 <= coalitions as u64;
    let mut masks: Vec<Vec<bool>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    if exhaustive {
        for bits in 1..(1u64 << m) - 1 {
            let mask: Vec<bool> = (0..m).map(|i| bits >> i & 1 == 1).collect();
            let s = mask.iter().filter(|&&b| b).count();
            weights.push((m - 1) as f64 / (binomial(m, s) * (s * (m - s)) as f64));
            masks.push(mask);
        }
    } else {
        let size_mass: Vec<f64> = (1..m).map(|s| (m - 1) as f64 / (s * (m - s)) as f64).collect();
        let total: f64 = size_mass.iter().sum();
        let mut members: Vec<usize> = (0..m).collect();
        for _ in 0..coalitions {
            let mut u = rng.random::<f64>() * total;
            let mut s = m - 1;
            for (k, w) in size_mass.iter().enumerate() {
                if u < *w {
                    s = k + 1;
                    break;
                }
                u -= w;
            }
            members.shuffle(rng);
            let mut mask = vec![false; m];
            for &i in &members[..s] {
                mask[i] = true;
            }
            masks.push(mask);
            weights.push(1.0);
        }
    }

    let mut rows = vec![0.0; masks.len() * d];
    for (k, mask) in masks.iter().enumerate() {
        patches.compose(x.data(), baseline.data(), mask, &mut rows[k * d..(k + 1) * d]);
    }
    let y = target_logits(model, &rows, d, target)?;

    // eliminate the last value through the efficiency constraint
    let delta = f_full - f_base;
    let q = m - 1;
    let mut a = DMatrix::<f64>::zeros(q, q);
    let mut b = DVector::<f64>::zeros(q);
    for (k, mask) in masks.iter().enumerate() {
        let last = mask[q] as u8 as f64;
        let z: Vec<f64> = (0..q).map(|i| mask[i] as u8 as f64 - last).collect();
        let target_k = y[k] - f_base - last * delta;
        let w = weights[k];
        for i in 0..q {
            if z[i] == 0.0 {
                continue;
            }
            b[i] += w * z[i] * target_k;
            for j in 0..q {
                a[(i, j)] += w * z[i] * z[j];
            }
        }
    }
    let singular = || Error::SingularSystem {
        coalitions: masks.len(),
        features: m,
    };
    let phi_head = a.clone().cholesky().ok_or_else(singular)?.solve(&b);
    if phi_head.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    let mut phi: Vec<f64> = phi_head.iter().copied().collect();
    phi.push(delta - phi.iter().sum::<f64>());
    Ok(patches.broadcast(&phi))
}

/// LIME with a ridge-regularised linear surrogate over random patch masks.
/// Each patch is kept with probability 1/2; a perturbation with `k` patches
/// switched off has distance `sqrt(k)` from the sample and weight
/// `exp(-k / width^2)`, rescaled to mean one. The intercept is not
/// penalised.
#[allow(clippy::too_many_arguments)]
pub fn lime<R: Rng + ?Sized>(
    model: &dyn Classifier,
    x: &ImageGrid,
    baseline: &ImageGrid,
    target: usize,
    patches: &PatchGrid,
    perturbations: usize,
    kernel_width: f64,
    ridge: f64,
    rng: &mut R,
) -> Result<ImageGrid> {
    check_inputs(model, x, baseline, patches)?;
    let (m, d) = (patches.count(), x.len());
    if perturbations < m + 2 || !(kernel_width > 0.0) || ridge < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "LIME needs at least {} perturbations, a positive kernel width and non-negative ridge",
            m + 2
        )));
    }
    let masks: Vec<Vec<bool>> = (0..perturbations)
        .map(|_| (0..m).map(|_| rng.random_bool(0.5)).collect())
        .collect();
    for p in 0..m {
        let on = masks.iter().filter(|mask| mask[p]).count();
        if on == 0 || on == perturbations {
            return Err(Error::InvalidArgument(format!(
                "degenerate LIME perturbations: patch {p} never varies across {perturbations} draws"
            )));
        }
    }
    let mut rows = vec![0.0; perturbations * d];
    for (k, mask) in masks.iter().enumerate() {
        patches.compose(x.data(), baseline.data(), mask, &mut rows[k * d..(k + 1) * d]);
    }
    let y = target_logits(model, &rows, d, target)?;
    let mut w: Vec<f64> = masks
        .iter()
        .map(|mask| {
            let off = mask.iter().filter(|&&b| !b).count() as f64;
            (-off / (kernel_width * kernel_width)).exp()
        })
        .collect();
    let mean_w = w.iter().sum::<f64>() / w.len() as f64;
    if !(mean_w > 0.0) {
        return Err(Error::InvalidArgument("LIME kernel weights underflow; widen the kernel".into()));
    }
    for v in &mut w {
        *v /= mean_w;
    }

    // centre on weighted means so the intercept drops out of the ridge
    let w_sum: f64 = w.iter().sum();
    let z_mean: Vec<f64> = (0..m)
        .map(|p| masks.iter().zip(&w).map(|(mask, wk)| wk * mask[p] as u8 as f64).sum::<f64>() / w_sum)
        .collect();
    let y_mean = y.iter().zip(&w).map(|(yk, wk)| wk * yk).sum::<f64>() / w_sum;
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (k, mask) in masks.iter().enumerate() {
        let z: Vec<f64> = (0..m).map(|p| mask[p] as u8 as f64 - z_mean[p]).collect();
        let yc = y[k] - y_mean;
        for i in 0..m {
            b[i] += w[k] * z[i] * yc;
            for j in 0..m {
                a[(i, j)] += w[k] * z[i] * z[j];
            }
        }
    }
    for i in 0..m {
        a[(i, i)] += ridge;
    }
    let coef = a
        .cholesky()
        .ok_or(Error::SingularSystem {
            coalitions: perturbations,
            features: m,
        })?
        .solve(&b);
    Ok(patches.broadcast(coef.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{Mask, RigidTransform};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Logits `[0, g(x)]` for an arbitrary scalar function `g`.
    struct Scalar<F: Fn(&[f64]) -> f64 + Sync> {
        d: usize,
        f: F,
    }

    impl<F: Fn(&[f64]) -> f64 + Sync> Classifier for Scalar<F> {
        fn input_len(&self) -> usize {
            self.d
        }
        fn logits(&self, x: &Tensor) -> Result<Tensor> {
            let data = x.data().chunks(self.d).flat_map(|r| [0.0, (self.f)(r)]).collect();
            Tensor::new(vec![x.shape()[0], 2], data)
        }
    }

    fn grid(values: &[f64]) -> ImageGrid {
        let side = (values.len() as f64).sqrt() as usize;
        ImageGrid::new(side, values.to_vec()).unwrap()
    }

    /// A non-additive 4-feature game.
    fn toy(r: &[f64]) -> f64 {
        r[0] * r[1] + 2.0 * r[2] - r[1] * r[2] * r[3] + 0.5 * r[3] * r[3]
    }

    /// Exact Shapley values by averaging marginal contributions over all 4!
    /// orderings.
    fn exact_shapley(x: &[f64], b: &[f64]) -> Vec<f64> {
        fn perms(items: Vec<usize>) -> Vec<Vec<usize>> {
            if items.len() <= 1 {
                return vec![items];
            }
            let mut out = Vec::new();
            for i in 0..items.len() {
                let mut rest = items.clone();
                let head = rest.remove(i);
                for mut p in perms(rest) {
                    p.insert(0, head);
                    out.push(p);
                }
            }
            out
        }
        let all = perms((0..4).collect());
        let mut phi = vec![0.0; 4];
        for order in &all {
            let mut cur = b.to_vec();
            for &i in order {
                let before = toy(&cur);
                cur[i] = x[i];
                phi[i] += toy(&cur) - before;
            }
        }
        phi.iter().map(|v| v / all.len() as f64).collect()
    }

    const X: [f64; 4] = [0.8, -1.2, 0.5, 1.5];

    #[test]
    fn shapley_sampling_matches_enumeration() {
        let model = Scalar { d: 4, f: toy };
        let patches = PatchGrid::new(2, 1).unwrap();
        let zero = ImageGrid::zeros(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let est = shapley_value_sampling(&model, &grid(&X), &zero, 1, &patches, 10_000, &mut rng).unwrap();
        let exact = exact_shapley(&X, &[0.0; 4]);
        let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (e, t) in est.data().iter().zip(&exact) {
            assert!((e - t).abs() <= 0.02 * scale, "{e} vs {t}");
        }
    }

    #[test]
    fn kernel_shap_enumeration_is_exact_shapley() {
        let model = Scalar { d: 4, f: toy };
        let patches = PatchGrid::new(2, 1).unwrap();
        let zero = ImageGrid::zeros(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let est = kernel_shap(&model, &grid(&X), &zero, 1, &patches, 14, &mut rng).unwrap();
        let exact = exact_shapley(&X, &[0.0; 4]);
        for (e, t) in est.data().iter().zip(&exact) {
            assert!((e - t).abs() < 1e-10, "{e} vs {t}");
        }
    }

    #[test]
    fn additive_models_are_recovered() {
        let w: Vec<f64> = (0..16).map(|i| (i as f64 - 7.5) / 3.0).collect();
        let wc = w.clone();
        let model = Scalar {
            d: 16,
            f: move |r: &[f64]| r.iter().zip(&wc).map(|(a, b)| a * b).sum::<f64>() + 0.3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = grid(&(0..16).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let zero = ImageGrid::zeros(4);
        let patches = PatchGrid::new(4, 2).unwrap();
        let truth: Vec<f64> = (0..4)
            .map(|p| patches.pixels(p).map(|i| w[i] * x.data()[i]).sum())
            .collect();
        let broadcast = patches.broadcast(&truth);

        let sv = shapley_value_sampling(&model, &x, &zero, 1, &patches, 3, &mut rng).unwrap();
        let ks = kernel_shap(&model, &x, &zero, 1, &patches, 6, &mut rng).unwrap();
        let px = PatchGrid::new(4, 1).unwrap();
        let ks_sampled = kernel_shap(&model, &x, &zero, 1, &px, 2 * 16 + 16, &mut rng).unwrap();
        let lm = lime(&model, &x, &zero, 1, &patches, 1000, 0.25 * 2.0, 1e-3, &mut rng).unwrap();
        for i in 0..16 {
            let t = broadcast.data()[i];
            assert!((sv.data()[i] - t).abs() < 1e-12);
            assert!((ks.data()[i] - t).abs() < 1e-8);
            assert!((ks_sampled.data()[i] - w[i] * x.data()[i]).abs() < 1e-8);
            assert!((lm.data()[i] - t).abs() <= 0.05 * t.abs() + 1e-9, "{} vs {t}", lm.data()[i]);
        }
    }

    #[test]
    fn kernel_shap_efficiency() {
        let model = Scalar { d: 16, f: |r: &[f64]| (r[0] * r[5]).tanh() + r[10].powi(3) - r[3] * r[15] };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = grid(&(0..16).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let zero = ImageGrid::zeros(4);
        let patches = PatchGrid::new(4, 1).unwrap();
        let ks = kernel_shap(&model, &x, &zero, 1, &patches, 48, &mut rng).unwrap();
        let total: f64 = ks.data().iter().sum();
        let gap = (model.f)(x.data()) - (model.f)(zero.data());
        assert!((total - gap).abs() < 1e-6);
        assert!(kernel_shap(&model, &x, &zero, 1, &patches, 17, &mut rng).is_err());
    }

    #[test]
    fn null_features_get_nothing() {
        let model = Scalar { d: 4, f: |r: &[f64]| r[0] * r[1] + r[1] };
        let patches = PatchGrid::new(2, 1).unwrap();
        let zero = ImageGrid::zeros(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sv = shapley_value_sampling(&model, &grid(&X), &zero, 1, &patches, 25, &mut rng).unwrap();
        assert_eq!(sv.data()[2], 0.0);
        assert_eq!(sv.data()[3], 0.0);
    }

    #[test]
    fn lime_constant_model_and_determinism() {
        let model = Scalar { d: 4, f: |_: &[f64]| 2.5 };
        let patches = PatchGrid::new(2, 1).unwrap();
        let zero = ImageGrid::zeros(2);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = lime(&model, &grid(&X), &zero, 1, &patches, 200, 0.5, 1e-3, &mut rng).unwrap();
        assert!(m.data().iter().all(|v| v.abs() < 1e-9));

        let model = Scalar { d: 4, f: toy };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            lime(&model, &grid(&X), &zero, 1, &patches, 200, 0.5, 1e-3, &mut rng).unwrap()
        };
        assert_eq!(run(7), run(7));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert!(lime(&model, &grid(&X), &zero, 1, &patches, 5, 0.5, 1e-3, &mut rng).is_err());
    }

    fn batch(values: &[(f64, f64, u8)]) -> Vec<LabeledSample> {
        values
            .iter()
            .map(|&(a, b, label)| LabeledSample {
                image: grid(&[a, b, 0.7, 0.0]),
                label,
                mask: Mask::empty(2),
                transform: RigidTransform::IDENTITY,
                xor_case: None,
            })
            .collect()
    }

    #[test]
    fn pfi_detects_the_used_pixel() {
        // logit of class 1 is 3 x0; labels follow the sign of x0
        let model = Scalar { d: 4, f: |r: &[f64]| 3.0 * r[0] };
        let data = batch(&[(1.0, 0.2, 1), (-1.0, -0.4, 0), (1.0, 0.9, 1), (-1.0, 0.1, 0), (1.0, -0.3, 1), (-1.0, 0.5, 0)]);
        let patches = PatchGrid::new(2, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = permutation_feature_importance(&model, &data, &patches, 20, &mut rng).unwrap();
        assert!(m.data()[0] > 0.0);
        // pixel 1 is ignored, pixel 2 is constant, pixel 3 is zero
        assert_eq!(&m.data()[1..], &[0.0, 0.0, 0.0]);
        assert!(permutation_feature_importance(&model, &data, &patches, 0, &mut rng).is_err());
    }
}
