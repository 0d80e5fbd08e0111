//! Attribution from input gradients of the target logit.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::datagen::ImageGrid;
use crate::error::{Error, Result};
use crate::models::Network;
use crate::tensor::{ReluRule, Tape, Tensor};

/// Rows evaluated per backward pass for path and sampling methods.
const GRADIENT_CHUNK: usize = 256;

/// Gradient of `logit[target]` with respect to each row of `points`.
pub fn input_gradients(net: &Network, points: Tensor, target: usize, rule: ReluRule) -> Result<Tensor> {
    let n = points.shape()[0];
    let mut tape = Tape::new();
    let (input, _, logits) = net.record_fresh(&mut tape, points)?;
    let out = tape.pick_sum(logits, vec![target; n])?;
    Ok(tape.backward_with(out, rule)?.take(input))
}

fn single(x: &ImageGrid) -> Tensor {
    Tensor::new(vec![1, x.len()], x.data().to_vec()).expect("row tensor")
}

fn grid_like(x: &ImageGrid, data: Vec<f64>) -> ImageGrid {
    ImageGrid::new(x.side(), data).expect("input-shaped")
}

fn check(net: &Network, x: &ImageGrid, baseline: &ImageGrid) -> Result<()> {
    if x.len() != net.arch().input_len() || baseline.len() != x.len() {
        return Err(Error::shape(
            "attribution",
            format!("sample {} / baseline {} pixels for a {}-input model", x.len(), baseline.len(), net.arch().input_len()),
        ));
    }
    Ok(())
}

pub fn saliency(net: &Network, x: &ImageGrid, target: usize) -> Result<ImageGrid> {
    let g = input_gradients(net, single(x), target, ReluRule::Standard)?;
    Ok(grid_like(x, g.into_data()))
}

pub fn guided_backprop(net: &Network, x: &ImageGrid, target: usize) -> Result<ImageGrid> {
    let g = input_gradients(net, single(x), target, ReluRule::Guided)?;
    Ok(grid_like(x, g.into_data()))
}

pub fn deconvolution(net: &Network, x: &ImageGrid, target: usize) -> Result<ImageGrid> {
    let g = input_gradients(net, single(x), target, ReluRule::Deconv)?;
    Ok(grid_like(x, g.into_data()))
}

/// Mean gradient at `points`, computed in chunks.
fn mean_gradient(net: &Network, points: Vec<f64>, d: usize, target: usize) -> Result<Vec<f64>> {
    let n = points.len() / d;
    let mut sum = vec![0.0; d];
    for chunk in points.chunks(GRADIENT_CHUNK * d) {
        let rows = chunk.len() / d;
        let g = input_gradients(net, Tensor::new(vec![rows, d], chunk.to_vec())?, target, ReluRule::Standard)?;
        for row in g.data().chunks(d) {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
        }
    }
    Ok(sum.into_iter().map(|s| s / n as f64).collect())
}

/// `(x - b) * mean_k grad f(b + (k + 1/2)/m * (x - b))`, the midpoint rule
/// on the straight path from the baseline.
pub fn integrated_gradients(
    net: &Network,
    x: &ImageGrid,
    baseline: &ImageGrid,
    target: usize,
    steps: usize,
) -> Result<ImageGrid> {
    check(net, x, baseline)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("integrated gradients needs at least one step".into()));
    }
    let d = x.len();
    let diff: Vec<f64> = x.data().iter().zip(baseline.data()).map(|(a, b)| a - b).collect();
    let mut points = Vec::with_capacity(steps * d);
    for k in 0..steps {
        let t = (k as f64 + 0.5) / steps as f64;
        points.extend(baseline.data().iter().zip(&diff).map(|(b, dv)| b + t * dv));
    }
    let g = mean_gradient(net, points, d, target)?;
    Ok(grid_like(x, diff.iter().zip(&g).map(|(a, b)| a * b).collect()))
}

/// Expected `(x - b) * grad f` at points `b + u (x - b) + noise` with
/// `u ~ U(0, 1)` and Gaussian pixel noise of std `noise`.
pub fn gradient_shap<R: Rng + ?Sized>(
    net: &Network,
    x: &ImageGrid,
    baseline: &ImageGrid,
    target: usize,
    samples: usize,
    noise: f64,
    rng: &mut R,
) -> Result<ImageGrid> {
    check(net, x, baseline)?;
    if samples == 0 || noise < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "gradient SHAP needs samples >= 1 and noise >= 0, got {samples} and {noise}"
        )));
    }
    let d = x.len();
    let diff: Vec<f64> = x.data().iter().zip(baseline.data()).map(|(a, b)| a - b).collect();
    let normal = Normal::new(0.0, noise).expect("non-negative std");
    let mut points = Vec::with_capacity(samples * d);
    for _ in 0..samples {
        let u: f64 = rng.random();
        for (b, dv) in baseline.data().iter().zip(&diff) {
            let eps = if noise > 0.0 { normal.sample(rng) } else { 0.0 };
            points.push(b + u * dv + eps);
        }
    }
    let g = mean_gradient(net, points, d, target)?;
    Ok(grid_like(x, diff.iter().zip(&g).map(|(a, b)| a * b).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ArchKind, ArchitectureSpec, Classifier};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(seed: u64) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGrid::new(8, (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn llr(seed: u64) -> Network {
        Network::new(ArchitectureSpec::new(ArchKind::Llr, 8), seed).unwrap()
    }

    fn logit(net: &Network, x: &ImageGrid, target: usize) -> f64 {
        net.logits(&single(x)).unwrap().data()[target]
    }

    #[test]
    fn llr_maps_are_weight_rows() {
        let net = llr(1);
        let w = &net.params()[0];
        for target in 0..2 {
            let expected: Vec<f64> = (0..64).map(|i| w.data()[i * 2 + target]).collect();
            let x = sample(2);
            assert_eq!(saliency(&net, &x, target).unwrap().data(), &expected[..]);
            assert_eq!(saliency(&net, &sample(3), target).unwrap().data(), &expected[..]);
            assert_eq!(guided_backprop(&net, &x, target).unwrap().data(), &expected[..]);
            assert_eq!(deconvolution(&net, &x, target).unwrap().data(), &expected[..]);
        }
    }

    #[test]
    fn saliency_matches_finite_differences() {
        let net = Network::new(ArchitectureSpec::new(ArchKind::Mlp, 8), 4).unwrap();
        let x = sample(5);
        let s = saliency(&net, &x, 1).unwrap();
        for i in 0..64 {
            let mut p = x.clone();
            p.data_mut()[i] += 1e-5;
            let mut m = x.clone();
            m.data_mut()[i] -= 1e-5;
            let fd = (logit(&net, &p, 1) - logit(&net, &m, 1)) / 2e-5;
            let a = s.data()[i];
            assert!((a - fd).abs() <= 1e-4 * a.abs().max(1e-6) + 1e-8, "{i}: {a} vs {fd}");
        }
    }

    #[test]
    fn ig_on_affine_logit_is_w_times_x() {
        let net = llr(7);
        let x = sample(8);
        let zero = ImageGrid::zeros(8);
        for steps in [1, 3, 64] {
            let ig = integrated_gradients(&net, &x, &zero, 0, steps).unwrap();
            for i in 0..64 {
                let expected = net.params()[0].data()[i * 2] * x.data()[i];
                assert!((ig.data()[i] - expected).abs() < 1e-10);
            }
        }
        let same = integrated_gradients(&net, &x, &x, 0, 8).unwrap();
        assert!(same.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ig_completeness_on_mlp() {
        let net = Network::new(ArchitectureSpec::new(ArchKind::Mlp, 8), 9).unwrap();
        let x = sample(10);
        let zero = ImageGrid::zeros(8);
        let ig = integrated_gradients(&net, &x, &zero, 1, 256).unwrap();
        let total: f64 = ig.data().iter().sum();
        let gap = logit(&net, &x, 1) - logit(&net, &zero, 1);
        assert!((total - gap).abs() <= 1e-3 * gap.abs() + 1e-6, "{total} vs {gap}");
    }

    #[test]
    fn guided_matches_closed_form_on_one_hidden_layer() {
        // with a single hidden layer, guided backprop keeps exactly the
        // active hidden units whose output weight is positive
        let mut arch = ArchitectureSpec::new(ArchKind::Mlp, 8);
        arch.hidden = vec![8];
        let net = Network::new(arch, 11).unwrap();
        let (w1, w2) = (&net.params()[0], &net.params()[2]);
        for seed in 0..10 {
            let x = sample(100 + seed);
            let guided = guided_backprop(&net, &x, 0).unwrap();
            let h: Vec<f64> = (0..8)
                .map(|j| (0..64).map(|i| x.data()[i] * w1.data()[i * 8 + j]).sum::<f64>())
                .collect();
            for i in 0..64 {
                let expected: f64 = (0..8)
                    .filter(|&j| h[j] > 0.0 && w2.data()[j * 2] > 0.0)
                    .map(|j| w1.data()[i * 8 + j] * w2.data()[j * 2])
                    .sum();
                assert!((guided.data()[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn guided_is_zero_when_layer_one_is_dead() {
        let mut net = Network::new(ArchitectureSpec::new(ArchKind::Mlp, 8), 12).unwrap();
        let x = sample(13);
        // a large negative bias kills every first-layer unit
        for b in net.params_mut()[1].data_mut() {
            *b = -1e3;
        }
        assert!(guided_backprop(&net, &x, 0).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_shap_on_affine_logit() {
        let net = llr(14);
        let x = sample(15);
        let zero = ImageGrid::zeros(8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let gs = gradient_shap(&net, &x, &zero, 1, 32, 0.1, &mut rng).unwrap();
        // gradients of an affine logit are constant, so every draw agrees
        for i in 0..64 {
            let expected = net.params()[0].data()[i * 2 + 1] * x.data()[i];
            assert!((gs.data()[i] - expected).abs() < 1e-12);
        }
        let at_baseline = gradient_shap(&net, &zero, &zero, 1, 8, 0.0, &mut rng).unwrap();
        assert!(at_baseline.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_shap_approaches_ig() {
        let net = Network::new(ArchitectureSpec::new(ArchKind::Mlp, 8), 16).unwrap();
        let x = sample(17);
        let zero = ImageGrid::zeros(8);
        let ig = integrated_gradients(&net, &x, &zero, 0, 10_000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gs = gradient_shap(&net, &x, &zero, 0, 10_000, 0.0, &mut rng).unwrap();
        let num: f64 = ig.data().iter().zip(gs.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = ig.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(num / den < 0.05, "relative gap {}", num / den);
    }
}
