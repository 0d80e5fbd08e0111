//! Layer-wise relevance propagation with the epsilon rule.

use crate::datagen::ImageGrid;
use crate::error::{Error, Result};
use crate::models::{Layer, Network};
use crate::tensor::ops::{conv2d_backward, forward, matmul_grad_lhs};
use crate::tensor::{Primitive, Tensor};

/// Redistributes the target logit down to the pixels. Each affine or
/// convolutional layer shares relevance in proportion to the contributions
/// `a_i w_ij`, with the stabiliser `eps * max|z|` of that layer added in the
/// direction of `z_j`; ReLUs pass relevance unchanged and max pools hand it
/// to the element that won the forward pass. Bias contributions are
/// absorbed, so conservation is exact only for bias-free networks.
pub fn lrp_epsilon(net: &Network, x: &ImageGrid, target: usize, epsilon: f64) -> Result<ImageGrid> {
    if epsilon < 0.0 {
        return Err(Error::InvalidArgument(format!("epsilon must be non-negative, got {epsilon}")));
    }
    let input = Tensor::new(vec![1, x.len()], x.data().to_vec())?;
    let acts = net.activations(&input)?;
    let logits = acts.last().expect("network has layers");
    if target >= logits.len() {
        return Err(Error::InvalidArgument(format!("target {target} out of range")));
    }
    let mut relevance = vec![0.0; logits.len()];
    relevance[target] = logits.data()[target];

    for (idx, layer) in net.layers().iter().enumerate().rev() {
        let a = &acts[idx];
        let z = &acts[idx + 1];
        relevance = match layer {
            Layer::ToImage { .. } | Layer::Flatten | Layer::Relu => relevance,
            Layer::Dense { weight, .. } => {
                let w = &net.params()[*weight];
                let (k, m) = (w.shape()[0], w.shape()[1]);
                let s = stabilised_ratio(&relevance, z.data(), epsilon);
                let c = matmul_grad_lhs(&s, w.data(), 1, k, m);
                a.data().iter().zip(&c).map(|(ai, ci)| ai * ci).collect()
            }
            Layer::Conv { weight, attrs, .. } => {
                let w = &net.params()[*weight];
                let s = stabilised_ratio(&relevance, z.data(), epsilon);
                let (c, _, _) = conv2d_backward(a, w, &s, *attrs);
                a.data().iter().zip(&c).map(|(ai, ci)| ai * ci).collect()
            }
            Layer::MaxPool(attrs) => {
                let (_, argmax) = forward(&Primitive::MaxPool2d(*attrs), &[a])?;
                let mut out = vec![0.0; a.len()];
                for (&src, r) in argmax.iter().zip(&relevance) {
                    out[src] += r;
                }
                out
            }
        };
    }
    ImageGrid::new(x.side(), relevance)
}

/// `R_j / (z_j + eps_eff * sign(z_j))`, zero where the denominator vanishes.
fn stabilised_ratio(relevance: &[f64], z: &[f64], epsilon: f64) -> Vec<f64> {
    let eps = epsilon * z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    relevance
        .iter()
        .zip(z)
        .map(|(r, &zj)| {
            let den = zj + if zj >= 0.0 { eps } else { -eps };
            if den == 0.0 {
                0.0
            } else {
                r / den
            }
        })
        .collect()
}
