use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ops::{conv_geometry, pool_geometry};
use crate::tensor::{forward_primitive, ConvAttrs, NodeId, Padding, PoolAttrs, Primitive, Tape, Tensor};

pub const NUM_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    /// Linear logistic regression: one affine layer into the softmax head.
    Llr,
    Mlp,
    Cnn,
}

impl ArchKind {
    pub const ALL: [ArchKind; 3] = [ArchKind::Llr, ArchKind::Mlp, ArchKind::Cnn];

    pub fn id(self) -> &'static str {
        match self {
            ArchKind::Llr => "llr",
            ArchKind::Mlp => "mlp",
            ArchKind::Cnn => "cnn",
        }
    }

    pub fn from_id(id: &str) -> Option<ArchKind> {
        ArchKind::ALL.into_iter().find(|k| k.id() == id.to_ascii_lowercase())
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id().to_ascii_uppercase())
    }
}

/// Convolutional trunk: one conv + ReLU + max-pool block per filter count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvPlan {
    pub filters: Vec<usize>,
    pub kernel: usize,
    pub conv: ConvAttrs,
    pub pool: PoolAttrs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub kind: ArchKind,
    pub side: usize,
    /// Hidden widths of the MLP; empty otherwise.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv: Option<ConvPlan>,
}

impl ArchitectureSpec {
    /// The benchmark architectures. Side 8 uses the small-image variants;
    /// any other side uses the full-size plan.
    pub fn new(kind: ArchKind, side: usize) -> Self {
        let small = side == 8;
        let hidden = match kind {
            ArchKind::Mlp if small => vec![64, 32, 16, 8],
            ArchKind::Mlp => vec![1024, 256, 64, 16],
            _ => Vec::new(),
        };
        let conv = (kind == ArchKind::Cnn).then(|| {
            if small {
                ConvPlan {
                    filters: vec![4; 4],
                    kernel: 2,
                    conv: ConvAttrs { stride: 1, padding: Padding::Same },
                    pool: PoolAttrs { kernel: 2, stride: 2 },
                }
            } else {
                ConvPlan {
                    filters: vec![4, 8, 16, 32],
                    kernel: 4,
                    conv: ConvAttrs { stride: 1, padding: Padding::Same },
                    pool: PoolAttrs { kernel: 2, stride: 1 },
                }
            }
        });
        ArchitectureSpec { kind, side, hidden, conv }
    }

    pub fn input_len(&self) -> usize {
        self.side * self.side
    }
}

/// One stage of a network. Parameter indices point into [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// `[n, D]` to `[n, 1, side, side]`.
    ToImage { side: usize },
    /// `x @ W + b` with `W: [in, out]`.
    Dense { weight: usize, bias: usize },
    Conv { weight: usize, bias: usize, attrs: ConvAttrs },
    Relu,
    MaxPool(PoolAttrs),
    /// `[n, c, h, w]` to `[n, c*h*w]`.
    Flatten,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    arch: ArchitectureSpec,
    layers: Vec<Layer>,
    params: Vec<Tensor>,
}

/// Anything that maps a `[n, D]` batch to `[n, 2]` class logits.
pub trait Classifier: Sync {
    fn input_len(&self) -> usize;
    fn logits(&self, x: &Tensor) -> Result<Tensor>;
}

impl Network {
    /// He-normal weights drawn from a seeded stream, zero biases.
    pub fn new(arch: ArchitectureSpec, seed: u64) -> Result<Self> {
        let shapes = parameter_shapes(&arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = shapes
            .into_iter()
            .map(|shape| {
                if shape.len() == 1 {
                    return Tensor::zeros(shape);
                }
                let fan_in: usize = if shape.len() == 4 {
                    shape[1..].iter().product()
                } else {
                    shape[0]
                };
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let data = (0..shape.iter().product::<usize>()).map(|_| normal.sample(&mut rng)).collect();
                Tensor::new(shape, data).expect("shape matches data")
            })
            .collect();
        Self::from_params(arch, params)
    }

    pub fn from_params(arch: ArchitectureSpec, params: Vec<Tensor>) -> Result<Self> {
        let shapes = parameter_shapes(&arch)?;
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| s.as_slice() != p.shape()) {
            return Err(Error::shape(
                "network",
                format!(
                    "{} expects parameter shapes {shapes:?}, got {:?}",
                    arch.kind,
                    params.iter().map(|p| p.shape().to_vec()).collect::<Vec<_>>()
                ),
            ));
        }
        let layers = build_layers(&arch);
        Ok(Network { arch, layers, params })
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<Tensor> {
        self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Records the forward pass on `tape`; `params` are the leaves holding
    /// this network's parameters, in order. Returns the logits node.
    pub fn record(&self, tape: &mut Tape, input: NodeId, params: &[NodeId]) -> Result<NodeId> {
        let mut h = input;
        for layer in &self.layers {
            h = match layer {
                Layer::ToImage { side } => {
                    let n = tape.value(h).shape()[0];
                    tape.reshape(h, vec![n, 1, *side, *side])?
                }
                Layer::Dense { weight, bias } => {
                    let z = tape.matmul(h, params[*weight])?;
                    tape.add_bias(z, params[*bias])?
                }
                Layer::Conv { weight, bias, attrs } => tape.conv2d(h, params[*weight], params[*bias], *attrs)?,
                Layer::Relu => tape.relu(h)?,
                Layer::MaxPool(attrs) => tape.maxpool2d(h, *attrs)?,
                Layer::Flatten => {
                    let shape = tape.value(h).shape().to_vec();
                    tape.reshape(h, vec![shape[0], shape[1..].iter().product()])?
                }
            };
        }
        Ok(h)
    }

    /// Records the network with fresh parameter leaves. Returns
    /// `(input leaf, parameter leaves, logits)`.
    pub fn record_fresh(&self, tape: &mut Tape, x: Tensor) -> Result<(NodeId, Vec<NodeId>, NodeId)> {
        let input = tape.leaf(x);
        let params: Vec<NodeId> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let logits = self.record(tape, input, &params)?;
        Ok((input, params, logits))
    }

    /// Output of one layer on a concrete input.
    pub fn apply_layer(&self, layer: &Layer, h: &Tensor) -> Result<Tensor> {
        let p = |i: &usize| &self.params[*i];
        match layer {
            Layer::ToImage { side } => h.clone().reshape(vec![h.shape()[0], 1, *side, *side]),
            Layer::Dense { weight, bias } => {
                let z = forward_primitive(&Primitive::MatMul, &[h, p(weight)])?;
                forward_primitive(&Primitive::AddBias, &[&z, p(bias)])
            }
            Layer::Conv { weight, bias, attrs } => {
                forward_primitive(&Primitive::Conv2d(*attrs), &[h, p(weight), p(bias)])
            }
            Layer::Relu => forward_primitive(&Primitive::Relu, &[h]),
            Layer::MaxPool(attrs) => forward_primitive(&Primitive::MaxPool2d(*attrs), &[h]),
            Layer::Flatten => {
                let n = h.shape()[0];
                h.clone().reshape(vec![n, h.len() / n])
            }
        }
    }

    /// Input followed by the output of every layer.
    pub fn activations(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        let mut acts = vec![x.clone()];
        for layer in &self.layers {
            let next = self.apply_layer(layer, acts.last().expect("nonempty"))?;
            acts.push(next);
        }
        Ok(acts)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        match x.shape() {
            [_, d] if *d == self.arch.input_len() => Ok(()),
            s => Err(Error::shape(
                "network",
                format!("{} expects [n, {}] inputs, got {s:?}", self.arch.kind, self.arch.input_len()),
            )),
        }
    }
}

impl Classifier for Network {
    fn input_len(&self) -> usize {
        self.arch.input_len()
    }

    fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = self.apply_layer(layer, &h)?;
        }
        Ok(h)
    }
}

fn build_layers(arch: &ArchitectureSpec) -> Vec<Layer> {
    let mut layers = Vec::new();
    let mut next = 0;
    let mut dense = |layers: &mut Vec<Layer>| {
        layers.push(Layer::Dense { weight: next, bias: next + 1 });
        next += 2;
    };
    match arch.kind {
        ArchKind::Llr => dense(&mut layers),
        ArchKind::Mlp => {
            for _ in &arch.hidden {
                dense(&mut layers);
                layers.push(Layer::Relu);
            }
            dense(&mut layers);
        }
        ArchKind::Cnn => {
            let plan = arch.conv.as_ref().expect("CNN specs carry a conv plan");
            layers.push(Layer::ToImage { side: arch.side });
            let mut p = 0;
            for _ in &plan.filters {
                layers.push(Layer::Conv { weight: p, bias: p + 1, attrs: plan.conv });
                layers.push(Layer::Relu);
                layers.push(Layer::MaxPool(plan.pool));
                p += 2;
            }
            layers.push(Layer::Flatten);
            layers.push(Layer::Dense { weight: p, bias: p + 1 });
        }
    }
    layers
}

/// Parameter shapes in storage order: weight then bias for each layer.
pub fn parameter_shapes(arch: &ArchitectureSpec) -> Result<Vec<Vec<usize>>> {
    let d = arch.input_len();
    if d == 0 {
        return Err(Error::InvalidArgument("image side must be positive".into()));
    }
    let mut shapes = Vec::new();
    let push_dense = |shapes: &mut Vec<Vec<usize>>, i: usize, o: usize| {
        shapes.push(vec![i, o]);
        shapes.push(vec![o]);
    };
    match arch.kind {
        ArchKind::Llr => push_dense(&mut shapes, d, NUM_CLASSES),
        ArchKind::Mlp => {
            if arch.hidden.is_empty() || arch.hidden.contains(&0) {
                return Err(Error::InvalidArgument(format!("bad MLP widths {:?}", arch.hidden)));
            }
            let mut width = d;
            for &h in &arch.hidden {
                push_dense(&mut shapes, width, h);
                width = h;
            }
            push_dense(&mut shapes, width, NUM_CLASSES);
        }
        ArchKind::Cnn => {
            let plan = arch
                .conv
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("CNN spec lacks a conv plan".into()))?;
            let (mut channels, mut size) = (1, arch.side);
            for &f in &plan.filters {
                let (conv_out, _) = conv_geometry(size, plan.kernel, plan.conv).ok_or_else(|| {
                    Error::InvalidArgument(format!("kernel {} does not fit a {size}px map", plan.kernel))
                })?;
                size = pool_geometry(conv_out, plan.pool)
                    .ok_or_else(|| Error::InvalidArgument("pool kernel and stride must be positive".into()))?;
                shapes.push(vec![f, channels, plan.kernel, plan.kernel]);
                shapes.push(vec![f]);
                channels = f;
            }
            push_dense(&mut shapes, channels * size * size, NUM_CLASSES);
        }
    }
    Ok(shapes)
}

/// Stacks sample images into a `[n, D]` tensor.
pub fn batch_tensor<'a, I>(images: I, input_len: usize) -> Result<Tensor>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        if img.len() != input_len {
            return Err(Error::shape("batch", format!("image of {} pixels, expected {input_len}", img.len())));
        }
        data.extend_from_slice(img);
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    Tensor::new(vec![n, input_len], data)
}

/// Index of the largest logit per row; the first wins ties.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_input(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(vec![n, d], (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central differences of `sum_i logit[i, class_i]` with respect to every
    /// parameter and every input coordinate.
    fn gradient_check(net: &Network, x: &Tensor, classes: &[usize]) {
        let mut tape = Tape::new();
        let (input, params, logits) = net.record_fresh(&mut tape, x.clone()).unwrap();
        let out = tape.pick_sum(logits, classes.to_vec()).unwrap();
        let grads = tape.backward(out).unwrap();
        let objective = |net: &Network, x: &Tensor| {
            let l = net.logits(x).unwrap();
            classes.iter().enumerate().map(|(i, &c)| l.data()[i * 2 + c]).sum::<f64>()
        };
        let h = 1e-5;
        let compare = |analytic: f64, numeric: f64, what: &str| {
            if analytic.abs() < 1e-8 {
                assert!((analytic - numeric).abs() < 1e-6, "{what}: {analytic} vs {numeric}");
            } else {
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
                assert!(rel < 1e-4, "{what}: {analytic} vs {numeric}");
            }
        };
        for (pi, leaf) in params.iter().enumerate() {
            let g = grads.wrt(*leaf);
            for j in 0..net.params[pi].len() {
                let mut plus = net.clone();
                plus.params[pi].data_mut()[j] += h;
                let mut minus = net.clone();
                minus.params[pi].data_mut()[j] -= h;
                let numeric = (objective(&plus, x) - objective(&minus, x)) / (2.0 * h);
                compare(g.data()[j], numeric, &format!("param {pi}[{j}]"));
            }
        }
        let gx = grads.wrt(input);
        for j in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[j] += h;
            let mut minus = x.clone();
            minus.data_mut()[j] -= h;
            let numeric = (objective(net, &plus) - objective(net, &minus)) / (2.0 * h);
            compare(gx.data()[j], numeric, &format!("input {j}"));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (seed, kind) in ArchKind::ALL.into_iter().enumerate() {
            let net = Network::new(ArchitectureSpec::new(kind, 8), seed as u64).unwrap();
            let x = random_input(3, 64, 100 + seed as u64);
            gradient_check(&net, &x, &[0, 1, 1]);
        }
    }

    #[test]
    fn llr_is_affine() {
        let net = Network::new(ArchitectureSpec::new(ArchKind::Llr, 8), 1).unwrap();
        let a = random_input(1, 64, 2);
        let b = random_input(1, 64, 3);
        let la = net.logits(&a).unwrap();
        let lb = net.logits(&b).unwrap();
        for lambda in [0.0, 0.25, 0.7, 1.0] {
            let mix: Vec<f64> = a.data().iter().zip(b.data()).map(|(u, v)| lambda * u + (1.0 - lambda) * v).collect();
            let lm = net.logits(&Tensor::new(vec![1, 64], mix).unwrap()).unwrap();
            for k in 0..2 {
                let expected = lambda * la.data()[k] + (1.0 - lambda) * lb.data()[k];
                assert!((lm.data()[k] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn small_cnn_geometry() {
        let net = Network::new(ArchitectureSpec::new(ArchKind::Cnn, 8), 0).unwrap();
        let acts = net.activations(&random_input(2, 64, 0)).unwrap();
        let spatial: Vec<Vec<usize>> = acts
            .iter()
            .filter(|t| t.shape().len() == 4)
            .map(|t| t.shape().to_vec())
            .collect();
        // to-image, then conv/relu/pool per block
        assert_eq!(spatial[0], vec![2, 1, 8, 8]);
        assert_eq!(spatial[1], vec![2, 4, 8, 8]);
        assert_eq!(spatial[3], vec![2, 4, 4, 4]);
        assert_eq!(spatial[6], vec![2, 4, 2, 2]);
        assert_eq!(spatial[9], vec![2, 4, 1, 1]);
        assert_eq!(spatial[12], vec![2, 4, 1, 1]);
        assert_eq!(net.params().last().unwrap().shape(), &[2]);
        assert_eq!(net.params()[8].shape(), &[4, 2]);
    }

    #[test]
    fn large_shapes() {
        let mlp = parameter_shapes(&ArchitectureSpec::new(ArchKind::Mlp, 64)).unwrap();
        assert_eq!(mlp[0], vec![4096, 1024]);
        assert_eq!(mlp[8], vec![16, 2]);
        let cnn = parameter_shapes(&ArchitectureSpec::new(ArchKind::Cnn, 64)).unwrap();
        assert_eq!(cnn[6], vec![32, 16, 4, 4]);
        // same-padded convs keep 64px; each stride-1 pool trims one pixel
        assert_eq!(cnn[8], vec![32 * 60 * 60, 2]);
    }

    #[test]
    fn initialisation_is_seeded() {
        let arch = ArchitectureSpec::new(ArchKind::Mlp, 8);
        assert_eq!(Network::new(arch.clone(), 5).unwrap(), Network::new(arch.clone(), 5).unwrap());
        assert_ne!(Network::new(arch.clone(), 5).unwrap(), Network::new(arch, 6).unwrap());
    }

    #[test]
    fn wrong_parameter_shapes_rejected() {
        let arch = ArchitectureSpec::new(ArchKind::Llr, 8);
        assert!(Network::from_params(arch, vec![Tensor::zeros(vec![64, 3]), Tensor::zeros(vec![3])]).is_err());
    }
}
