use super::ops::{self, forward, Primitive};
use super::Tensor;
use crate::error::{Error, Result};

/// Index of a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the backward pass treats ReLU nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ReluRule {
    /// Exact derivative; the gradient at exactly zero is zero.
    #[default]
    Standard,
    /// Pass only where the forward input and the incoming gradient are both
    /// positive.
    Guided,
    /// Pass only positive incoming gradients, ignoring the forward input.
    Deconv,
}

struct Node {
    prim: Option<Primitive>,
    inputs: Vec<NodeId>,
    value: Tensor,
    aux: Vec<usize>,
}

/// Wengert list of forward operations. Nodes are appended in evaluation
/// order, so inputs always precede the nodes that consume them.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every recorded node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `id`; zero when `id` does not reach the output.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        let shape = self.shapes[id.0].clone();
        match &self.grads[id.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches node shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, id: NodeId) -> Tensor {
        let shape = self.shapes[id.0].clone();
        match self.grads[id.0].take() {
            Some(g) => Tensor::new(shape, g).expect("gradient matches node shape"),
            None => Tensor::zeros(shape),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            prim: None,
            inputs: Vec::new(),
            value,
            aux: Vec::new(),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Records `prim` applied to `inputs` and returns the new node.
    pub fn apply(&mut self, prim: Primitive, inputs: &[NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
        let (value, aux) = forward(&prim, &values)?;
        self.nodes.push(Node {
            prim: Some(prim),
            inputs: inputs.to_vec(),
            value,
            aux,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::MatMul, &[a, b])
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.apply(Primitive::AddBias, &[x, bias])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Relu, &[x])
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
        attrs: ops::ConvAttrs,
    ) -> Result<NodeId> {
        self.apply(Primitive::Conv2d(attrs), &[x, weight, bias])
    }

    pub fn maxpool2d(&mut self, x: NodeId, attrs: ops::PoolAttrs) -> Result<NodeId> {
        self.apply(Primitive::MaxPool2d(attrs), &[x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        self.apply(Primitive::Reshape(shape), &[x])
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Softmax, &[x])
    }

    pub fn cross_entropy(&mut self, logits: NodeId, labels: Vec<usize>) -> Result<NodeId> {
        self.apply(Primitive::CrossEntropy(labels), &[logits])
    }

    pub fn pick_sum(&mut self, x: NodeId, classes: Vec<usize>) -> Result<NodeId> {
        self.apply(Primitive::PickSum(classes), &[x])
    }

    /// Re-evaluates every non-leaf node from the recorded leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match &node.prim {
                None => node.value.clone(),
                Some(prim) => {
                    let inputs: Vec<&Tensor> = node.inputs.iter().map(|i| &values[i.0]).collect();
                    forward(prim, &inputs)?.0
                }
            };
            values.push(value);
        }
        Ok(values)
    }

    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        self.backward_with(output, ReluRule::Standard)
    }

    /// Reverse pass from a scalar `output`, with a configurable ReLU rule.
    pub fn backward_with(&self, output: NodeId, rule: ReluRule) -> Result<Gradients> {
        let out_value = &self.nodes[output.0].value;
        if !out_value.is_scalar() {
            return Err(Error::NonScalarOutput(out_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Some(prim) = &node.prim {
                let contributions = self.vjp(node, prim, &g, rule);
                for (input, contribution) in node.inputs.iter().zip(contributions) {
                    let Some(c) = contribution else { continue };
                    match &mut grads[input.0] {
                        Some(acc) => {
                            for (a, v) in acc.iter_mut().zip(&c) {
                                *a += v;
                            }
                        }
                        slot @ None => *slot = Some(c),
                    }
                }
            }
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn vjp(&self, node: &Node, prim: &Primitive, g: &[f64], rule: ReluRule) -> Vec<Option<Vec<f64>>> {
        let input = |k: usize| &self.nodes[node.inputs[k].0].value;
        match prim {
            Primitive::MatMul => {
                let (a, b) = (input(0), input(1));
                let (n, k) = (a.shape()[0], a.shape()[1]);
                let m = b.shape()[1];
                vec![
                    Some(ops::matmul_grad_lhs(g, b.data(), n, k, m)),
                    Some(ops::matmul_grad_rhs(a.data(), g, n, k, m)),
                ]
            }
            Primitive::AddBias => {
                let x = input(0);
                let channels = input(1).len();
                let inner = if x.shape().len() == 4 {
                    x.shape()[2] * x.shape()[3]
                } else {
                    1
                };
                let mut db = vec![0.0; channels];
                for (i, v) in g.iter().enumerate() {
                    db[(i / inner) % channels] += v;
                }
                vec![Some(g.to_vec()), Some(db)]
            }
            Primitive::Relu => {
                let x = input(0).data();
                let dx = x
                    .iter()
                    .zip(g)
                    .map(|(&xv, &gv)| match rule {
                        ReluRule::Standard => {
                            if xv > 0.0 {
                                gv
                            } else {
                                0.0
                            }
                        }
                        ReluRule::Guided => {
                            if xv > 0.0 && gv > 0.0 {
                                gv
                            } else {
                                0.0
                            }
                        }
                        ReluRule::Deconv => gv.max(0.0),
                    })
                    .collect();
                vec![Some(dx)]
            }
            Primitive::Conv2d(attrs) => {
                let (dx, dw, db) = ops::conv2d_backward(input(0), input(1), g, *attrs);
                vec![Some(dx), Some(dw), Some(db)]
            }
            Primitive::MaxPool2d(_) => {
                let mut dx = vec![0.0; input(0).len()];
                for (&src, &gv) in node.aux.iter().zip(g) {
                    dx[src] += gv;
                }
                vec![Some(dx)]
            }
            Primitive::Reshape(_) => vec![Some(g.to_vec())],
            Primitive::Softmax => {
                let y = node.value.data();
                let k = node.value.shape()[1];
                let mut dx = vec![0.0; y.len()];
                for ((yr, gr), dr) in y.chunks(k).zip(g.chunks(k)).zip(dx.chunks_mut(k)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                vec![Some(dx)]
            }
            Primitive::CrossEntropy(labels) => {
                let x = input(0);
                let k = x.shape()[1];
                let n = labels.len() as f64;
                let scale = g[0] / n;
                let mut dx = vec![0.0; x.len()];
                for (i, (row, out)) in x.data().chunks(k).zip(dx.chunks_mut(k)).enumerate() {
                    ops::softmax_row(row, out);
                    out[labels[i]] -= 1.0;
                    for v in out.iter_mut() {
                        *v *= scale;
                    }
                }
                vec![Some(dx)]
            }
            Primitive::PickSum(classes) => {
                let x = input(0);
                let k = x.shape()[1];
                let mut dx = vec![0.0; x.len()];
                for (i, &c) in classes.iter().enumerate() {
                    dx[i * k + c] = g[0];
                }
                vec![Some(dx)]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn linear_gradient_is_weight() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 3], &[0.5, -2.0, 4.0]));
        let w = tape.leaf(t(&[3, 1], &[1.5, -0.25, 3.0]));
        let y = tape.matmul(x, w).unwrap();
        let f = tape.pick_sum(y, vec![0]).unwrap();
        let grads = tape.backward(f).unwrap();
        assert_eq!(grads.wrt(x).data(), &[1.5, -0.25, 3.0]);
    }

    #[test]
    fn relu_gradient_on_each_side_and_at_zero() {
        for (x0, expected) in [(-1.0, 0.0), (2.0, 1.0), (0.0, 0.0)] {
            let mut tape = Tape::new();
            let x = tape.leaf(t(&[1, 1], &[x0]));
            let r = tape.relu(x).unwrap();
            let f = tape.pick_sum(r, vec![0]).unwrap();
            assert_eq!(tape.backward(f).unwrap().wrt(x).data(), &[expected]);
        }
    }

    #[test]
    fn unused_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[1.0, 2.0]));
        let unused = tape.leaf(t(&[2], &[7.0, 7.0]));
        let f = tape.pick_sum(x, vec![1]).unwrap();
        let grads = tape.backward(f).unwrap();
        assert_eq!(grads.wrt(unused).data(), &[0.0, 0.0]);
        assert_eq!(grads.wrt(x).data(), &[0.0, 1.0]);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 2], &[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarOutput(_))));
    }

    fn single_relu(x0: f64, upstream: f64, rule: ReluRule) -> f64 {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1], &[x0]));
        let r = tape.relu(x).unwrap();
        let scale = tape.leaf(t(&[1, 1], &[upstream]));
        let y = tape.matmul(r, scale).unwrap();
        let f = tape.pick_sum(y, vec![0]).unwrap();
        tape.backward_with(f, rule).unwrap().wrt(x).data()[0]
    }

    #[test]
    fn guided_and_deconv_rules() {
        assert_eq!(single_relu(-1.0, 1.0, ReluRule::Guided), 0.0);
        assert_eq!(single_relu(-1.0, 1.0, ReluRule::Deconv), 1.0);
        assert_eq!(single_relu(1.0, -1.0, ReluRule::Guided), 0.0);
        assert_eq!(single_relu(1.0, -1.0, ReluRule::Deconv), 0.0);
        assert_eq!(single_relu(1.0, 2.0, ReluRule::Guided), 2.0);
    }

    #[test]
    fn rules_agree_without_relu() {
        let build = |rule| {
            let mut tape = Tape::new();
            let x = tape.leaf(t(&[1, 2], &[0.3, -0.7]));
            let w = tape.leaf(t(&[2, 2], &[1.0, -2.0, 0.5, 3.0]));
            let y = tape.matmul(x, w).unwrap();
            let f = tape.pick_sum(y, vec![1]).unwrap();
            tape.backward_with(f, rule).unwrap().wrt(x)
        };
        let plain = build(ReluRule::Standard);
        assert_eq!(plain, build(ReluRule::Guided));
        assert_eq!(plain, build(ReluRule::Deconv));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[0.1, -0.2, 0.3, 1.0, 2.0, -3.0]));
        let w = tape.leaf(t(&[3, 2], &[0.5, -1.0, 2.0, 0.25, -0.75, 1.5]));
        let y = tape.matmul(x, w).unwrap();
        let r = tape.relu(y).unwrap();
        let s = tape.softmax(r).unwrap();
        let _ = tape.cross_entropy(s, vec![0, 1]).unwrap();
        let replayed = tape.replay().unwrap();
        for (i, v) in replayed.iter().enumerate() {
            assert_eq!(v, tape.value(NodeId(i)));
        }
    }
}
