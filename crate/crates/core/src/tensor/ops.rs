use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Spatial padding mode for convolutions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// No padding.
    Valid,
    /// Zero padding so that `out = ceil(in / stride)`; odd leftovers go to the
    /// bottom/right edge.
    Same,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvAttrs {
    pub stride: usize,
    pub padding: Padding,
}

/// Max-pooling window. Inputs narrower than the window pool to a single
/// output covering the whole extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolAttrs {
    pub kernel: usize,
    pub stride: usize,
}

/// Operations the tape knows how to run forward and differentiate.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[n, k] x [k, m] -> [n, m]`
    MatMul,
    /// `[n, m] + [m]`, or `[b, c, h, w] + [c]` for channel biases.
    AddBias,
    Relu,
    /// input `[b, c, h, w]`, weight `[o, c, kh, kw]`, bias `[o]`.
    Conv2d(ConvAttrs),
    MaxPool2d(PoolAttrs),
    Reshape(Vec<usize>),
    /// Row-wise softmax over the last axis of a `[n, k]` tensor.
    Softmax,
    /// Mean cross-entropy of `[n, k]` logits against class labels.
    CrossEntropy(Vec<usize>),
    /// `sum_i x[i, class_i]` of a `[n, k]` tensor; the scalar used to
    /// differentiate a chosen logit per row.
    PickSum(Vec<usize>),
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::AddBias => "add_bias",
            Primitive::Relu => "relu",
            Primitive::Conv2d(_) => "conv2d",
            Primitive::MaxPool2d(_) => "maxpool2d",
            Primitive::Reshape(_) => "reshape",
            Primitive::Softmax => "softmax",
            Primitive::CrossEntropy(_) => "cross_entropy",
            Primitive::PickSum(_) => "pick_sum",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Primitive::MatMul | Primitive::AddBias => 2,
            Primitive::Conv2d(_) => 3,
            _ => 1,
        }
    }
}

/// Evaluates one primitive on concrete inputs.
pub fn forward_primitive(prim: &Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
    forward(prim, inputs).map(|(t, _)| t)
}

/// Output size and leading pad of one spatial axis of a convolution.
pub(crate) fn conv_geometry(
    input: usize,
    kernel: usize,
    attrs: ConvAttrs,
) -> Option<(usize, usize)> {
    if attrs.stride == 0 || kernel == 0 {
        return None;
    }
    match attrs.padding {
        Padding::Valid => {
            if input < kernel {
                None
            } else {
                Some(((input - kernel) / attrs.stride + 1, 0))
            }
        }
        Padding::Same => {
            let out = input.div_ceil(attrs.stride);
            let total = ((out - 1) * attrs.stride + kernel).saturating_sub(input);
            Some((out, total / 2))
        }
    }
}

pub(crate) fn pool_geometry(input: usize, attrs: PoolAttrs) -> Option<usize> {
    if attrs.kernel == 0 || attrs.stride == 0 {
        return None;
    }
    Some(if input >= attrs.kernel {
        (input - attrs.kernel) / attrs.stride + 1
    } else {
        1
    })
}

fn dims4(op: &'static str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => Err(Error::shape(op, format!("expected a rank-4 tensor, got {s:?}"))),
    }
}

fn dims2(op: &'static str, t: &Tensor) -> Result<[usize; 2]> {
    match *t.shape() {
        [a, b] => Ok([a, b]),
        ref s => Err(Error::shape(op, format!("expected a rank-2 tensor, got {s:?}"))),
    }
}

fn check_labels(op: &'static str, labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape(
            op,
            format!("{} labels for {rows} rows", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::shape(op, format!("class {bad} out of range for {classes} columns")));
    }
    Ok(())
}

/// Runs a primitive, returning its value and any indices the backward pass
/// needs (the argmax positions of a max pool).
pub(crate) fn forward(prim: &Primitive, inputs: &[&Tensor]) -> Result<(Tensor, Vec<usize>)> {
    if inputs.len() != prim.arity() {
        return Err(Error::shape(
            prim.name(),
            format!("expected {} inputs, got {}", prim.arity(), inputs.len()),
        ));
    }
    match prim {
        Primitive::MatMul => {
            let [n, k] = dims2("matmul", inputs[0])?;
            let [k2, m] = dims2("matmul", inputs[1])?;
            if k != k2 {
                return Err(Error::shape(
                    "matmul",
                    format!("{:?} x {:?}", inputs[0].shape(), inputs[1].shape()),
                ));
            }
            let a = inputs[0].data();
            let b = inputs[1].data();
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                let row = &mut out[i * m..(i + 1) * m];
                for (kk, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
                    if av == 0.0 {
                        continue;
                    }
                    for (o, &bv) in row.iter_mut().zip(&b[kk * m..(kk + 1) * m]) {
                        *o += av * bv;
                    }
                }
            }
            Ok((Tensor::new(vec![n, m], out)?, Vec::new()))
        }
        Primitive::AddBias => {
            let x = inputs[0];
            let bias = inputs[1];
            let channels = match x.shape() {
                [_, m] => *m,
                [_, c, _, _] => *c,
                s => return Err(Error::shape("add_bias", format!("input shape {s:?}"))),
            };
            if bias.shape() != [channels] {
                return Err(Error::shape(
                    "add_bias",
                    format!("input {:?} with bias {:?}", x.shape(), bias.shape()),
                ));
            }
            let inner = if x.shape().len() == 4 {
                x.shape()[2] * x.shape()[3]
            } else {
                1
            };
            let b = bias.data();
            let data = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + b[(i / inner) % channels])
                .collect();
            Ok((Tensor::new(x.shape().to_vec(), data)?, Vec::new()))
        }
        Primitive::Relu => {
            let x = inputs[0];
            let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
            Ok((Tensor::new(x.shape().to_vec(), data)?, Vec::new()))
        }
        Primitive::Conv2d(attrs) => {
            let out = conv2d_forward(inputs[0], inputs[1], inputs[2], *attrs)?;
            Ok((out, Vec::new()))
        }
        Primitive::MaxPool2d(attrs) => maxpool_forward(inputs[0], *attrs),
        Primitive::Reshape(shape) => {
            let t = inputs[0].clone().reshape(shape.clone())?;
            Ok((t, Vec::new()))
        }
        Primitive::Softmax => {
            let [n, k] = dims2("softmax", inputs[0])?;
            let x = inputs[0].data();
            let mut out = vec![0.0; n * k];
            for i in 0..n {
                softmax_row(&x[i * k..(i + 1) * k], &mut out[i * k..(i + 1) * k]);
            }
            Ok((Tensor::new(vec![n, k], out)?, Vec::new()))
        }
        Primitive::CrossEntropy(labels) => {
            let [n, k] = dims2("cross_entropy", inputs[0])?;
            check_labels("cross_entropy", labels, n, k)?;
            let x = inputs[0].data();
            let mut total = 0.0;
            for (i, &label) in labels.iter().enumerate() {
                let row = &x[i * k..(i + 1) * k];
                total += log_sum_exp(row) - row[label];
            }
            Ok((Tensor::scalar(total / n as f64), Vec::new()))
        }
        Primitive::PickSum(classes) => {
            let [n, k] = dims2("pick_sum", inputs[0])?;
            check_labels("pick_sum", classes, n, k)?;
            let x = inputs[0].data();
            let total = classes.iter().enumerate().map(|(i, &c)| x[i * k + c]).sum();
            Ok((Tensor::scalar(total), Vec::new()))
        }
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn conv2d_forward(x: &Tensor, w: &Tensor, bias: &Tensor, attrs: ConvAttrs) -> Result<Tensor> {
    let [b, c, h, wd] = dims4("conv2d", x)?;
    let [o, c2, kh, kw] = dims4("conv2d", w)?;
    if c != c2 || bias.shape() != [o] {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                bias.shape()
            ),
        ));
    }
    let (oh, pt) = conv_geometry(h, kh, attrs).ok_or_else(|| {
        Error::shape("conv2d", format!("kernel {kh} does not fit input height {h}"))
    })?;
    let (ow, pl) = conv_geometry(wd, kw, attrs).ok_or_else(|| {
        Error::shape("conv2d", format!("kernel {kw} does not fit input width {wd}"))
    })?;
    let s = attrs.stride;
    let xd = x.data();
    let wdata = w.data();
    let mut out = vec![0.0; b * o * oh * ow];
    for bi in 0..b {
        for oc in 0..o {
            let base_out = (bi * o + oc) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.data()[oc];
                    for ic in 0..c {
                        let xbase = (bi * c + ic) * h * wd;
                        let wbase = (oc * c + ic) * kh * kw;
                        for ky in 0..kh {
                            let iy = (oy * s + ky) as isize - pt as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            for kx in 0..kw {
                                let ix = (ox * s + kx) as isize - pl as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                acc += xd[xbase + iy * wd + ix as usize]
                                    * wdata[wbase + ky * kw + kx];
                            }
                        }
                    }
                    out[base_out + oy * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![b, o, oh, ow], out)
}

/// Gradients of a convolution with respect to input, weight and bias.
pub(crate) fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    grad: &[f64],
    attrs: ConvAttrs,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let [b, c, h, wd] = dims4("conv2d", x).expect("validated in forward");
    let [o, _, kh, kw] = dims4("conv2d", w).expect("validated in forward");
    let (oh, pt) = conv_geometry(h, kh, attrs).expect("validated in forward");
    let (ow, pl) = conv_geometry(wd, kw, attrs).expect("validated in forward");
    let s = attrs.stride;
    let xd = x.data();
    let wdata = w.data();
    let mut dx = vec![0.0; xd.len()];
    let mut dw = vec![0.0; wdata.len()];
    let mut db = vec![0.0; o];
    for bi in 0..b {
        for oc in 0..o {
            let base_out = (bi * o + oc) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = grad[base_out + oy * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    db[oc] += g;
                    for ic in 0..c {
                        let xbase = (bi * c + ic) * h * wd;
                        let wbase = (oc * c + ic) * kh * kw;
                        for ky in 0..kh {
                            let iy = (oy * s + ky) as isize - pt as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            for kx in 0..kw {
                                let ix = (ox * s + kx) as isize - pl as isize;
                                if ix < 0 || ix >= wd as isize {
                                    continue;
                                }
                                let xi = xbase + iy * wd + ix as usize;
                                let wi = wbase + ky * kw + kx;
                                dw[wi] += g * xd[xi];
                                dx[xi] += g * wdata[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dw, db)
}

fn maxpool_forward(x: &Tensor, attrs: PoolAttrs) -> Result<(Tensor, Vec<usize>)> {
    let [b, c, h, w] = dims4("maxpool2d", x)?;
    let oh = pool_geometry(h, attrs)
        .ok_or_else(|| Error::shape("maxpool2d", "kernel and stride must be positive"))?;
    let ow = pool_geometry(w, attrs)
        .ok_or_else(|| Error::shape("maxpool2d", "kernel and stride must be positive"))?;
    let xd = x.data();
    let mut out = Vec::with_capacity(b * c * oh * ow);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            let y0 = oy * attrs.stride;
            let y1 = (y0 + attrs.kernel).min(h);
            for ox in 0..ow {
                let x0 = ox * attrs.stride;
                let x1 = (x0 + attrs.kernel).min(w);
                // first maximal element in row-major order wins ties
                let mut best = base + y0 * w + x0;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let idx = base + iy * w + ix;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                out.push(xd[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![b, c, oh, ow], out)?, argmax))
}

/// `g @ b^T` for `g: [n, m]`, `b: [k, m]`.
pub(crate) fn matmul_grad_lhs(g: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for kk in 0..k {
            let brow = &b[kk * m..(kk + 1) * m];
            out[i * k + kk] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a^T @ g` for `a: [n, k]`, `g: [n, m]`.
pub(crate) fn matmul_grad_rhs(a: &[f64], g: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == 0.0 {
                continue;
            }
            for (o, &gv) in out[kk * m..(kk + 1) * m].iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_clamps_negatives() {
        let out = forward_primitive(&Primitive::Relu, &[&t(&[3], &[-1.0, 0.0, 2.0])]).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let out = forward_primitive(&Primitive::Softmax, &[&t(&[1, 2], &[0.0, 0.0])]).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let err = forward_primitive(
            &Primitive::MatMul,
            &[&t(&[2, 3], &[0.0; 6]), &t(&[2, 2], &[0.0; 4])],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[2, 2]"));
    }

    #[test]
    fn same_padding_geometry() {
        let attrs = ConvAttrs {
            stride: 1,
            padding: Padding::Same,
        };
        assert_eq!(conv_geometry(8, 2, attrs), Some((8, 0)));
        assert_eq!(conv_geometry(64, 4, attrs), Some((64, 1)));
        let valid = ConvAttrs {
            stride: 1,
            padding: Padding::Valid,
        };
        assert_eq!(conv_geometry(4, 2, valid), Some((3, 0)));
        assert_eq!(conv_geometry(1, 2, valid), None);
    }

    #[test]
    fn pool_geometry_halves_and_clamps() {
        let p = PoolAttrs { kernel: 2, stride: 2 };
        let dims: Vec<usize> = [8, 4, 2, 1].iter().map(|&d| pool_geometry(d, p).unwrap()).collect();
        assert_eq!(dims, vec![4, 2, 1, 1]);
        let p1 = PoolAttrs { kernel: 2, stride: 1 };
        assert_eq!(pool_geometry(64, p1), Some(63));
    }

    #[test]
    fn maxpool_ties_go_to_first_element() {
        let x = t(&[1, 1, 2, 2], &[1.0, 1.0, 1.0, 1.0]);
        let (out, argmax) = forward(
            &Primitive::MaxPool2d(PoolAttrs { kernel: 2, stride: 2 }),
            &[&x],
        )
        .unwrap();
        assert_eq!(out.data(), &[1.0]);
        assert_eq!(argmax, vec![0]);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let err = forward_primitive(
            &Primitive::CrossEntropy(vec![2]),
            &[&t(&[1, 2], &[0.0, 1.0])],
        )
        .unwrap_err();
        assert!(err.to_string().contains("cross_entropy"));
    }
}
