//! Reverse-mode gradients from the tape, checked against central finite
//! differences on freshly initialised networks of every architecture.

use attribution_bench::models::{ArchKind, ArchitectureSpec, Classifier, Network};
use attribution_bench::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // A hand-sized expression first: f(x) = sum(relu(x W + b)[:, 1]).
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, 3], vec![0.5, -1.0, 2.0])?);
    let w = tape.leaf(Tensor::new(vec![3, 2], vec![1.0, 2.0, 0.5, 1.0, -1.0, 0.25])?);
    let b = tape.leaf(Tensor::new(vec![2], vec![0.1, 0.2])?);
    let z = tape.matmul(x, w)?;
    let z = tape.add_bias(z, b)?;
    let h = tape.relu(z)?;
    let out = tape.pick_sum(h, vec![1])?;
    let grads = tape.backward(out)?;
    println!("f = {:.4}", tape.value(out).data()[0]);
    println!("df/dx = {:?}  (second column of W where the unit is active)", grads.wrt(x).data());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let h = 1e-5;
    for (i, kind) in ArchKind::ALL.into_iter().enumerate() {
        let net = Network::new(ArchitectureSpec::new(kind, 8), i as u64)?;
        let input = Tensor::new(vec![1, 64], (0..64).map(|_| rng.random_range(-1.0..1.0)).collect())?;
        let mut tape = Tape::new();
        let (leaf, _, logits) = net.record_fresh(&mut tape, input.clone())?;
        let out = tape.pick_sum(logits, vec![1])?;
        let analytic = tape.backward(out)?.take(leaf);
        let mut worst: f64 = 0.0;
        for j in 0..64 {
            let mut plus = input.clone();
            plus.data_mut()[j] += h;
            let mut minus = input.clone();
            minus.data_mut()[j] -= h;
            let numeric = (net.logits(&plus)?.data()[1] - net.logits(&minus)?.data()[1]) / (2.0 * h);
            let a = analytic.data()[j];
            let scale = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / scale);
        }
        println!("{kind}: {} parameters, worst relative input-gradient error {worst:.2e}", net.parameter_count());
    }
    Ok(())
}
