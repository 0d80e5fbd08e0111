//! Exact optimal transport between importance maps and ground-truth masks.
//!
//! ```text
//! cargo run --release --example earth_movers_score -- [--large]
//! ```
//! `--large` also times one 64x64 map against a 512-pixel mask.

use std::time::Instant;

use attribution_bench::datagen::Mask;
use attribution_bench::metrics::{emd_score, ima_score, max_distance, optimal_transport_cost, precision_score, MassDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn square_mask(side: usize, top: usize, left: usize, size: usize) -> Mask {
    let data = (0..side * side)
        .map(|i| (top..top + size).contains(&(i / side)) && (left..left + size).contains(&(i % side)))
        .collect();
    Mask::new(side, data).expect("square fits")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Two point masses: the cost is their Euclidean distance.
    let a = MassDistribution::new(vec![(0.0, 0.0)], vec![1.0])?;
    let b = MassDistribution::new(vec![(3.0, 4.0)], vec![1.0])?;
    println!("point to point: {}", optimal_transport_cost(&a, &b)?);

    let side = 8;
    let mask = square_mask(side, 2, 2, 3);
    let on_mask: Vec<f64> = mask.data().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let mut corner = vec![0.0; side * side];
    corner[side * side - 1] = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let random: Vec<f64> = (0..side * side).map(|_| rng.random::<f64>()).collect();

    println!("\n8x8, 3x3 mask, max distance {:.3}", max_distance(side));
    println!("{:<12} {:>6} {:>6} {:>9}", "map", "emd", "ima", "precision");
    for (name, map) in [("on mask", &on_mask), ("far corner", &corner), ("uniform rnd", &random)] {
        let (emd, _) = emd_score(map, &mask)?;
        let (ima, _) = ima_score(map, &mask)?;
        let precision = precision_score(map, &mask)?;
        println!("{name:<12} {emd:>6.3} {ima:>6.3} {precision:>9.3}");
    }

    if std::env::args().any(|a| a == "--large") {
        let side = 64;
        let data: Vec<bool> = (0..side * side).map(|i| (i / side) % 8 == 0).collect();
        let mask = Mask::new(side, data)?;
        let map: Vec<f64> = (0..side * side).map(|_| rng.random::<f64>()).collect();
        let start = Instant::now();
        let (emd, _) = emd_score(&map, &mask)?;
        println!(
            "\n64x64 random map vs {}-pixel mask: emd {emd:.4} in {:.1}s",
            mask.count(),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
