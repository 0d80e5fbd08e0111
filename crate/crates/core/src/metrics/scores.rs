use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::transport::{optimal_transport_cost, MassDistribution};
use crate::datagen::Mask;
use crate::error::{Error, Result};
use crate::explain::ImportanceMap;

/// Normalised weights below this are dropped before transport.
pub const PRUNE_BELOW: f64 = 1e-12;

/// Largest ground distance on a `side x side` grid, corner to corner.
pub fn max_distance(side: usize) -> f64 {
    std::f64::consts::SQRT_2 * (side as f64 - 1.0)
}

fn coords(side: usize) -> Vec<(f64, f64)> {
    (0..side * side).map(|i| ((i / side) as f64, (i % side) as f64)).collect()
}

fn check(scores: &[f64], mask: &Mask) -> Result<()> {
    if scores.len() != mask.data().len() {
        return Err(Error::shape("metric", format!("{} scores for a {}-pixel mask", scores.len(), mask.data().len())));
    }
    if mask.is_empty() {
        return Err(Error::InvalidArgument("ground-truth mask is empty".into()));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("importance map has non-finite scores".into()));
    }
    Ok(())
}

/// `1 - OT(|s|, mask) / max_distance`, with the mask as uniform unit mass.
/// Returns `(0, true)` for an all-zero map.
pub fn emd_score(scores: &[f64], mask: &Mask) -> Result<(f64, bool)> {
    check(scores, mask)?;
    let side = mask.side();
    if side < 2 {
        return Ok((1.0, false));
    }
    let pts = coords(side);
    let magnitudes: Vec<f64> = scores.iter().map(|v| v.abs()).collect();
    let Some(supply) = MassDistribution::from_values(&pts, &magnitudes, PRUNE_BELOW) else {
        return Ok((0.0, true));
    };
    let on: Vec<f64> = mask.data().iter().map(|&b| b as u8 as f64).collect();
    let demand = MassDistribution::from_values(&pts, &on, 0.0).expect("nonempty mask")?;
    let cost = optimal_transport_cost(&supply?, &demand)?;
    Ok(((1.0 - cost / max_distance(side)).clamp(0.0, 1.0), false))
}

/// Share of total `|s|` that falls on the mask. Returns `(0, true)` for an
/// all-zero map.
pub fn ima_score(scores: &[f64], mask: &Mask) -> Result<(f64, bool)> {
    check(scores, mask)?;
    let total: f64 = scores.iter().map(|v| v.abs()).sum();
    if !(total > 0.0) {
        return Ok((0.0, true));
    }
    let inside: f64 = scores.iter().zip(mask.data()).filter(|(_, &m)| m).map(|(v, _)| v.abs()).sum();
    Ok(((inside / total).clamp(0.0, 1.0), false))
}

/// Fraction of the `k = |mask|` largest `|s|` that lie on the mask; ties go
/// to the lower row-major index.
pub fn precision_score(scores: &[f64], mask: &Mask) -> Result<f64> {
    check(scores, mask)?;
    let k = mask.count();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].abs().total_cmp(&scores[a].abs()).then(a.cmp(&b)));
    let hits = order[..k].iter().filter(|&&i| mask.data()[i]).count();
    Ok(hits as f64 / k as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub sample_id: usize,
    pub method: String,
    pub emd: f64,
    pub ima: f64,
    pub precision: f64,
    /// Set when the map carried no mass.
    pub degenerate: bool,
}

pub fn score_map(map: &ImportanceMap, mask: &Mask) -> Result<MetricResult> {
    let scores = map.grid.data();
    let (emd, flat) = emd_score(scores, mask)?;
    let (ima, _) = ima_score(scores, mask)?;
    Ok(MetricResult {
        sample_id: map.sample_id,
        method: map.method.clone(),
        emd,
        ima,
        precision: precision_score(scores, mask)?,
        degenerate: flat,
    })
}

/// Scores each map against the mask at the same position, in parallel.
pub fn score_all(maps: &[ImportanceMap], masks: &[&Mask]) -> Result<Vec<MetricResult>> {
    if maps.len() != masks.len() {
        return Err(Error::InvalidArgument(format!("{} maps but {} masks", maps.len(), masks.len())));
    }
    maps.par_iter().zip(masks.par_iter()).map(|(m, k)| score_map(m, k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::ImageGrid;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_from(side: usize, cells: &[(usize, usize)]) -> Mask {
        let mut data = vec![false; side * side];
        for &(r, c) in cells {
            data[r * side + c] = true;
        }
        Mask::new(side, data).unwrap()
    }

    fn indicator(mask: &Mask) -> Vec<f64> {
        mask.data().iter().map(|&b| b as u8 as f64).collect()
    }

    /// The 8x8 "T" tetromino used for the subset/outline comparison.
    fn tee() -> Mask {
        mask_from(8, &[(2, 2), (2, 3), (2, 4), (2, 5), (3, 2), (3, 3), (3, 4), (3, 5), (4, 3), (4, 4), (5, 3), (5, 4)])
    }

    #[test]
    fn perfect_map_scores_one() {
        let mask = tee();
        let s = indicator(&mask);
        assert!((emd_score(&s, &mask).unwrap().0 - 1.0).abs() < 1e-12);
        assert_eq!(ima_score(&s, &mask).unwrap(), (1.0, false));
        assert_eq!(precision_score(&s, &mask).unwrap(), 1.0);
    }

    #[test]
    fn max_distance_is_corner_to_corner() {
        assert!((max_distance(64) - 63.0 * 2f64.sqrt()).abs() < 1e-12);
        let mask = mask_from(8, &[(7, 7)]);
        let mut s = vec![0.0; 64];
        s[0] = 1.0;
        assert!(emd_score(&s, &mask).unwrap().0.abs() < 1e-12);
    }

    #[test]
    fn uniform_and_half_mass_ima() {
        let mask = tee();
        let (k, d) = (mask.count() as f64, 64.0);
        assert!((ima_score(&[0.3; 64], &mask).unwrap().0 - k / d).abs() < 1e-12);
        let mut s = vec![0.0; 64];
        s[0] = 2.0;
        s[2 * 8 + 2] = -2.0;
        assert_eq!(ima_score(&s, &mask).unwrap().0, 0.5);
    }

    #[test]
    fn disjoint_top_k_has_zero_precision() {
        let mask = mask_from(4, &[(0, 0), (0, 1)]);
        let mut s = vec![0.1; 16];
        s[15] = 5.0;
        s[14] = -4.0;
        assert_eq!(precision_score(&s, &mask).unwrap(), 0.0);
        // ties resolve row-major, so a flat map picks the first k pixels
        assert_eq!(precision_score(&[1.0; 16], &mask).unwrap(), 1.0);
    }

    #[test]
    fn zero_maps_are_flagged() {
        let mask = tee();
        assert_eq!(emd_score(&[0.0; 64], &mask).unwrap(), (0.0, true));
        assert_eq!(ima_score(&[0.0; 64], &mask).unwrap(), (0.0, true));
        assert!(emd_score(&[1.0; 64], &Mask::empty(8)).is_err());
    }

    #[test]
    fn subset_beats_outline() {
        // a compact subset of the mask versus a ring hugging its outline
        let mask = tee();
        let subset = indicator(&mask_from(8, &[(2, 3), (3, 3), (3, 4), (4, 4)]));
        let mut outline = vec![0.0; 64];
        for r in 0..8usize {
            for c in 0..8usize {
                let near = (-1i32..=1).any(|dr| {
                    (-1i32..=1).any(|dc| {
                        let (rr, cc) = (r as i32 + dr, c as i32 + dc);
                        (0..8).contains(&rr) && (0..8).contains(&cc) && mask.get(rr as usize, cc as usize)
                    })
                });
                if near && !mask.get(r, c) {
                    outline[r * 8 + c] = 1.0;
                }
            }
        }
        let (a, _) = emd_score(&subset, &mask).unwrap();
        let (b, _) = emd_score(&outline, &mask).unwrap();
        assert!(a > b, "{a} vs {b}");
    }

    #[test]
    fn random_map_precision_is_chance() {
        let mask = tee();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let draws = 10_000;
        let values: Vec<f64> = (0..draws)
            .map(|_| {
                let s: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
                precision_score(&s, &mask).unwrap()
            })
            .collect();
        let mean = values.iter().sum::<f64>() / draws as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        let expected = mask.count() as f64 / 64.0;
        assert!((mean - expected).abs() < 3.0 * se, "{mean} vs {expected} (se {se})");
    }

    #[test]
    fn moving_mass_away_never_helps() {
        let mask = mask_from(8, &[(3, 3), (3, 4), (4, 3), (4, 4)]);
        let mut s = vec![0.0; 64];
        s[3 * 8 + 3] = 1.0;
        s[5 * 8 + 5] = 1.0;
        let mut last = emd_score(&s, &mask).unwrap().0;
        for step in 6..8 {
            let mut t = vec![0.0; 64];
            t[3 * 8 + 3] = 1.0;
            t[step * 8 + step] = 1.0;
            let now = emd_score(&t, &mask).unwrap().0;
            assert!(now <= last + 1e-12);
            last = now;
        }
    }

    #[test]
    fn score_all_is_positional() {
        let masks = [tee(), mask_from(8, &[(0, 0)])];
        let maps: Vec<ImportanceMap> = (0..2)
            .map(|i| ImportanceMap {
                grid: ImageGrid::new(8, indicator(&masks[i])).unwrap(),
                method: "input".into(),
                sample_id: i,
                signed: false,
                provenance: serde_json::Value::Null,
            })
            .collect();
        let out = score_all(&maps, &[&masks[0], &masks[1]]).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|r| r.precision == 1.0));
        let swapped = score_all(&[maps[1].clone(), maps[0].clone()], &[&masks[1], &masks[0]]).unwrap();
        assert_eq!(swapped[0], out[1]);
        assert_eq!(swapped[1], out[0]);
    }

    #[test]
    fn large_instance_solves() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let side = 32;
        let cells: Vec<(usize, usize)> = (10..18).flat_map(|r| (5..21).map(move |c| (r, c))).collect();
        let mask = mask_from(side, &cells);
        let s: Vec<f64> = (0..side * side).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (emd, flat) = emd_score(&s, &mask).unwrap();
        assert!(!flat && (0.0..=1.0).contains(&emd));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn metrics_are_scale_invariant(seed in 0u64..1_000_000, c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scaled: Vec<f64> = s.iter().map(|v| v * c).collect();
            let mask = tee();
            let (e1, _) = emd_score(&s, &mask).unwrap();
            let (e2, _) = emd_score(&scaled, &mask).unwrap();
            prop_assert!((e1 - e2).abs() < 1e-9);
            prop_assert!((ima_score(&s, &mask).unwrap().0 - ima_score(&scaled, &mask).unwrap().0).abs() < 1e-12);
            prop_assert_eq!(precision_score(&s, &mask).unwrap(), precision_score(&scaled, &mask).unwrap());
            prop_assert!((0.0..=1.0).contains(&e1));
        }
    }
}
