use octsplat::octree::{sample_anchors, Aabb, CellPath, OctreeDensity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::collections::HashMap;

fn random_density(levels: u8, rng: &mut impl Rng) -> OctreeDensity {
    let mut d = OctreeDensity::new(levels, Aabb::cube(1.0)).unwrap();
    for l in 0..levels {
        for code in 0..8u64.pow(l as u32) {
            let mut lg = [0.0; 8];
            for v in &mut lg {
                *v = rng.random_range(-1.5..1.5);
            }
            d.set_logits(CellPath { level: l, code }, lg);
        }
    }
    d
}

fn chi_square_p_value(d: &OctreeDensity, counts: &HashMap<CellPath, usize>, n: usize) -> f64 {
    let mut stat = 0.0;
    let leaves = 8u64.pow(d.levels() as u32);
    for code in 0..leaves {
        let leaf = CellPath { level: d.levels(), code };
        let expected = n as f64 * d.log_prob(&leaf).unwrap().exp();
        let observed = *counts.get(&leaf).unwrap_or(&0) as f64;
        stat += (observed - expected).powi(2) / expected;
    }
    let dist = ChiSquared::new((leaves - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

#[test]
fn single_batch_leaf_frequencies_match_log_prob() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let d = random_density(2, &mut rng);
    let n = 100_000;
    let set = sample_anchors(&d, n, &mut rng);
    let mut counts = HashMap::new();
    for leaf in &set.leaf_indices {
        *counts.entry(*leaf).or_insert(0) += 1;
    }
    let p = chi_square_p_value(&d, &counts, n);
    assert!(p > 0.001, "p = {p}");
}

#[test]
fn repeated_single_draws_are_distributed_as_q() {
    // one anchor per call exercises the random offsets rather than the
    // low-discrepancy allocation inside a batch
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let d = random_density(2, &mut rng);
    let n = 40_000;
    let mut counts = HashMap::new();
    for _ in 0..n {
        let set = sample_anchors(&d, 1, &mut rng);
        *counts.entry(set.leaf_indices[0]).or_insert(0) += 1;
    }
    let p = chi_square_p_value(&d, &counts, n);
    assert!(p > 0.001, "p = {p}");
}
