use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{normalized_sum, SparseVector};

const ITERATIONS: usize = 10;

/// Spherical 2-means over unit vectors. The first center is drawn from
/// `seed`, the second is the point least similar to it. Runs a fixed number
/// of rounds; ties go to cluster 0. Returns one label per input.
pub fn spherical_two_means(vectors: &[&SparseVector], dim: usize, seed: u64) -> Vec<usize> {
    let n = vectors.len();
    if n < 2 {
        return vec![0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.random_range(0..n);
    let second = (0..n)
        .filter(|&i| i != first)
        .min_by(|&a, &b| {
            vectors[first]
                .cosine(vectors[a])
                .total_cmp(&vectors[first].cosine(vectors[b]))
                .then(a.cmp(&b))
        })
        .expect("n >= 2");
    let mut centers = [vectors[first].clone(), vectors[second].clone()];
    let mut labels = vec![0; n];
    for _ in 0..ITERATIONS {
        for (label, v) in labels.iter_mut().zip(vectors) {
            *label = usize::from(v.cosine(&centers[1]) > v.cosine(&centers[0]));
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&SparseVector> = vectors
                .iter()
                .zip(&labels)
                .filter(|(_, &l)| l == c)
                .map(|(v, _)| *v)
                .collect();
            if !members.is_empty() {
                *center = normalized_sum(members, dim);
            }
        }
    }
    labels
}
