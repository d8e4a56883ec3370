//! Codebook initialization by k-means++ seeding followed by Lloyd iterations.

use crate::error::{Error, Result};
use crate::numerics::{sq_dist, Matrix, Rng};

use super::codebook::PersonaCodebook;

pub const DUPLICATE_JITTER: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansReport {
    pub iterations: usize,
    pub converged: bool,
    /// Codes filled with jittered copies because there were fewer distinct
    /// samples than codes.
    pub jittered_codes: usize,
    pub cluster_sizes: Vec<usize>,
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (m, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = m;
        }
    }
    (best, best_d)
}

/// k-means++ seeding. Returns the distinct seeds found (at most `k`).
fn seed_centers(samples: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![samples[rng.below(samples.len())].clone()];
    let mut dist: Vec<f64> = samples.iter().map(|s| sq_dist(s, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let mut target = rng.uniform() * total;
        let mut pick = None;
        for (i, &d) in dist.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            pick = Some(i);
            if target < d {
                break;
            }
            target -= d;
        }
        let chosen = samples[pick.expect("positive total has a positive entry")].clone();
        for (d, s) in dist.iter_mut().zip(samples) {
            *d = d.min(sq_dist(s, &chosen));
        }
        centers.push(chosen);
    }
    centers
}

/// Runs k-means on `samples` and turns the result into a codebook.
///
/// EMA counts start at the cluster sizes rescaled to mean one, and sums at
/// `count · code`. When there are fewer distinct samples than codes the
/// remaining codes are jittered copies of the seeds (a warning is logged).
pub fn kmeans_init(
    samples: &[Vec<f64>],
    num_codes: usize,
    rng: &mut Rng,
    max_iters: usize,
    decay: f64,
    epsilon: f64,
) -> Result<(PersonaCodebook, KMeansReport)> {
    if num_codes == 0 {
        return Err(Error::Config("codebook size must be at least 1".into()));
    }
    if samples.is_empty() {
        return Err(Error::Config("k-means needs at least one sample".into()));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::Shape("k-means samples have mixed dimensions".into()));
    }

    let mut centers = seed_centers(samples, num_codes, rng);
    let distinct = centers.len();
    let jittered_codes = num_codes - distinct;
    if jittered_codes > 0 {
        log::warn!(
            "k-means: only {distinct} distinct samples for {num_codes} codes; \
             filling {jittered_codes} codes with jittered duplicates"
        );
        for j in 0..jittered_codes {
            let base = centers[j % distinct].clone();
            let jittered = base.iter().map(|x| x + DUPLICATE_JITTER * rng.normal()).collect();
            centers.push(jittered);
        }
    }

    let mut assign = vec![usize::MAX; samples.len()];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let mut changed = false;
        for (a, s) in assign.iter_mut().zip(samples) {
            let (m, _) = nearest(s, &centers);
            if *a != m {
                *a = m;
                changed = true;
            }
        }
        if !changed {
            converged = true;
            break;
        }
        let mut sums = vec![vec![0.0; dim]; num_codes];
        let mut sizes = vec![0usize; num_codes];
        for (&m, s) in assign.iter().zip(samples) {
            sizes[m] += 1;
            for (acc, x) in sums[m].iter_mut().zip(s) {
                *acc += x;
            }
        }
        for m in 0..num_codes {
            if sizes[m] > 0 {
                let inv = 1.0 / sizes[m] as f64;
                centers[m] = sums[m].iter().map(|x| x * inv).collect();
            }
        }
    }
    if iterations == 0 || assign.contains(&usize::MAX) {
        for (a, s) in assign.iter_mut().zip(samples) {
            *a = nearest(s, &centers).0;
        }
    }

    let mut cluster_sizes = vec![0usize; num_codes];
    for &m in &assign {
        cluster_sizes[m] += 1;
    }
    let scale = num_codes as f64 / samples.len() as f64;
    let counts = cluster_sizes.iter().map(|&n| n as f64 * scale).collect();
    let codes = Matrix::from_rows(&centers)?;
    let codebook = PersonaCodebook::new(codes, counts, decay, epsilon)?;
    Ok((
        codebook,
        KMeansReport {
            iterations,
            converged,
            jittered_codes,
            cluster_sizes,
        },
    ))
}
