//! Fits a codebook to well-separated Gaussian clusters with k-means++ and
//! EMA updates, then shows how close each code sits to a true center.
//!
//!     cargo run --release --example vq_recovery -- [SEED]

use std::error::Error;

use persona_vq::numerics::{sq_dist, Rng};
use persona_vq::persona::kmeans_init;

const CLUSTERS: usize = 4;
const DIM: usize = 8;
const PER_CLUSTER: usize = 50;
const NOISE: f64 = 0.05;

fn main() -> Result<(), Box<dyn Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let mut rng = Rng::new(seed);
    let centers: Vec<Vec<f64>> = (0..CLUSTERS).map(|_| rng.normal_vec(DIM)).collect();
    let samples: Vec<Vec<f64>> = centers
        .iter()
        .flat_map(|c| (0..PER_CLUSTER).map(|_| c.iter().map(|x| x + NOISE * rng.normal()).collect()).collect::<Vec<_>>())
        .collect();

    let (mut codebook, report) = kmeans_init(&samples, CLUSTERS, &mut rng.fork(1), 50, 0.99, 1e-5)?;
    println!(
        "k-means: {} iterations, converged {}, cluster sizes {:?}",
        report.iterations, report.converged, report.cluster_sizes
    );

    for epoch in 1..=100 {
        let assign: Vec<usize> = samples
            .iter()
            .map(|s| codebook.quantize(s).map(|(m, _)| m))
            .collect::<Result<_, _>>()?;
        codebook.ema_update(&samples, &assign)?;
        if epoch % 25 == 0 {
            println!("epoch {epoch:>3}: counts {:.3?}", codebook.counts());
        }
    }

    for m in 0..codebook.size() {
        let (k, d2) = centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, sq_dist(codebook.code(m), c)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one center");
        println!("code {m} -> center {k}, distance {:.4}", d2.sqrt());
    }
    Ok(())
}
