//! Times batch_top_k on random unit vectors.
//!
//!     cargo run --release -p dejavu-core --example knn_bench -- 10000 1000000 256 10

use std::time::Instant;

use dejavu_core::{batch_top_k, EmbeddingMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_unit(n: usize, d: usize, prefix: &str, seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let ids = (0..n).map(|i| format!("{prefix}{i:07}")).collect();
    EmbeddingMatrix::new(ids, data, d).unwrap().normalize().unwrap()
}

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer")).collect();
    let [nq, np, d, k] = args[..] else {
        panic!("usage: knn_bench <queries> <public> <dim> <k>");
    };
    let t = Instant::now();
    let q = random_unit(nq, d, "q", 1);
    let p = random_unit(np, d, "p", 2);
    eprintln!("generated in {:.1}s", t.elapsed().as_secs_f64());
    let t = Instant::now();
    let out = batch_top_k(&q, &p, k).unwrap();
    let secs = t.elapsed().as_secs_f64();
    println!(
        "{nq} x {np} x {d} k={k}: {secs:.2}s on {} threads ({} results)",
        rayon::current_num_threads(),
        out.len()
    );
}
