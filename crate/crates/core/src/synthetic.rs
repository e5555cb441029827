//! Seeded problem instances with known ground truth.

use crate::densemat::{DenseMatrix, GaussianSampler};

/// `A·B` with i.i.d. standard normal `A` (rows×rank) and `B` (rank×cols).
pub fn low_rank_product(rows: usize, cols: usize, rank: usize, seed: u64) -> DenseMatrix {
    let mut g = GaussianSampler::new(seed, 0);
    let a = g.gaussian_matrix(rows, rank);
    let b = g.gaussian_matrix(rank, cols);
    a.matmul(&b).expect("inner dimensions agree")
}

/// `A·B + σE` with i.i.d. standard normal `A`, `B`, `E`.
pub fn noisy_low_rank(rows: usize, cols: usize, rank: usize, noise: f64, seed: u64) -> DenseMatrix {
    let clean = low_rank_product(rows, cols, rank, seed);
    let e = GaussianSampler::new(seed, 1).gaussian_matrix(rows, cols);
    clean
        .zip_with("noisy_low_rank", &e, |c, x| c + noise * x)
        .expect("same shape")
}

/// Binary mask keeping each entry independently with probability `keep`.
pub fn bernoulli_mask(rows: usize, cols: usize, keep: f64, seed: u64) -> DenseMatrix {
    let mut g = GaussianSampler::new(seed, 2);
    DenseMatrix::from_fn(
        rows,
        cols,
        |_, _| if g.next_uniform() < keep { 1.0 } else { 0.0 },
    )
}

/// Sparse foreground: each entry is `±magnitude` with probability `density`.
pub fn sparse_spikes(
    rows: usize,
    cols: usize,
    density: f64,
    magnitude: f64,
    seed: u64,
) -> DenseMatrix {
    let mut g = GaussianSampler::new(seed, 3);
    DenseMatrix::from_fn(rows, cols, |_, _| {
        let hit = g.next_uniform() < density;
        let sign = if g.next_uniform() < 0.5 { -1.0 } else { 1.0 };
        if hit {
            sign * magnitude
        } else {
            0.0
        }
    })
}

/// Frames of a `side×side` scene: a fixed textured background in `[0.2, 0.8]`
/// with a bright `square×square` block moving one pixel per frame along the
/// diagonal. Returns the frames (pixels×frames) and the block's support.
pub fn moving_square(
    side: usize,
    frames: usize,
    square: usize,
    seed: u64,
) -> (DenseMatrix, DenseMatrix) {
    let mut g = GaussianSampler::new(seed, 4);
    let background = g.uniform_matrix(side, side, 0.2, 0.8);
    let pixels = side * side;
    let mut video = DenseMatrix::zeros(pixels, frames);
    let mut support = DenseMatrix::zeros(pixels, frames);
    for t in 0..frames {
        let offset = t % (side - square + 1);
        for r in 0..side {
            for c in 0..side {
                let inside = (offset..offset + square).contains(&r)
                    && (offset..offset + square).contains(&c);
                let idx = r * side + c;
                video[(idx, t)] = if inside { 1.0 } else { background[(r, c)] };
                support[(idx, t)] = if inside { 1.0 } else { 0.0 };
            }
        }
    }
    (video, support)
}
