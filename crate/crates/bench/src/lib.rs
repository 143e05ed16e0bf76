//! Inputs shared by the benchmarks.

use eqprune::{Matrix, Rng};

/// `rows x cols` matrix of uniform pixels in `[0, 1)` plus random digit labels.
pub fn synthetic_batch(rng: &mut Rng, rows: usize, cols: usize) -> (Matrix, Vec<u8>) {
    let mut x = Matrix::zeros(rows, cols);
    for v in x.data_mut() {
        *v = rng.next_f64();
    }
    let labels = (0..rows).map(|_| rng.below(10) as u8).collect();
    (x, labels)
}
