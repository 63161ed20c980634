//! Deterministic parallel reductions.
//!
//! Inputs are cut into fixed-size chunks, each chunk is reduced serially,
//! and the per-chunk partials are combined by a pairwise tree in chunk
//! order. The result therefore depends on the chunk size only, never on how
//! many threads rayon happens to use.

use rayon::prelude::*;

use crate::scalar::{log_add, Real};

pub const CHUNK_SIZE: usize = 8192;

/// Pairwise tree combination of `parts` in order.
pub fn pairwise<T: Copy>(mut parts: Vec<T>, empty: T, combine: impl Fn(T, T) -> T) -> T {
    if parts.is_empty() {
        return empty;
    }
    while parts.len() > 1 {
        parts = parts
            .chunks(2)
            .map(|p| if p.len() == 2 { combine(p[0], p[1]) } else { p[0] })
            .collect();
    }
    parts[0]
}

/// `Σ f(x_i)` with deterministic association.
pub fn sum_map<T: Real>(xs: &[T], f: impl Fn(T) -> T + Sync) -> T {
    let parts: Vec<T> = xs
        .par_chunks(CHUNK_SIZE)
        .map(|c| c.iter().fold(T::zero(), |acc, &x| acc + f(x)))
        .collect();
    pairwise(parts, T::zero(), |a, b| a + b)
}

pub fn sum<T: Real>(xs: &[T]) -> T {
    sum_map(xs, |x| x)
}

/// `ln Σ exp(f(x_i))` with deterministic association.
pub fn log_sum_exp_map<T: Real>(xs: &[T], f: impl Fn(T) -> T + Sync) -> T {
    let parts: Vec<T> = xs
        .par_chunks(CHUNK_SIZE)
        .map(|c| {
            let mut acc = crate::scalar::LogSumExp::new();
            for &x in c {
                acc.push(f(x));
            }
            acc.value()
        })
        .collect();
    pairwise(parts, T::neg_infinity(), log_add)
}

/// Number of entries satisfying `pred`.
pub fn count<T: Real>(xs: &[T], pred: impl Fn(T) -> bool + Sync) -> u64 {
    xs.par_chunks(CHUNK_SIZE)
        .map(|c| c.iter().filter(|&&x| pred(x)).count() as u64)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_order() {
        let v: Vec<u32> = (1..=7).collect();
        assert_eq!(pairwise(v, 0, |a, b| a + b), 28);
        assert_eq!(pairwise(Vec::<u32>::new(), 0, |a, b| a + b), 0);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let xs: Vec<f64> = (0..100_003).map(|i| ((i as f64) * 0.7311).sin() * 1e3).collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| (sum(&xs), log_sum_exp_map(&xs, |x| 0.01 * x)))
        };
        let (a1, b1) = run(1);
        let (a4, b4) = run(4);
        assert_eq!(a1.to_bits(), a4.to_bits());
        assert_eq!(b1.to_bits(), b4.to_bits());
    }

    #[test]
    fn log_sum_exp_no_overflow() {
        let xs = vec![1000.0f64; 20_000];
        let v = log_sum_exp_map(&xs, |x| x);
        assert!((v - (1000.0 + 20_000f64.ln())).abs() < 1e-9);
    }
}
