//! Small numeric helpers shared across modules.

/// Pairwise (cascade) summation; order-stable and with `O(log n)` error growth.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// In-place pairwise reduction of equally sized vectors: `parts[0]` ends up
/// holding the elementwise sum. The tree shape depends only on `parts.len()`.
pub fn pairwise_reduce(parts: &mut [Vec<f64>]) {
    let n = parts.len();
    let mut stride = 1;
    while stride < n {
        let mut i = 0;
        while i + stride < n {
            let (lo, hi) = parts.split_at_mut(i + stride);
            for (a, b) in lo[i].iter_mut().zip(&hi[0]) {
                *a += *b;
            }
            i += 2 * stride;
        }
        stride *= 2;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn norm2(xs: &[f64]) -> f64 {
    dot(xs, xs).sqrt()
}
