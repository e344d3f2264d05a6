//! Low-discrepancy sampling used by the certifiers.
//!
//! Halton sequences are deterministic, so every certificate is reproducible
//! and a re-check can draw provably fresh points by continuing the sequence.

/// Radical-inverse of `index` in the given base (the 1-dimensional Halton value).
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let mut inv = 0.0;
    let mut frac = 1.0 / base as f64;
    while index > 0 {
        inv += (index % base) as f64 * frac;
        index /= base;
        frac /= base as f64;
    }
    inv
}

/// First `count` primes, for use as Halton bases.
fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut candidate: u64 = 2;
    while out.len() < count {
        if out.iter().all(|p| candidate % p != 0) {
            out.push(candidate);
        }
        candidate += 1;
    }
    out
}

/// Points `start..start+count` of the Halton sequence, mapped into the box.
///
/// `bounds` gives one `(lo, hi)` interval per dimension. Indexing starts at 1
/// (index 0 is the degenerate all-zero point and is skipped by convention),
/// so `halton_box(bounds, n, 0)` and `halton_box(bounds, m, n)` never overlap.
pub fn halton_box(bounds: &[(f64, f64)], count: usize, start: usize) -> Vec<Vec<f64>> {
    let bases = primes(bounds.len());
    (0..count)
        .map(|k| {
            let index = (start + k + 1) as u64;
            bounds
                .iter()
                .zip(&bases)
                .map(|(&(lo, hi), &base)| lo + (hi - lo) * radical_inverse(index, base))
                .collect()
        })
        .collect()
}
