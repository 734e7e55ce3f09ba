//! Lexicographic ranking of `p`-subsets of `{0, .., n-1}`.
//!
//! Subsets are represented as strictly increasing index vectors. Rank 0 is
//! `[0, 1, .., p-1]` and rank `C(n, p) - 1` is `[n-p, .., n-1]`.

use crate::error::{GqsmError, Result};

/// Binomial coefficient `C(n, k)`, saturating at `u64::MAX`.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // exact at every step: acc * (n - i) is divisible by (i + 1)
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Returns the `rank`-th `p`-subset of `{0, .., n-1}` in lexicographic order.
pub fn unrank_combination(rank: u64, n: usize, p: usize) -> Result<Vec<usize>> {
    let count = binomial(n, p);
    if rank >= count {
        return Err(GqsmError::RankOutOfRange { rank, n, p, count });
    }
    let mut out = Vec::with_capacity(p);
    let mut remaining = rank;
    let mut next = 0;
    for slot in 0..p {
        let left = p - slot - 1;
        // skip leading elements while the block of subsets starting with them
        // lies entirely below the remaining rank
        loop {
            let block = binomial(n - next - 1, left);
            if remaining < block {
                break;
            }
            remaining -= block;
            next += 1;
        }
        out.push(next);
        next += 1;
    }
    Ok(out)
}

/// Inverse of [`unrank_combination`].
pub fn rank_combination(indices: &[usize], n: usize) -> Result<u64> {
    let valid = indices.windows(2).all(|w| w[0] < w[1]) && indices.last().map_or(true, |&l| l < n);
    if !valid {
        return Err(GqsmError::InvalidIndexSet {
            indices: indices.to_vec(),
            n,
        });
    }
    let p = indices.len();
    let mut rank = 0u64;
    let mut prev = 0usize;
    for (slot, &idx) in indices.iter().enumerate() {
        let left = p - slot - 1;
        for skipped in prev..idx {
            rank += binomial(n - skipped - 1, left);
        }
        prev = idx + 1;
    }
    Ok(rank)
}
