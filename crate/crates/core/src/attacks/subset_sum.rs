//! Brute-force k-vector subset sum on planted instances: exhaustive
//! enumeration of all k-subsets of N public vectors, demonstrating the
//! combinatorial growth of the recovery work.

use crate::numerics::{DenseVec, RngStream};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Outcome of one recovery run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetSumOutcome {
    /// Recovered index set (ascending), or None when nothing matched.
    pub solution: Option<Vec<usize>>,
    /// Candidates examined: `C(N, k)` on a full scan, or the count until the
    /// first match in early-exit mode.
    pub candidates_enumerated: u64,
}

/// `C(n, k)` without overflow for desk-scale arguments.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as u64
}

/// Generate a planted instance: N public vectors plus the exact sum of `k`
/// secret distinct indices. Returns `(vectors, target, secret_indices)`.
pub fn plant_instance(
    n: usize,
    dim: usize,
    k: usize,
    stream: &mut RngStream,
) -> (Vec<DenseVec>, DenseVec, Vec<usize>) {
    assert!(k <= n && k >= 1);
    let vecs: Vec<DenseVec> = (0..n).map(|_| DenseVec(stream.normal_vec(dim))).collect();
    let mut secret: Vec<usize> = Vec::with_capacity(k);
    while secret.len() < k {
        let i = stream.below(n as u64) as usize;
        if !secret.contains(&i) {
            secret.push(i);
        }
    }
    secret.sort_unstable();
    let mut target = DenseVec::zeros(dim);
    for &i in &secret {
        target.axpy(1.0, &vecs[i]);
    }
    (vecs, target, secret)
}

fn subset_matches(vecs: &[DenseVec], subset: &[usize], target: &DenseVec) -> bool {
    let mut sum = DenseVec::zeros(target.len());
    for &i in subset {
        sum.axpy(1.0, &vecs[i]);
    }
    sum.0
        .iter()
        .zip(&target.0)
        .all(|(s, t)| (s - t).abs() <= 1e-9)
}

/// Exhaustively enumerate k-subsets in lexicographic order and return the
/// first whose sum matches the target within 1e-9 per coordinate.
///
/// `early_exit` stops at the first match; otherwise the scan completes and
/// the candidate count equals `C(N, k)` exactly.
pub fn subset_sum_recover(
    public_vecs: &[DenseVec],
    target: &DenseVec,
    k: usize,
    early_exit: bool,
) -> Result<SubsetSumOutcome> {
    let n = public_vecs.len();
    if k == 0 || k > n {
        return Err(Error::Config(format!("subset size {k} out of range for N = {n}")));
    }
    if public_vecs.iter().any(|v| v.len() != target.len()) {
        return Err(Error::Shape("subset sum: dimension mismatch".into()));
    }
    let mut indices: Vec<usize> = (0..k).collect();
    let mut candidates = 0u64;
    let mut solution = None;
    loop {
        candidates += 1;
        if solution.is_none() && subset_matches(public_vecs, &indices, target) {
            solution = Some(indices.clone());
            if early_exit {
                break;
            }
        }
        // Advance to the next combination.
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(SubsetSumOutcome {
                    solution,
                    candidates_enumerated: candidates,
                });
            }
            i -= 1;
            if indices[i] != i + n - k {
                break;
            }
        }
        indices[i] += 1;
        for j in i + 1..k {
            indices[j] = indices[j - 1] + 1;
        }
    }
    Ok(SubsetSumOutcome {
        solution,
        candidates_enumerated: candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_stream;

    #[test]
    fn recovers_planted_pair() {
        let mut s = seeded_stream(81, &["ss"]);
        let (vecs, target, secret) = plant_instance(10, 6, 2, &mut s);
        let out = subset_sum_recover(&vecs, &target, 2, false).unwrap();
        assert_eq!(out.solution, Some(secret));
        assert_eq!(out.candidates_enumerated, binomial(10, 2));
    }

    #[test]
    fn early_exit_counts_until_first_match() {
        let mut s = seeded_stream(82, &["ss"]);
        let (vecs, target, secret) = plant_instance(12, 5, 2, &mut s);
        let full = subset_sum_recover(&vecs, &target, 2, false).unwrap();
        let early = subset_sum_recover(&vecs, &target, 2, true).unwrap();
        assert_eq!(early.solution, Some(secret));
        assert!(early.candidates_enumerated <= full.candidates_enumerated);
        assert_eq!(full.candidates_enumerated, binomial(12, 2));
    }

    #[test]
    fn reports_no_solution() {
        let mut s = seeded_stream(83, &["ss"]);
        let (vecs, _, _) = plant_instance(8, 4, 2, &mut s);
        let bogus = DenseVec(vec![1000.0; 4]);
        let out = subset_sum_recover(&vecs, &bogus, 2, false).unwrap();
        assert_eq!(out.solution, None);
        assert_eq!(out.candidates_enumerated, binomial(8, 2));
    }

    #[test]
    fn work_growth_is_combinatorial() {
        // Full-scan counts at (N = 64, k = 3) vs (N = 16, k = 3) grow exactly
        // like the binomial ratio.
        assert_eq!(binomial(64, 3), 41664);
        assert_eq!(binomial(16, 3), 560);
        let mut s = seeded_stream(84, &["ss"]);
        let (vecs, target, _) = plant_instance(16, 4, 3, &mut s);
        let out = subset_sum_recover(&vecs, &target, 3, false).unwrap();
        assert_eq!(out.candidates_enumerated, 560);
    }

    #[test]
    fn rejects_bad_k() {
        let mut s = seeded_stream(85, &["ss"]);
        let (vecs, target, _) = plant_instance(5, 3, 2, &mut s);
        assert!(subset_sum_recover(&vecs, &target, 0, false).is_err());
        assert!(subset_sum_recover(&vecs, &target, 6, false).is_err());
    }

    #[test]
    fn binomial_basics() {
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(5, 5), 1);
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(4, 5), 0);
    }
}
