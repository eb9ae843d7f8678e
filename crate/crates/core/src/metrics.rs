//! Partition agreement metrics.

use crate::error::{invalid, Result};
use crate::model::HardMembership;

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand Index (Hubert and Arabie) between two partitions of the same nodes.
pub fn adjusted_rand_index(a: &HardMembership, b: &HardMembership) -> Result<f64> {
    ari_from_labels(a.labels(), b.labels())
}

/// ARI on raw label slices; labels need not be contiguous.
pub fn ari_from_labels(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(invalid(format!(
            "ARI: partitions have lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(invalid("ARI needs at least two nodes"));
    }
    let ka = a.iter().max().map_or(0, |&z| z + 1);
    let kb = b.iter().max().map_or(0, |&z| z + 1);
    let mut table = vec![0u64; ka * kb];
    let mut rows = vec![0u64; ka];
    let mut cols = vec![0u64; kb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
        rows[x] += 1;
        cols[y] += 1;
    }
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.iter().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.iter().map(|&c| choose2(c)).sum();
    let total = choose2(a.len() as u64);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    let denom = max_index - expected;
    if denom == 0.0 {
        // Both partitions trivial (one block or all singletons).
        return Ok(if index == max_index { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / denom)
}

/// Relabeling `perm[pred] = truth` maximizing the number of agreeing nodes.
///
/// Exhaustive over permutations, so intended for small `k`.
pub fn best_label_permutation(pred: &HardMembership, truth: &HardMembership) -> Result<Vec<usize>> {
    if pred.len() != truth.len() || pred.k() != truth.k() {
        return Err(invalid("label alignment needs equal lengths and community counts"));
    }
    let k = pred.k();
    if k > 8 {
        return Err(invalid("label alignment supports at most 8 communities"));
    }
    let mut overlap = vec![0usize; k * k];
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        overlap[p * k + t] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = perm.clone();
    let mut best_score = 0;
    permute(&mut perm, 0, &mut |cand| {
        let score: usize = cand.iter().enumerate().map(|(p, &t)| overlap[p * k + t]).sum();
        if score > best_score {
            best_score = score;
            best = cand.to_vec();
        }
    });
    Ok(best)
}

fn permute(v: &mut [usize], start: usize, visit: &mut impl FnMut(&[usize])) {
    if start == v.len() {
        visit(v);
        return;
    }
    for i in start..v.len() {
        v.swap(start, i);
        permute(v, start + 1, visit);
        v.swap(start, i);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Pair-counting oracle: classify every node pair by agreement.
    fn ari_brute(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut ss, mut sd, mut ds, mut dd) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            for j in (i + 1)..n {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => ss += 1.0,
                    (true, false) => sd += 1.0,
                    (false, true) => ds += 1.0,
                    (false, false) => dd += 1.0,
                }
            }
        }
        // Closed form of ARI from the pair confusion matrix.
        2.0 * (ss * dd - sd * ds) / ((ss + sd) * (sd + dd) + (ss + ds) * (ds + dd))
    }

    #[test]
    fn permutation_gives_one() {
        assert_eq!(ari_from_labels(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
    }

    #[test]
    fn small_instances_match_pair_counting_oracle() {
        let v = ari_from_labels(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap();
        assert!((v - ari_brute(&[0, 0, 1, 1], &[0, 1, 0, 1])).abs() < 1e-15);
        assert!((v - (-0.5)).abs() < 1e-15);

        let w = ari_from_labels(&[0, 0, 0, 0], &[0, 0, 1, 1]).unwrap();
        assert_eq!(w, 0.0);
        // Oracle is 0/0 there only when both sides are degenerate; here it is defined.
        assert!((w - ari_brute(&[0, 0, 0, 0], &[0, 0, 1, 1])).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(ari_from_labels(&[0, 1], &[0]).is_err());
        assert!(ari_from_labels(&[0], &[0]).is_err());
    }

    #[test]
    fn alignment_recovers_permutation() {
        let truth = HardMembership::new(vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        let pred = truth.permuted(&[2, 0, 1]);
        let perm = best_label_permutation(&pred, &truth).unwrap();
        assert_eq!(pred.permuted(&perm), truth);
    }

    fn partition(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::vec(0..k, n)
    }

    proptest! {
        #[test]
        fn ari_properties(a in partition(9, 3), b in partition(9, 4), seed in 0usize..24) {
            let ab = ari_from_labels(&a, &b).unwrap();
            prop_assert!((ab - ari_from_labels(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0 + 1e-12).contains(&ab));

            // relabel a by a permutation of 0..3
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let p = perms[seed % 6];
            let a2: Vec<usize> = a.iter().map(|&z| p[z]).collect();
            prop_assert!((ari_from_labels(&a2, &b).unwrap() - ab).abs() < 1e-12);

            let distinct = a.iter().collect::<std::collections::HashSet<_>>().len();
            if distinct > 1 && distinct < a.len() {
                prop_assert!((ari_from_labels(&a, &a).unwrap() - 1.0).abs() < 1e-12);
            }
            let brute = ari_brute(&a, &b);
            if brute.is_finite() {
                prop_assert!((ab - brute).abs() < 1e-12);
            }
        }
    }
}
