//! Maximum bipartite matching.

use std::collections::HashMap;

/// Maximum-cardinality matching by augmenting paths, starting from `initial`
/// (pairs that must be edges and disjoint). Returns `right_of[left]`.
///
/// Augmenting from any valid matching reaches a maximum one, so seeding with
/// preferred pairs only changes which maximum matching is found.
pub fn max_matching(
    n_left: usize,
    n_right: usize,
    adj: &[Vec<usize>],
    initial: &[(usize, usize)],
) -> Vec<Option<usize>> {
    let mut right_of: Vec<Option<usize>> = vec![None; n_left];
    let mut left_of: Vec<Option<usize>> = vec![None; n_right];
    for &(l, r) in initial {
        if right_of[l].is_none() && left_of[r].is_none() {
            right_of[l] = Some(r);
            left_of[r] = Some(l);
        }
    }
    for l in 0..n_left {
        if right_of[l].is_some() {
            continue;
        }
        let mut seen = vec![false; n_right];
        augment(l, adj, &mut seen, &mut right_of, &mut left_of);
    }
    right_of
}

fn augment(
    l: usize,
    adj: &[Vec<usize>],
    seen: &mut [bool],
    right_of: &mut [Option<usize>],
    left_of: &mut [Option<usize>],
) -> bool {
    for &r in &adj[l] {
        if seen[r] {
            continue;
        }
        seen[r] = true;
        let free = match left_of[r] {
            None => true,
            Some(other) => augment(other, adj, seen, right_of, left_of),
        };
        if free {
            right_of[l] = Some(r);
            left_of[r] = Some(l);
            return true;
        }
    }
    false
}

/// Size of a maximum matching by exhaustive search over subsets of the right side.
/// Intended for small inputs (right side of at most 20 vertices).
pub fn brute_force_matching_size(n_left: usize, n_right: usize, adj: &[Vec<usize>]) -> usize {
    assert!(n_right <= 32, "exhaustive matching needs a small right side");
    fn go(i: usize, used: u32, adj: &[Vec<usize>], memo: &mut HashMap<(usize, u32), usize>) -> usize {
        if i == adj.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, used)) {
            return v;
        }
        let mut best = go(i + 1, used, adj, memo);
        for &r in &adj[i] {
            if used & (1 << r) == 0 {
                best = best.max(1 + go(i + 1, used | (1 << r), adj, memo));
            }
        }
        memo.insert((i, used), best);
        best
    }
    debug_assert_eq!(adj.len(), n_left);
    go(0, 0, adj, &mut HashMap::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_pairs_are_rerouted() {
        // left 0 may take right 0 or 1, left 1 only right 0
        let adj = vec![vec![0, 1], vec![0]];
        let m = max_matching(2, 2, &adj, &[(0, 0)]);
        assert_eq!(m, vec![Some(1), Some(0)]);
        assert_eq!(brute_force_matching_size(2, 2, &adj), 2);
    }

    #[test]
    fn star_matches_once() {
        let adj = vec![vec![0, 1, 2]];
        let m = max_matching(1, 3, &adj, &[]);
        assert_eq!(m.iter().flatten().count(), 1);
        assert_eq!(brute_force_matching_size(1, 3, &adj), 1);
    }
}
