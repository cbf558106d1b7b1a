//! Maximum spanning arborescence decoding with a single root child.

use crate::data::validate_heads;

/// Total score of `heads` under `arc` (`n × (n+1)`, row-major).
pub fn tree_score(arc: &[f64], n: usize, heads: &[usize]) -> f64 {
    heads.iter().enumerate().map(|(m, &h)| arc[m * (n + 1) + h]).sum()
}

/// Highest-scoring tree in which exactly one token attaches to the root.
/// Each token is tried as the sole root child; Chu-Liu/Edmonds solves the rest.
pub fn mst_decode(arc: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(arc.len(), n * (n + 1), "arc scores must be n × (n+1)");
    if n == 1 {
        return vec![0];
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for r in 1..=n {
        // scores[h][m] over nodes 0..=n
        let mut scores = vec![vec![f64::NEG_INFINITY; n + 1]; n + 1];
        for m in 1..=n {
            for h in 0..=n {
                if h != m && (h != 0 || m == r) {
                    scores[h][m] = arc[(m - 1) * (n + 1) + h];
                }
            }
        }
        let heads = chu_liu_edmonds(&scores)[1..].to_vec();
        let s = tree_score(arc, n, &heads);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, heads));
        }
    }
    best.expect("n ≥ 1").1
}

/// Dense maximum arborescence rooted at node 0; `scores[h][m]` is the weight
/// of `h → m`. Returns a head per node (entry 0 unused).
fn chu_liu_edmonds(scores: &[Vec<f64>]) -> Vec<usize> {
    let size = scores.len();
    let mut heads = vec![0; size];
    for m in 1..size {
        let mut best = 0;
        for h in 0..size {
            if h != m && scores[h][m] > scores[best][m] {
                best = h;
            }
        }
        heads[m] = best;
    }
    let Some(cycle) = find_cycle(&heads) else {
        return heads;
    };

    // Contract the cycle into a single node `c`, the last index.
    let in_cycle: Vec<bool> = (0..size).map(|v| cycle.contains(&v)).collect();
    let outside: Vec<usize> = (0..size).filter(|&v| !in_cycle[v]).collect();
    let c = outside.len();
    let mut sub = vec![vec![f64::NEG_INFINITY; c + 1]; c + 1];
    let mut enter = vec![0; c + 1];
    let mut leave = vec![0; c + 1];
    for (i, &u) in outside.iter().enumerate() {
        for (j, &v) in outside.iter().enumerate() {
            sub[i][j] = scores[u][v];
        }
        let mut best_in = f64::NEG_INFINITY;
        for &v in &cycle {
            let s = scores[u][v] - scores[heads[v]][v];
            if s > best_in {
                best_in = s;
                enter[i] = v;
            }
        }
        sub[i][c] = best_in;
        let mut best_out = f64::NEG_INFINITY;
        for &w in &cycle {
            if scores[w][u] > best_out {
                best_out = scores[w][u];
                leave[i] = w;
            }
        }
        sub[c][i] = best_out;
    }
    let sub_heads = chu_liu_edmonds(&sub);

    let mut out = heads.clone();
    for (j, &v) in outside.iter().enumerate().skip(1) {
        let h = sub_heads[j];
        out[v] = if h == c { leave[j] } else { outside[h] };
    }
    let from = sub_heads[c];
    out[enter[from]] = outside[from];
    out
}

fn find_cycle(heads: &[usize]) -> Option<Vec<usize>> {
    let size = heads.len();
    let mut state = vec![0u8; size];
    state[0] = 2;
    for start in 1..size {
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = heads[v];
        }
        if state[v] == 1 {
            let pos = path.iter().position(|&p| p == v).expect("v on path");
            return Some(path[pos..].to_vec());
        }
        for p in path {
            state[p] = 2;
        }
    }
    None
}

/// Exhaustive search over all `(n+1)^n` head assignments. Test oracle.
pub fn brute_force_decode(arc: &[f64], n: usize) -> Vec<usize> {
    let mut heads = vec![0; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    loop {
        if heads.iter().filter(|&&h| h == 0).count() == 1 && validate_heads(&heads).is_ok() {
            let s = tree_score(arc, n, &heads);
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, heads.clone()));
            }
        }
        let mut k = 0;
        while k < n && heads[k] == n {
            heads[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
        heads[k] += 1;
    }
    best.expect("a single-rooted tree always exists").1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_token_example() {
        // rows: token 1, token 2; columns: root, 1, 2
        let arc = [5.0, 0.0, 3.0, 1.0, 4.0, 0.0];
        assert_eq!(mst_decode(&arc, 2), vec![0, 1]);
        assert_eq!(tree_score(&arc, 2, &[0, 1]), 9.0);
        assert_eq!(brute_force_decode(&arc, 2), vec![0, 1]);
    }

    #[test]
    fn single_token() {
        assert_eq!(mst_decode(&[-3.0, 0.0], 1), vec![0]);
    }

    #[test]
    fn greedy_cycle_resolved() {
        // Greedy picks 1←2, 2←1 (a cycle).
        let n = 3;
        let arc = [
            1.0, 0.0, 10.0, 0.0, //
            0.0, 10.0, 0.0, 0.0, //
            0.0, 0.0, 3.0, 0.0,
        ];
        let heads = mst_decode(&arc, n);
        assert!(validate_heads(&heads).is_ok());
        assert_eq!(tree_score(&arc, n, &heads), tree_score(&arc, n, &brute_force_decode(&arc, n)));
    }

    #[test]
    fn multiple_root_preference_forced_to_one() {
        let arc = [9.0, 0.0, 0.0, 9.0, 0.0, 0.0];
        let heads = mst_decode(&arc, 2);
        assert_eq!(heads.iter().filter(|&&h| h == 0).count(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(240))]
        #[test]
        fn matches_brute_force(n in 1usize..=6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let arc: Vec<f64> = (0..n * (n + 1)).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let got = mst_decode(&arc, n);
            let want = brute_force_decode(&arc, n);
            prop_assert!(validate_heads(&got).is_ok());
            prop_assert_eq!(got.iter().filter(|&&h| h == 0).count(), 1);
            prop_assert!((tree_score(&arc, n, &got) - tree_score(&arc, n, &want)).abs() < 1e-9);
        }
    }
}
