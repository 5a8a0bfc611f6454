//! Similarity gating: keep the largest pairwise-similar group of clients.

use super::{ForecastError, LocalUpdate};
use crate::domain::ClientId;

/// Search-node budget for the exact clique search. Past it the best clique
/// found so far is returned and [`Selection::exact`] is false.
pub const CLIQUE_NODE_BUDGET: u64 = 2_000_000;

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, ForecastError> {
    if a.len() != b.len() {
        return Err(ForecastError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(ForecastError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    /// Ascending client ids.
    pub clients: Vec<ClientId>,
    /// No similar pair existed; the single most similar pair was taken.
    pub fallback: bool,
    pub exact: bool,
}

/// Largest set of clients whose usage signatures are pairwise similar
/// (cosine ≥ `tau`). Among maximum sets the lexicographically smallest by
/// client id wins. When no pair clears `tau` the most similar pair is
/// returned instead. `tau ≤ -1` admits everyone.
pub fn select_similar(updates: &[LocalUpdate], tau: f64) -> Selection {
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].client_id);
    let ids: Vec<ClientId> = order.iter().map(|&i| updates[i].client_id).collect();
    let n = ids.len();
    if tau <= -1.0 || n <= 1 {
        return Selection {
            clients: ids,
            fallback: false,
            exact: true,
        };
    }
    let mut sim = vec![vec![None; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let s = cosine_similarity(&updates[order[a]].usage_signature, &updates[order[b]].usage_signature).ok();
            sim[a][b] = s;
            sim[b][a] = s;
        }
    }
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|a| (0..n).map(|b| a != b && sim[a][b].is_some_and(|s| s >= tau)).collect())
        .collect();

    let mut search = CliqueSearch {
        adj: &adj,
        best: Vec::new(),
        current: Vec::new(),
        nodes: 0,
        exhausted: false,
    };
    search.expand((0..n).collect());
    let exact = !search.exhausted;
    let best = search.best;

    if best.len() >= 2 {
        return Selection {
            clients: best.into_iter().map(|i| ids[i]).collect(),
            fallback: false,
            exact,
        };
    }
    let mut pair = (0, 1);
    let mut best_sim = f64::NEG_INFINITY;
    for a in 0..n {
        for b in a + 1..n {
            if let Some(s) = sim[a][b] {
                if s > best_sim {
                    best_sim = s;
                    pair = (a, b);
                }
            }
        }
    }
    Selection {
        clients: vec![ids[pair.0], ids[pair.1]],
        fallback: true,
        exact,
    }
}

struct CliqueSearch<'a> {
    adj: &'a [Vec<bool>],
    best: Vec<usize>,
    current: Vec<usize>,
    nodes: u64,
    exhausted: bool,
}

impl CliqueSearch<'_> {
    // Include-first DFS over ascending candidates visits equal-size cliques in
    // lexicographic order, so keeping only strict improvements yields the
    // lexicographically smallest maximum clique.
    fn expand(&mut self, candidates: Vec<usize>) {
        if self.current.len() > self.best.len() {
            self.best = self.current.clone();
        }
        for (k, &v) in candidates.iter().enumerate() {
            if self.current.len() + candidates.len() - k <= self.best.len() {
                return;
            }
            self.nodes += 1;
            if self.nodes > CLIQUE_NODE_BUDGET {
                self.exhausted = true;
                return;
            }
            let next: Vec<usize> = candidates[k + 1..].iter().copied().filter(|&u| self.adj[v][u]).collect();
            self.current.push(v);
            self.expand(next);
            self.current.pop();
            if self.exhausted {
                return;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn up(id: u32, sig: Vec<f64>) -> LocalUpdate {
        LocalUpdate {
            client_id: ClientId(id),
            delta: Vec::new(),
            data_size: 1,
            usage_signature: sig,
        }
    }

    fn brute_force(updates: &[LocalUpdate], tau: f64) -> Vec<ClientId> {
        let mut ups: Vec<&LocalUpdate> = updates.iter().collect();
        ups.sort_by_key(|u| u.client_id);
        let n = ups.len();
        let mut best: Vec<usize> = Vec::new();
        for mask in 1u32..(1 << n) {
            let set: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            let ok = set.iter().all(|&a| {
                set.iter().all(|&b| {
                    a == b || cosine_similarity(&ups[a].usage_signature, &ups[b].usage_signature).is_ok_and(|s| s >= tau)
                })
            });
            if ok && (set.len() > best.len() || (set.len() == best.len() && set < best)) {
                best = set;
            }
        }
        best.into_iter().map(|i| ups[i].client_id).collect()
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_similarity(&[1.0, 0.0], &[2.0, 0.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(ForecastError::ZeroVector));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 2.0]),
            Err(ForecastError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn picks_similar_pair() {
        let ups = vec![up(1, vec![1.0, 0.0]), up(2, vec![0.0, 1.0]), up(3, vec![1.0, 0.01])];
        let s = select_similar(&ups, 0.95);
        assert_eq!(s.clients, vec![ClientId(1), ClientId(3)]);
        assert!(!s.fallback);
        assert_eq!(s.clients, brute_force(&ups, 0.95));
    }

    #[test]
    fn falls_back_to_closest_pair() {
        let ups = vec![up(0, vec![1.0, 0.0]), up(1, vec![0.0, 1.0]), up(2, vec![1.0, 1.0])];
        let s = select_similar(&ups, 0.99);
        assert!(s.fallback);
        assert_eq!(s.clients, vec![ClientId(0), ClientId(2)]);
    }

    #[test]
    fn negative_tau_admits_all() {
        let ups = vec![up(4, vec![1.0]), up(2, vec![-1.0]), up(9, vec![0.0])];
        let s = select_similar(&ups, -1.0);
        assert_eq!(s.clients, vec![ClientId(2), ClientId(4), ClientId(9)]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            sigs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..9),
            tau in 0.0f64..0.99,
        ) {
            let ups: Vec<LocalUpdate> = sigs.into_iter().enumerate().map(|(i, s)| up(i as u32 * 3 % 11, s)).collect();
            let s = select_similar(&ups, tau);
            let bf = brute_force(&ups, tau);
            if bf.len() >= 2 {
                prop_assert_eq!(s.clients, bf);
            } else {
                prop_assert!(s.fallback);
                prop_assert_eq!(s.clients.len(), 2);
            }
        }
    }
}
