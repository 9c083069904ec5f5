use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Traversal orders over `alpha` regions; every row is a permutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteSet {
    pub alpha: usize,
    pub routes: Vec<Vec<usize>>,
}

impl RouteSet {
    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }
}

/// `n!`, or `None` on `u64` overflow.
pub fn factorial(n: usize) -> Option<u64> {
    (1..=n as u64).try_fold(1u64, |acc, k| acc.checked_mul(k))
}

pub fn validate_route(route: &[usize], alpha: usize) -> Result<()> {
    let mut seen = vec![false; alpha];
    if route.len() != alpha {
        return Err(Error::validation("route", format!("length {} for {alpha} regions", route.len())));
    }
    for &s in route {
        if s >= alpha || std::mem::replace(&mut seen[s], true) {
            return Err(Error::validation("route", format!("{route:?} is not a permutation of 0..{alpha}")));
        }
    }
    Ok(())
}

/// Depth-first backtracking over unused indices, smallest first, which emits
/// permutations in lexicographic order.
fn backtrack(alpha: usize, path: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
    if path.len() == alpha {
        out.push(path.clone());
        return;
    }
    for s in 0..alpha {
        if !used[s] {
            used[s] = true;
            path.push(s);
            backtrack(alpha, path, used, out);
            path.pop();
            used[s] = false;
        }
    }
}

/// The permutation with lexicographic rank `rank` (factorial number system).
fn unrank(alpha: usize, mut rank: u64) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..alpha).collect();
    let mut out = Vec::with_capacity(alpha);
    for k in (0..alpha).rev() {
        let f = factorial(k).expect("rank range fits u64");
        let i = (rank / f) as usize;
        rank %= f;
        out.push(pool.remove(i));
    }
    out
}

/// All `alpha!` routes when that is at most `cap`; otherwise `cap` distinct
/// routes drawn uniformly without replacement.
pub fn enumerate_routes<R: Rng + ?Sized>(alpha: usize, cap: usize, rng: &mut R) -> Result<RouteSet> {
    if alpha < 2 {
        return Err(Error::validation("alpha", format!("must be at least 2, got {alpha}")));
    }
    if cap == 0 {
        return Err(Error::validation("route_cap", "must be at least 1"));
    }
    let total = factorial(alpha);
    let routes = match total {
        Some(t) if t <= cap as u64 => {
            let mut out = Vec::with_capacity(t as usize);
            backtrack(alpha, &mut Vec::with_capacity(alpha), &mut vec![false; alpha], &mut out);
            out
        }
        Some(t) if t <= usize::MAX as u64 => index::sample(rng, t as usize, cap)
            .into_iter()
            .map(|r| unrank(alpha, r as u64))
            .collect(),
        _ => {
            let mut seen = HashSet::with_capacity(cap);
            let mut out = Vec::with_capacity(cap);
            let mut perm: Vec<usize> = (0..alpha).collect();
            while out.len() < cap {
                perm.shuffle(rng);
                if seen.insert(perm.clone()) {
                    out.push(perm.clone());
                }
            }
            out
        }
    };
    Ok(RouteSet { alpha, routes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use itertools::Itertools;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_enumeration_is_lexicographic() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = enumerate_routes(3, 6, &mut rng).unwrap();
        assert_eq!(
            set.routes,
            vec![vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]]
        );
    }

    #[test]
    fn matches_independent_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = enumerate_routes(4, 100, &mut rng).unwrap();
        let oracle: Vec<Vec<usize>> = (0..4).permutations(4).collect();
        assert_eq!(set.routes, oracle);
    }

    #[test]
    fn unrank_agrees_with_enumeration() {
        let oracle: Vec<Vec<usize>> = (0..5).permutations(5).collect();
        for (r, p) in oracle.iter().enumerate() {
            assert_eq!(&unrank(5, r as u64), p);
        }
    }

    #[test]
    fn capped_sets_are_distinct_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (alpha, cap) in [(3, 4), (8, 64), (21, 10)] {
            let set = enumerate_routes(alpha, cap, &mut rng).unwrap();
            assert_eq!(set.len(), cap);
            for r in &set.routes {
                validate_route(r, alpha).unwrap();
            }
            assert_eq!(set.routes.iter().collect::<HashSet<_>>().len(), cap);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(enumerate_routes(1, 4, &mut rng).is_err());
        assert!(enumerate_routes(3, 0, &mut rng).is_err());
        assert!(validate_route(&[0, 0, 1], 3).is_err());
        assert!(validate_route(&[0, 3, 1], 3).is_err());
        assert!(validate_route(&[0, 1], 3).is_err());
    }

    #[test]
    fn sampled_first_positions_are_roughly_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        for _ in 0..500 {
            for r in enumerate_routes(4, 6, &mut rng).unwrap().routes {
                counts[r[0]] += 1;
            }
        }
        // 3000 draws, expected 750 per bucket.
        for c in counts {
            assert!((650..850).contains(&c), "{counts:?}");
        }
    }
}
