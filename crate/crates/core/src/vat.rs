//! VAT band ordering and iVAT minimax-path enhancement.
//!
//! VAT orders bands by a Prim-style traversal seeded at an endpoint of the
//! largest dissimilarity, so clusters appear as dark diagonal blocks. iVAT
//! replaces each entry with a bottleneck path distance, flattening the blocks.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proximity::{check_symmetric, DissimilarityMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct VatResult {
    /// `permutation[p]` is the input index shown at display position `p`.
    pub permutation: Vec<usize>,
    pub ordered_dm: DissimilarityMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhanceSource {
    Raw,
    VatOrdered,
}

/// iVAT output in the index space of its input.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedDm {
    pub values: Array2<f64>,
    pub source: EnhanceSource,
    /// Input ordering carried through (identity for raw input).
    pub ordering: Vec<usize>,
}

impl EnhancedDm {
    pub fn size(&self) -> usize {
        self.values.nrows()
    }
}

/// Reorders `m` so that `out[p][q] = m[perm[p]][perm[q]]`.
pub fn permute_matrix(m: &Array2<f64>, perm: &[usize]) -> Array2<f64> {
    let b = perm.len();
    Array2::from_shape_fn((b, b), |(p, q)| m[[perm[p], perm[q]]])
}

/// VAT ordering. Ties in both the seed argmax and each Prim step go to the
/// smallest row index, then the smallest column index.
pub fn vat_order(dm: &DissimilarityMatrix) -> Result<VatResult> {
    let d = &dm.values;
    check_symmetric(d)?;
    let b = d.nrows();
    if b < 2 {
        return Err(Error::Invalid(format!("VAT needs at least 2 bands, got {b}")));
    }

    let mut seed = 0;
    let mut best = f64::NEG_INFINITY;
    for p in 0..b {
        for q in 0..b {
            if d[[p, q]] > best {
                best = d[[p, q]];
                seed = p;
            }
        }
    }

    let mut perm = Vec::with_capacity(b);
    let mut visited = vec![false; b];
    perm.push(seed);
    visited[seed] = true;
    // For each unvisited band: smallest distance to the visited set and the
    // smallest visited row achieving it.
    let mut dist: Vec<f64> = (0..b).map(|q| d[[seed, q]]).collect();
    let mut from: Vec<usize> = vec![seed; b];

    for _ in 1..b {
        let mut pick: Option<usize> = None;
        for q in (0..b).filter(|&q| !visited[q]) {
            pick = match pick {
                None => Some(q),
                Some(cur) => {
                    let better = dist[q] < dist[cur] || (dist[q] == dist[cur] && from[q] < from[cur]);
                    Some(if better { q } else { cur })
                }
            };
        }
        let j = pick.expect("an unvisited band remains");
        visited[j] = true;
        perm.push(j);
        for q in (0..b).filter(|&q| !visited[q]) {
            let v = d[[j, q]];
            if v < dist[q] || (v == dist[q] && j < from[q]) {
                dist[q] = v;
                from[q] = j;
            }
        }
    }

    let mut ordered = dm.clone();
    ordered.values = permute_matrix(d, &perm);
    ordered.ordering = perm.iter().map(|&p| dm.ordering[p]).collect();
    ordered.vat_ordered = true;
    Ok(VatResult {
        permutation: perm,
        ordered_dm: ordered,
    })
}

/// Recursive iVAT transform on a raw symmetric matrix.
///
/// Row `r` attaches to its nearest earlier index `j`; every other earlier
/// column `c` receives `max(D(r,j), D_E(j,c))`. The result is the bottleneck
/// distance along the tree built this way, which equals the full minimax-path
/// closure when the input is VAT ordered.
pub fn ivat_values(d: &Array2<f64>) -> Result<Array2<f64>> {
    check_symmetric(d)?;
    let b = d.nrows();
    let mut e = Array2::<f64>::zeros((b, b));
    for r in 1..b {
        let mut j = 0;
        for k in 1..r {
            if d[[r, k]] < d[[r, j]] {
                j = k;
            }
        }
        e[[r, j]] = d[[r, j]];
        for c in (0..r).filter(|&c| c != j) {
            // D_E(j,c) lives in the lower triangle at (max, min).
            let prev = if c < j { e[[j, c]] } else { e[[c, j]] };
            e[[r, c]] = d[[r, j]].max(prev);
        }
    }
    for r in 1..b {
        for c in 0..r {
            e[[c, r]] = e[[r, c]];
        }
    }
    Ok(e)
}

pub fn ivat_enhance(dm: &DissimilarityMatrix) -> Result<EnhancedDm> {
    Ok(EnhancedDm {
        values: ivat_values(&dm.values)?,
        source: if dm.vat_ordered {
            EnhanceSource::VatOrdered
        } else {
            EnhanceSource::Raw
        },
        ordering: dm.ordering.clone(),
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::proximity::DmMeasure;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_dm(rng: &mut impl Rng, b: usize) -> Array2<f64> {
        let mut m = Array2::zeros((b, b));
        for i in 0..b {
            for j in 0..i {
                let v: f64 = rng.random_range(0.0..1.0);
                m[[i, j]] = v;
                m[[j, i]] = v;
            }
        }
        m
    }

    /// Floyd–Warshall with (min, max) in place of (+, min).
    pub(crate) fn minimax_closure(d: &Array2<f64>) -> Array2<f64> {
        let b = d.nrows();
        let mut m = d.clone();
        for k in 0..b {
            for i in 0..b {
                for j in 0..b {
                    let via = m[[i, k]].max(m[[k, j]]);
                    if via < m[[i, j]] {
                        m[[i, j]] = via;
                    }
                }
            }
        }
        m
    }

    fn brute_force_minimax(d: &Array2<f64>, s: usize, t: usize) -> f64 {
        fn dfs(d: &Array2<f64>, at: usize, t: usize, seen: &mut Vec<bool>, worst: f64, best: &mut f64) {
            if at == t {
                *best = best.min(worst);
                return;
            }
            for nxt in 0..d.nrows() {
                if !seen[nxt] {
                    seen[nxt] = true;
                    dfs(d, nxt, t, seen, worst.max(d[[at, nxt]]), best);
                    seen[nxt] = false;
                }
            }
        }
        if s == t {
            return 0.0;
        }
        let mut seen = vec![false; d.nrows()];
        seen[s] = true;
        let mut best = f64::INFINITY;
        dfs(d, s, t, &mut seen, 0.0, &mut best);
        best
    }

    fn dm(m: Array2<f64>) -> DissimilarityMatrix {
        DissimilarityMatrix::from_values(m, DmMeasure::SquaredEuclidean, true).unwrap()
    }

    #[test]
    fn vat_hand_trace() {
        let d = dm(array![[0.0, 1.0, 4.0], [1.0, 0.0, 2.0], [4.0, 2.0, 0.0]]);
        let v = vat_order(&d).unwrap();
        assert_eq!(v.permutation, vec![0, 1, 2]);
        assert_eq!(v.ordered_dm.values, d.values);
        assert!(v.ordered_dm.vat_ordered);
    }

    #[test]
    fn vat_rejects_single_band() {
        assert!(vat_order(&dm(array![[0.0]])).is_err());
    }

    #[test]
    fn vat_groups_shuffled_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = 12;
        let mut members: Vec<usize> = (0..b).collect();
        members.shuffle(&mut rng);
        let cluster: Vec<usize> = (0..b).map(|i| usize::from(members.iter().position(|&m| m == i).unwrap() >= 6)).collect();
        let m = Array2::from_shape_fn((b, b), |(i, j)| {
            if i == j {
                0.0
            } else if cluster[i] == cluster[j] {
                0.1 + 0.01 * ((i + j) % 3) as f64
            } else {
                0.9 + 0.01 * ((i * j) % 5) as f64
            }
        });
        let v = vat_order(&dm(m)).unwrap();
        let seq: Vec<usize> = v.permutation.iter().map(|&p| cluster[p]).collect();
        let switches = seq.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(switches, 1, "clusters not contiguous: {seq:?}");
    }

    #[test]
    fn vat_on_constant_dm_is_bijection() {
        let b = 7;
        let m = Array2::from_shape_fn((b, b), |(i, j)| if i == j { 0.0 } else { 0.5 });
        let mut p = vat_order(&dm(m)).unwrap().permutation;
        p.sort_unstable();
        assert_eq!(p, (0..b).collect::<Vec<_>>());
    }

    #[test]
    fn ivat_small_example() {
        let d = dm(array![[0.0, 1.0, 4.0], [1.0, 0.0, 2.0], [4.0, 2.0, 0.0]]);
        let e = ivat_enhance(&d).unwrap();
        assert_eq!(e.values[[0, 2]], 2.0);
        assert_eq!(e.values[[0, 2]], brute_force_minimax(&d.values, 0, 2));
        assert_eq!(e.source, EnhanceSource::Raw);
    }

    #[test]
    fn ivat_fixed_point_on_ultrametric() {
        let u = array![
            [0.0, 0.2, 0.7, 0.7],
            [0.2, 0.0, 0.7, 0.7],
            [0.7, 0.7, 0.0, 0.4],
            [0.7, 0.7, 0.4, 0.0]
        ];
        assert_eq!(ivat_values(&u).unwrap(), u);
    }

    #[test]
    fn ivat_rejects_asymmetric() {
        assert!(ivat_values(&array![[0.0, 1.0], [0.5, 0.0]]).is_err());
    }

    #[test]
    fn ordered_ivat_matches_brute_force_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let d = dm(random_dm(&mut rng, 7));
            let v = vat_order(&d).unwrap();
            let e = ivat_enhance(&v.ordered_dm).unwrap();
            for s in 0..7 {
                for t in 0..7 {
                    assert_eq!(e.values[[s, t]], brute_force_minimax(&v.ordered_dm.values, s, t));
                }
            }
        }
    }

    #[test]
    fn ordered_ivat_matches_closure_on_random_15() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let d = dm(random_dm(&mut rng, 15));
            let v = vat_order(&d).unwrap();
            let e = ivat_enhance(&v.ordered_dm).unwrap();
            assert_eq!(e.values, minimax_closure(&v.ordered_dm.values));
            assert_eq!(e.source, EnhanceSource::VatOrdered);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn vat_permutation_reproduces_ordered_dm(seed in 0u64..10_000, b in 2usize..16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = dm(random_dm(&mut rng, b));
            let v = vat_order(&d).unwrap();
            let mut sorted = v.permutation.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..b).collect::<Vec<_>>());
            for p in 0..b {
                for q in 0..b {
                    prop_assert_eq!(v.ordered_dm.values[[p, q]], d.values[[v.permutation[p], v.permutation[q]]]);
                }
            }
        }

        #[test]
        fn ivat_is_idempotent_and_bounded(seed in 0u64..10_000, b in 2usize..16) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw = random_dm(&mut rng, b);
            let max_in = crate::proximity::max_off_diagonal(&raw);
            let once = ivat_values(&raw).unwrap();
            prop_assert_eq!(&ivat_values(&once).unwrap(), &once);
            for i in 0..b {
                prop_assert_eq!(once[[i, i]], 0.0);
                for j in 0..b {
                    prop_assert_eq!(once[[i, j]], once[[j, i]]);
                    prop_assert!(once[[i, j]] <= max_in);
                }
            }
            let ordered = vat_order(&dm(raw)).unwrap().ordered_dm.values;
            let enhanced = ivat_values(&ordered).unwrap();
            for (e, d) in enhanced.iter().zip(ordered.iter()) {
                prop_assert!(e <= d);
            }
        }
    }
}
