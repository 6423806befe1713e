//! Fine-to-coarse merging.
//!
//! Starting from one prototype per active fine slot, prototypes are merged
//! greedily by the size-penalised affinity
//! `cos(x, y) - lambda * min(N_x, N_y)` until the target count is reached.
//! Members of merged prototypes whose silhouette falls below the threshold are
//! pruned and re-enter the next merge round as singletons.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::config::IndexConfig;
use crate::error::{Error, Result};
use crate::similarity::{cosine_from_parts, cosine_similarity, dot, norm};
use crate::types::{CoarseCodebook, CoarsePrototype, FineCodebook};

pub const DEFAULT_MAX_ROUNDS: usize = 10;

/// A fine slot as seen by the merger.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    pub slot: usize,
    pub codeword: Vec<f64>,
    pub count: f64,
}

pub fn affinity(x: &CoarsePrototype, y: &CoarsePrototype, cfg: &IndexConfig) -> Result<f64> {
    let cos = cosine_similarity(&x.embedding, &y.embedding)?;
    Ok(cos - cfg.lambda * x.ema_count.min(y.ema_count))
}

/// Count-weighted merge of two prototypes.
pub fn merge_pair(x: &CoarsePrototype, y: &CoarsePrototype) -> Result<CoarsePrototype> {
    let total = x.ema_count + y.ema_count;
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    let embedding = x
        .embedding
        .iter()
        .zip(&y.embedding)
        .map(|(a, b)| (x.ema_count * a + y.ema_count * b) / total)
        .collect();
    let mut members: Vec<usize> = x.members.iter().chain(&y.members).copied().collect();
    members.sort_unstable();
    Ok(CoarsePrototype {
        embedding,
        ema_count: total,
        members,
    })
}

/// Working set of the merger.
#[derive(Debug, Clone)]
pub struct MergeState {
    pub prototypes: Vec<CoarsePrototype>,
    pub target_size: usize,
    pub round: usize,
    pub max_rounds: usize,
    leaves: Vec<Leaf>,
    leaf_of_slot: HashMap<usize, usize>,
    distances: Option<(u64, Vec<f64>)>,
}

impl MergeState {
    /// One singleton prototype per leaf (P := Q).
    pub fn new(leaves: Vec<Leaf>, target_size: usize, max_rounds: usize) -> Result<Self> {
        let groups = leaves.iter().map(|l| vec![l.slot]).collect();
        Self::with_partition(leaves, groups, target_size, max_rounds)
    }

    pub fn from_fine(fine: &FineCodebook, target_size: usize, max_rounds: usize) -> Result<Self> {
        let leaves = fine
            .slots
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_active())
            .map(|(k, s)| Leaf {
                slot: k,
                codeword: s.codeword.clone(),
                count: s.ema_count,
            })
            .collect();
        Self::new(leaves, target_size, max_rounds)
    }

    /// Arbitrary grouping of the leaves (each group a list of slot ids).
    pub fn with_partition(
        leaves: Vec<Leaf>,
        groups: Vec<Vec<usize>>,
        target_size: usize,
        max_rounds: usize,
    ) -> Result<Self> {
        let mut leaf_of_slot = HashMap::with_capacity(leaves.len());
        for (i, l) in leaves.iter().enumerate() {
            if norm(&l.codeword) == 0.0 {
                return Err(Error::ZeroNorm);
            }
            if leaf_of_slot.insert(l.slot, i).is_some() {
                return Err(Error::Invalid(format!("slot {} listed twice", l.slot)));
            }
        }
        let mut state = Self {
            prototypes: Vec::with_capacity(groups.len()),
            target_size,
            round: 0,
            max_rounds,
            leaves,
            leaf_of_slot,
            distances: None,
        };
        let mut seen = vec![false; state.leaves.len()];
        for g in groups {
            for s in &g {
                let i = *state
                    .leaf_of_slot
                    .get(s)
                    .ok_or_else(|| Error::Invalid(format!("slot {s} is not a leaf")))?;
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Invalid(format!("slot {s} in two prototypes")));
                }
            }
            let p = state.prototype_of(g)?;
            state.prototypes.push(p);
        }
        Ok(state)
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    pub fn total_count(&self) -> f64 {
        self.prototypes.iter().map(|p| p.ema_count).sum()
    }

    fn leaf(&self, slot: usize) -> &Leaf {
        &self.leaves[self.leaf_of_slot[&slot]]
    }

    /// Count-weighted mean over member leaves.
    fn prototype_of(&self, mut members: Vec<usize>) -> Result<CoarsePrototype> {
        members.sort_unstable();
        let dim = self.leaves.first().map_or(0, |l| l.codeword.len());
        let mut acc = vec![0.0; dim];
        let mut total = 0.0;
        for &m in &members {
            let l = self.leaf(m);
            for (a, q) in acc.iter_mut().zip(&l.codeword) {
                *a += l.count * q;
            }
            total += l.count;
        }
        if members.len() > 1 && total <= 0.0 {
            return Err(Error::ZeroMass);
        }
        let embedding = if members.len() == 1 {
            self.leaf(members[0]).codeword.clone()
        } else {
            acc.iter().map(|a| a / total).collect()
        };
        Ok(CoarsePrototype {
            embedding,
            ema_count: total,
            members,
        })
    }

    fn sort_canonical(&mut self) {
        self.prototypes.sort_by_key(|p| p.members[0]);
    }

    fn leaf_distance_matrix(&mut self, lambda: f64) -> &[f64] {
        let key = lambda.to_bits();
        if self.distances.as_ref().map(|d| d.0) != Some(key) {
            let n = self.leaves.len();
            let norms: Vec<f64> = self.leaves.iter().map(|l| norm(&l.codeword)).collect();
            let leaves = &self.leaves;
            let rows: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    (0..n)
                        .map(|j| {
                            leaf_distance(&leaves[i], &leaves[j], norms[i], norms[j], lambda)
                        })
                        .collect()
                })
                .collect();
            self.distances = Some((key, rows.concat()));
        }
        &self.distances.as_ref().expect("just filled").1
    }
}

fn leaf_distance(a: &Leaf, b: &Leaf, na: f64, nb: f64, lambda: f64) -> f64 {
    let cos = cosine_from_parts(dot(&a.codeword, &b.codeword), na, nb);
    1.0 - (cos - lambda * a.count.min(b.count))
}

fn pair_affinity(x: &CoarsePrototype, y: &CoarsePrototype, nx: f64, ny: f64, lambda: f64) -> f64 {
    let cos = if nx > 0.0 && ny > 0.0 {
        cosine_from_parts(dot(&x.embedding, &y.embedding), nx, ny)
    } else {
        0.0
    };
    cos - lambda * x.ema_count.min(y.ema_count)
}

/// `(value, partner)` is preferred over `(best_value, best_partner)`.
fn beats(value: f64, partner: usize, best: (f64, usize)) -> bool {
    value > best.0 || (value == best.0 && partner < best.1)
}

/// Greedily merge the highest-affinity pair until `target_size` prototypes
/// remain. Ties go to the lexicographically smallest index pair in the
/// canonical order (prototypes sorted by smallest member slot).
pub fn merge_round(state: &mut MergeState, cfg: &IndexConfig) -> Result<()> {
    state.sort_canonical();
    let n = state.prototypes.len();
    if n <= 1 || n <= state.target_size {
        return Ok(());
    }
    let lambda = cfg.lambda;
    let protos = &mut state.prototypes;
    let mut norms: Vec<f64> = protos.iter().map(|p| norm(&p.embedding)).collect();
    let mut alive = vec![true; n];

    let row_best_of = |i: usize, protos: &[CoarsePrototype], norms: &[f64], alive: &[bool]| {
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for j in 0..protos.len() {
            if j != i && alive[j] {
                let w = pair_affinity(&protos[i], &protos[j], norms[i], norms[j], lambda);
                if beats(w, j, best) {
                    best = (w, j);
                }
            }
        }
        best
    };

    let mut row_best: Vec<(f64, usize)> = (0..n)
        .into_par_iter()
        .map(|i| row_best_of(i, protos, &norms, &alive))
        .collect();

    let mut remaining = n;
    while remaining > state.target_size {
        let mut pick: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            let (w, j) = row_best[i];
            let (a, b) = (i.min(j), i.max(j));
            let better = match pick {
                None => true,
                Some((bw, ba, bb)) => w > bw || (w == bw && (a, b) < (ba, bb)),
            };
            if better {
                pick = Some((w, a, b));
            }
        }
        let (_, a, b) = pick.expect("at least two prototypes alive");

        protos[a] = merge_pair(&protos[a], &protos[b])?;
        protos[b].members.clear();
        alive[b] = false;
        norms[a] = norm(&protos[a].embedding);
        remaining -= 1;

        row_best[a] = row_best_of(a, protos, &norms, &alive);
        let stale: Vec<usize> = (0..n)
            .filter(|&z| alive[z] && z != a && (row_best[z].1 == a || row_best[z].1 == b))
            .collect();
        let refreshed: Vec<(f64, usize)> = stale
            .par_iter()
            .map(|&z| row_best_of(z, protos, &norms, &alive))
            .collect();
        for (&z, best) in stale.iter().zip(refreshed) {
            row_best[z] = best;
        }
        for z in 0..n {
            if alive[z] && z != a && row_best[z].1 != a && row_best[z].1 != b {
                let w = pair_affinity(&protos[z], &protos[a], norms[z], norms[a], lambda);
                if beats(w, a, row_best[z]) {
                    row_best[z] = (w, a);
                }
            }
        }
    }

    let mut k = 0;
    protos.retain(|_| {
        let keep = alive[k];
        k += 1;
        keep
    });
    state.sort_canonical();
    Ok(())
}

/// Silhouette of fine slot `q` in its current prototype, with
/// `distance = 1 - affinity` between fine slots. Slots in singleton
/// prototypes, or with no other prototype to compare against, score 0.
pub fn silhouette(q: usize, state: &MergeState, cfg: &IndexConfig) -> Result<f64> {
    let own = state
        .prototypes
        .iter()
        .position(|p| p.members.contains(&q))
        .ok_or_else(|| Error::Invalid(format!("slot {q} is not in any prototype")))?;
    let lq = state.leaf(q);
    let nq = norm(&lq.codeword);
    let dist = |s: usize| {
        let l = state.leaf(s);
        leaf_distance(lq, l, nq, norm(&l.codeword), cfg.lambda)
    };
    Ok(silhouette_with(q, own, &state.prototypes, dist))
}

fn silhouette_with(q: usize, own: usize, protos: &[CoarsePrototype], dist: impl Fn(usize) -> f64) -> f64 {
    let p = &protos[own];
    if p.members.len() < 2 || protos.len() < 2 {
        return 0.0;
    }
    let a = p.members.iter().filter(|&&m| m != q).map(|&m| dist(m)).sum::<f64>()
        / (p.members.len() - 1) as f64;
    let b = protos
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != own)
        .map(|(_, o)| o.members.iter().map(|&m| dist(m)).sum::<f64>() / o.members.len() as f64)
        .fold(f64::INFINITY, f64::min);
    let denom = a.max(b);
    if denom <= 0.0 {
        0.0
    } else {
        (b - a) / denom
    }
}

/// [`silhouette_with`] over leaf indices and one precomputed distance row.
fn silhouette_rows(q: usize, own: usize, members: &[Vec<usize>], row: &[f64]) -> f64 {
    let p = &members[own];
    if p.len() < 2 || members.len() < 2 {
        return 0.0;
    }
    let a = p.iter().filter(|&&m| m != q).map(|&m| row[m]).sum::<f64>() / (p.len() - 1) as f64;
    let b = members
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != own)
        .map(|(_, o)| o.iter().map(|&m| row[m]).sum::<f64>() / o.len() as f64)
        .fold(f64::INFINITY, f64::min);
    let denom = a.max(b);
    if denom <= 0.0 {
        0.0
    } else {
        (b - a) / denom
    }
}

/// Silhouettes of every member of every merged prototype, keyed by slot.
pub fn silhouettes(state: &mut MergeState, cfg: &IndexConfig) -> Vec<(usize, f64)> {
    let leaf_of_slot = state.leaf_of_slot.clone();
    let n = state.leaves.len();
    let protos = state.prototypes.clone();
    let dm = state.leaf_distance_matrix(cfg.lambda);
    let member_leaves: Vec<Vec<usize>> = protos
        .iter()
        .map(|p| p.members.iter().map(|m| leaf_of_slot[m]).collect())
        .collect();
    let work: Vec<(usize, usize)> = protos
        .iter()
        .enumerate()
        .filter(|(_, p)| p.members.len() >= 2)
        .flat_map(|(pi, p)| (0..p.members.len()).map(move |mi| (pi, mi)))
        .collect();
    work.par_iter()
        .map(|&(pi, mi)| {
            let q = protos[pi].members[mi];
            let own = member_leaves[pi][mi];
            let row = &dm[own * n..][..n];
            (q, silhouette_rows(own, pi, &member_leaves, row))
        })
        .collect()
}

/// Remove members of merged prototypes whose silhouette is below the
/// threshold. Surviving prototypes are recomputed from their remaining
/// members; emptied ones disappear. Returns the pruned slots, ascending.
pub fn prune(state: &mut MergeState, cfg: &IndexConfig) -> Result<Vec<usize>> {
    let mut pruned: Vec<usize> = silhouettes(state, cfg)
        .into_iter()
        .filter(|&(_, s)| s < cfg.silhouette_threshold)
        .map(|(q, _)| q)
        .collect();
    if pruned.is_empty() {
        return Ok(pruned);
    }
    pruned.sort_unstable();
    let old = std::mem::take(&mut state.prototypes);
    for p in old {
        let keep: Vec<usize> = p
            .members
            .iter()
            .copied()
            .filter(|m| pruned.binary_search(m).is_err())
            .collect();
        if keep.len() == p.members.len() {
            state.prototypes.push(p);
        } else if !keep.is_empty() {
            let rebuilt = state.prototype_of(keep)?;
            state.prototypes.push(rebuilt);
        }
    }
    Ok(pruned)
}

/// Put pruned slots back into the working set as singletons.
pub fn reconnect(state: &mut MergeState, pruned: &[usize]) -> Result<()> {
    for &s in pruned {
        let p = state.prototype_of(vec![s])?;
        state.prototypes.push(p);
    }
    state.sort_canonical();
    Ok(())
}

/// Merge, prune and reconnect until the working set has `target_size`
/// prototypes and nothing was pruned, or `max_rounds` is reached. The last
/// round never prunes, so the output always has exactly `target_size`
/// prototypes.
pub fn build_hierarchy(
    fine: &FineCodebook,
    cfg: &IndexConfig,
    target_size: usize,
    max_rounds: usize,
) -> Result<CoarseCodebook> {
    let available = fine.active_count();
    if target_size == 0 || target_size > available {
        return Err(Error::Target {
            target: target_size,
            available,
        });
    }
    if max_rounds == 0 {
        return Err(Error::Config("max_rounds must be at least 1".into()));
    }
    let mut state = MergeState::from_fine(fine, target_size, max_rounds)?;
    run_rounds(&mut state, cfg)?;
    Ok(CoarseCodebook::from_prototypes(state.prototypes, fine.len()))
}

pub fn run_rounds(state: &mut MergeState, cfg: &IndexConfig) -> Result<()> {
    loop {
        state.round += 1;
        merge_round(state, cfg)?;
        if state.round >= state.max_rounds {
            break;
        }
        let pruned = prune(state, cfg)?;
        if pruned.is_empty() {
            break;
        }
        reconnect(state, &pruned)?;
    }
    state.sort_canonical();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn proto(e: Vec<f64>, n: f64, members: Vec<usize>) -> CoarsePrototype {
        CoarsePrototype {
            embedding: e,
            ema_count: n,
            members,
        }
    }

    fn cfg(lambda: f64) -> IndexConfig {
        IndexConfig {
            lambda,
            dim: 2,
            ..Default::default()
        }
    }

    fn leaf(slot: usize, codeword: Vec<f64>, count: f64) -> Leaf {
        Leaf { slot, codeword, count }
    }

    #[test]
    fn affinity_examples() {
        let x = proto(vec![1.0, 1.0], 1.0, vec![0]);
        let y = proto(vec![2.0, 2.0], 2.0, vec![1]);
        assert!((affinity(&x, &y, &cfg(0.01)).unwrap() - 0.99).abs() < 1e-15);
        let c = cosine_similarity(&x.embedding, &y.embedding).unwrap();
        assert_eq!(affinity(&x, &y, &cfg(0.0)).unwrap(), c);
        let a = proto(vec![1.0, 0.0], 5.0, vec![0]);
        let b = proto(vec![0.0, 1.0], 3.0, vec![1]);
        assert!((affinity(&a, &b, &cfg(0.01)).unwrap() + 0.03).abs() < 1e-15);
        let z = proto(vec![0.0, 0.0], 1.0, vec![2]);
        assert!(affinity(&a, &z, &cfg(0.01)).is_err());
    }

    #[test]
    fn merge_pair_examples() {
        let x = proto(vec![1.0, 0.0], 1.0, vec![0]);
        let y = proto(vec![0.0, 1.0], 3.0, vec![1]);
        let m = merge_pair(&x, &y).unwrap();
        assert_eq!(m.embedding, vec![0.25, 0.75]);
        assert_eq!(m.ema_count, 4.0);
        assert_eq!(m.members, vec![0, 1]);

        let y2 = proto(vec![0.0, 1.0], 1.0, vec![1]);
        assert_eq!(merge_pair(&x, &y2).unwrap().embedding, vec![0.5, 0.5]);

        let y0 = proto(vec![0.0, 1.0], 0.0, vec![1]);
        let m = merge_pair(&x, &y0).unwrap();
        assert_eq!(m.embedding, x.embedding);
        assert_eq!(m.ema_count, 1.0);

        let x0 = proto(vec![1.0, 0.0], 0.0, vec![0]);
        assert!(matches!(merge_pair(&x0, &y0), Err(Error::ZeroMass)));
    }

    #[test]
    fn round_merges_strictly_best_pair() {
        let leaves = vec![
            leaf(0, vec![1.0, 0.0], 1.0),
            leaf(1, vec![1.0, 0.1], 1.0),
            leaf(2, vec![0.0, 1.0], 1.0),
        ];
        let mut st = MergeState::new(leaves, 2, 1).unwrap();
        merge_round(&mut st, &cfg(0.01)).unwrap();
        let groups: Vec<_> = st.prototypes.iter().map(|p| p.members.clone()).collect();
        assert_eq!(groups, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn round_at_target_is_noop() {
        let leaves = vec![leaf(0, vec![1.0, 0.0], 1.0), leaf(1, vec![0.0, 1.0], 1.0)];
        let mut st = MergeState::new(leaves, 2, 1).unwrap();
        let before = st.prototypes.clone();
        merge_round(&mut st, &cfg(0.01)).unwrap();
        assert_eq!(st.prototypes, before);
    }

    #[test]
    fn silhouette_symmetric_case_is_zero() {
        // q=0 sits exactly between its partner and the foreign prototype.
        let leaves = vec![
            leaf(0, vec![1.0, 0.0], 1.0),
            leaf(1, vec![0.0, 1.0], 1.0),
            leaf(2, vec![0.0, -1.0], 1.0),
        ];
        let st = MergeState::with_partition(leaves, vec![vec![0, 1], vec![2]], 2, 1).unwrap();
        assert_eq!(silhouette(0, &st, &cfg(0.0)).unwrap(), 0.0);
        // singleton prototypes are exempt
        assert_eq!(silhouette(2, &st, &cfg(0.0)).unwrap(), 0.0);
    }

    #[test]
    fn silhouette_analytic_value() {
        // distances with lambda = 0: a = 1 - cos(q, own) = 0.1, b = 1 - cos(q, other) = 0.9
        let c_own = 0.9f64;
        let c_other = 0.1f64;
        let leaves = vec![
            leaf(0, vec![1.0, 0.0, 0.0], 1.0),
            leaf(1, vec![c_own, (1.0 - c_own * c_own).sqrt(), 0.0], 1.0),
            leaf(2, vec![c_other, 0.0, (1.0 - c_other * c_other).sqrt()], 1.0),
        ];
        let st = MergeState::with_partition(leaves, vec![vec![0, 1], vec![2]], 2, 1).unwrap();
        let s = silhouette(0, &st, &cfg(0.0)).unwrap();
        assert!((s - 0.8 / 0.9).abs() < 1e-12, "{s}");
    }

    #[test]
    fn prune_nothing_at_minus_one() {
        let leaves = vec![
            leaf(0, vec![1.0, 0.0], 1.0),
            leaf(1, vec![-1.0, 0.05], 1.0),
            leaf(2, vec![0.0, 1.0], 1.0),
        ];
        let mut st = MergeState::with_partition(leaves, vec![vec![0, 1], vec![2]], 2, 3).unwrap();
        let c = IndexConfig {
            silhouette_threshold: -1.0,
            ..cfg(0.0)
        };
        assert!(prune(&mut st, &c).unwrap().is_empty());
    }

    #[test]
    fn prune_removes_the_outlier() {
        let leaves = vec![
            leaf(0, vec![1.0, 0.0], 1.0),
            leaf(1, vec![1.0, 0.05], 1.0),
            leaf(2, vec![1.0, -0.05], 1.0),
            leaf(3, vec![0.0, 1.0], 1.0),
            leaf(4, vec![0.05, 1.0], 1.0),
            leaf(5, vec![-0.1, 1.0], 1.0),
        ];
        let mut st =
            MergeState::with_partition(leaves, vec![vec![0, 1, 2, 5], vec![3, 4]], 2, 3).unwrap();
        let pruned = prune(&mut st, &cfg(0.0)).unwrap();
        assert_eq!(pruned, vec![5]);
        let groups: Vec<_> = st.prototypes.iter().map(|p| p.members.clone()).collect();
        assert_eq!(groups, vec![vec![0, 1, 2], vec![3, 4]]);
    }

    #[test]
    fn hierarchy_identity_and_single_round() {
        let mut fine = FineCodebook::new(2);
        for (k, e) in [[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]].iter().enumerate() {
            let mut s = crate::types::ClusterSlot::empty(2);
            s.activate(e.to_vec(), 1.0, k as u64);
            fine.slots.push(s);
        }
        let c = cfg(0.01);
        let h = build_hierarchy(&fine, &c, 3, 10).unwrap();
        assert_eq!(h.len(), 3);
        assert!(h.prototypes.iter().all(|p| p.members.len() == 1));

        let h = build_hierarchy(&fine, &c, 1, 10).unwrap();
        assert_eq!(h.prototypes[0].members, vec![0, 1, 2]);
        assert_eq!(h.parent, vec![Some(0); 3]);

        assert!(matches!(build_hierarchy(&fine, &c, 4, 10), Err(Error::Target { .. })));
        assert!(build_hierarchy(&fine, &c, 0, 10).is_err());
    }
}
