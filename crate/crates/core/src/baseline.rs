//! Fixed-size VQ and residual quantization baselines trained with the same
//! EMA machinery as the dynamic codebook, but with unconditional
//! nearest-codeword assignment, no cluster creation and no resets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::indexer::{accumulate, ema_update};
use crate::similarity::{cosine_from_parts, dot, norm, squared_euclidean};
use crate::types::{ItemRecord, Snapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Cosine,
    /// Negative squared Euclidean distance.
    Euclidean,
}

impl Metric {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cosine" => Some(Metric::Cosine),
            "euclidean" => Some(Metric::Euclidean),
            _ => None,
        }
    }
}

/// A K-entry codebook. Entries are seeded from the first K distinct inputs
/// and never created or removed afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct VqCodebook {
    pub dim: usize,
    pub capacity: usize,
    pub metric: Metric,
    pub codewords: Vec<Vec<f64>>,
    pub ema_sum: Vec<Vec<f64>>,
    pub ema_count: Vec<f64>,
    pub step: u64,
}

impl VqCodebook {
    pub fn new(capacity: usize, dim: usize, metric: Metric) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("codebook size must be positive".into()));
        }
        Ok(Self {
            dim,
            capacity,
            metric,
            codewords: Vec::with_capacity(capacity),
            ema_sum: Vec::with_capacity(capacity),
            ema_count: Vec::with_capacity(capacity),
            step: 0,
        })
    }

    /// Fully seeded codebook with `ema_sum = codeword`, `ema_count = 1`.
    pub fn from_codewords(codewords: Vec<Vec<f64>>, metric: Metric) -> Result<Self> {
        let dim = codewords.first().map(Vec::len).ok_or_else(|| Error::Config("no codewords".into()))?;
        let mut cb = Self::new(codewords.len(), dim, metric)?;
        for c in codewords {
            cb.seed(c);
        }
        Ok(cb)
    }

    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.codewords.len() == self.capacity
    }

    fn seed(&mut self, e: Vec<f64>) -> usize {
        self.ema_sum.push(e.clone());
        self.codewords.push(e);
        self.ema_count.push(1.0);
        self.codewords.len() - 1
    }

    fn is_distinct(&self, e: &[f64]) -> bool {
        !self.codewords.iter().any(|c| c.as_slice() == e)
    }

    pub fn snapshot(&self) -> Snapshot {
        let mut codewords: Vec<Option<Vec<f64>>> = self.codewords.iter().cloned().map(Some).collect();
        codewords.resize(self.capacity, None);
        let mut counts = self.ema_count.clone();
        counts.resize(self.capacity, 0.0);
        Snapshot {
            dim: self.dim,
            codewords,
            counts,
        }
    }

    fn norms(&self) -> Vec<f64> {
        self.codewords.iter().map(|c| norm(c)).collect()
    }

    fn assign_with_norms(&self, e: &[f64], norms: &[f64]) -> (usize, f64) {
        let mut best = (0usize, f64::NEG_INFINITY);
        match self.metric {
            Metric::Cosine => {
                let ne = norm(e);
                for (k, (c, &nc)) in self.codewords.iter().zip(norms).enumerate() {
                    let s = if ne > 0.0 && nc > 0.0 {
                        cosine_from_parts(dot(e, c), ne, nc)
                    } else {
                        0.0
                    };
                    if s > best.1 {
                        best = (k, s);
                    }
                }
            }
            Metric::Euclidean => {
                for (k, c) in self.codewords.iter().enumerate() {
                    let s = -squared_euclidean(e, c);
                    if s > best.1 {
                        best = (k, s);
                    }
                }
            }
        }
        best
    }
}

/// Nearest codeword under the codebook's metric, lowest index on ties. Under
/// cosine a zero-norm input (or codeword) scores 0.
pub fn vq_assign(e: &[f64], cb: &VqCodebook) -> Result<(usize, f64)> {
    if cb.is_empty() {
        return Err(Error::Invalid("codebook has no codewords".into()));
    }
    if e.len() != cb.dim {
        return Err(Error::Dimension {
            expected: cb.dim,
            actual: e.len(),
        });
    }
    Ok(cb.assign_with_norms(e, &cb.norms()))
}

/// Residual chain through the layers: one code per layer.
pub fn rq_assign(e: &[f64], layers: &[VqCodebook]) -> Result<Vec<usize>> {
    if layers.is_empty() {
        return Err(Error::Invalid("residual quantizer needs at least one layer".into()));
    }
    let mut r = e.to_vec();
    let mut codes = Vec::with_capacity(layers.len());
    for layer in layers {
        let (c, _) = vq_assign(&r, layer)?;
        for (x, q) in r.iter_mut().zip(&layer.codewords[c]) {
            *x -= q;
        }
        codes.push(c);
    }
    Ok(codes)
}

/// Seed from distinct inputs while the codebook has room, assign the rest,
/// then apply the EMA update to every codeword. Returns `(code, score)` per
/// input; seeded inputs get their own code with score 1 (cosine) or 0.
/// Also returns the codewords as they stood when the inputs were assigned.
fn train_on(inputs: &[&[f64]], cb: &mut VqCodebook, gamma: f64) -> (Vec<(usize, f64)>, Vec<Vec<f64>>) {
    cb.step += 1;
    let mut out: Vec<Option<(usize, f64)>> = vec![None; inputs.len()];
    let mut rest = Vec::with_capacity(inputs.len());
    for (i, e) in inputs.iter().enumerate() {
        if !cb.is_full() && cb.is_distinct(e) && norm(e) > 0.0 {
            let k = cb.seed(e.to_vec());
            let score = match cb.metric {
                Metric::Cosine => 1.0,
                Metric::Euclidean => 0.0,
            };
            out[i] = Some((k, score));
        } else {
            rest.push(i);
        }
    }
    let assigned_against = cb.codewords.clone();
    if !cb.is_empty() {
        let norms = cb.norms();
        let assigned: Vec<(usize, f64)> = rest
            .par_iter()
            .map(|&i| cb.assign_with_norms(inputs[i], &norms))
            .collect();
        let (sums, counts) = accumulate(
            cb.len(),
            cb.dim,
            rest.iter().zip(&assigned).map(|(&i, &(k, _))| (k, inputs[i])),
        );
        for k in 0..cb.len() {
            ema_update(&mut cb.ema_sum[k], &mut cb.ema_count[k], &sums[k], counts[k], gamma);
            if cb.ema_count[k] > 0.0 {
                let n = cb.ema_count[k];
                for (q, s) in cb.codewords[k].iter_mut().zip(&cb.ema_sum[k]) {
                    *q = s / n;
                }
            }
        }
        for (&i, a) in rest.iter().zip(assigned) {
            out[i] = Some(a);
        }
    }
    let out = out
        .into_iter()
        .map(|a| a.unwrap_or((usize::MAX, f64::NEG_INFINITY)))
        .collect();
    (out, assigned_against)
}

/// One VQ training step. Every item is assigned; nothing is ever rejected.
pub fn vq_train_step(batch: &[ItemRecord], cb: &mut VqCodebook, gamma: f64) -> Result<Vec<(usize, f64)>> {
    for item in batch {
        if item.embedding.len() != cb.dim {
            return Err(Error::Dimension {
                expected: cb.dim,
                actual: item.embedding.len(),
            });
        }
    }
    let inputs: Vec<&[f64]> = batch.iter().map(|r| r.embedding.as_slice()).collect();
    Ok(train_on(&inputs, cb, gamma).0)
}

/// Residual quantizer: one codebook per layer, each trained on the residuals
/// left by the layers above it (computed before this step's updates).
#[derive(Debug, Clone, PartialEq)]
pub struct RqCodebook {
    pub layers: Vec<VqCodebook>,
}

impl RqCodebook {
    pub fn new(layers: usize, capacity: usize, dim: usize, metric: Metric) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Config("at least one layer is required".into()));
        }
        Ok(Self {
            layers: (0..layers)
                .map(|_| VqCodebook::new(capacity, dim, metric))
                .collect::<Result<_>>()?,
        })
    }

    /// Returns the per-layer codes of every item.
    pub fn train_step(&mut self, batch: &[ItemRecord], gamma: f64) -> Result<Vec<Vec<usize>>> {
        let dim = self.layers[0].dim;
        for item in batch {
            if item.embedding.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: item.embedding.len(),
                });
            }
        }
        let mut residuals: Vec<Vec<f64>> = batch.iter().map(|r| r.embedding.clone()).collect();
        let mut codes = vec![Vec::with_capacity(self.layers.len()); batch.len()];
        for layer in &mut self.layers {
            let inputs: Vec<&[f64]> = residuals.iter().map(Vec::as_slice).collect();
            let (assigned, against) = train_on(&inputs, layer, gamma);
            let next: Vec<Vec<f64>> = residuals
                .iter()
                .zip(&assigned)
                .enumerate()
                .map(|(i, (r, &(k, _)))| {
                    codes[i].push(k);
                    r.iter().zip(&against[k]).map(|(x, c)| x - c).collect()
                })
                .collect();
            residuals = next;
        }
        Ok(codes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, e: Vec<f64>) -> ItemRecord {
        ItemRecord {
            item_id: id,
            embedding: e,
            tag: 0,
            popularity: 0,
        }
    }

    fn basis(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn exact_codeword_wins() {
        let cb = VqCodebook::from_codewords((0..10).map(|i| basis(10, i)).collect(), Metric::Cosine).unwrap();
        let (k, s) = vq_assign(&basis(10, 7), &cb).unwrap();
        assert_eq!(k, 7);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn single_codeword_always_zero() {
        let cb = VqCodebook::from_codewords(vec![vec![1.0, 2.0]], Metric::Euclidean).unwrap();
        for e in [[5.0, -1.0], [-3.0, 0.5], [0.0, 0.0]] {
            assert_eq!(vq_assign(&e, &cb).unwrap().0, 0);
        }
    }

    #[test]
    fn euclidean_picks_nearest() {
        let cb = VqCodebook::from_codewords(vec![vec![0.0, 0.0], vec![10.0, 0.0]], Metric::Euclidean).unwrap();
        let (k, s) = vq_assign(&[9.0, 0.0], &cb).unwrap();
        assert_eq!((k, s), (1, -1.0));
    }

    #[test]
    fn rq_exact_first_layer_leaves_zero_residual() {
        let l1 = VqCodebook::from_codewords(vec![vec![1.0, 0.0], vec![0.0, 3.0]], Metric::Euclidean).unwrap();
        let l2 = VqCodebook::from_codewords(vec![vec![0.5, 0.5], vec![0.0, 0.0]], Metric::Euclidean).unwrap();
        assert_eq!(rq_assign(&[0.0, 3.0], &[l1, l2]).unwrap(), vec![1, 1]);
    }

    #[test]
    fn identical_batch_grows_one_codeword() {
        let mut cb = VqCodebook::from_codewords(vec![basis(3, 0), basis(3, 1)], Metric::Cosine).unwrap();
        let batch: Vec<_> = (0..5).map(|i| rec(i, basis(3, 1))).collect();
        let a = vq_train_step(&batch, &mut cb, 0.99).unwrap();
        assert!(a.iter().all(|&(k, _)| k == 1));
        assert!(cb.ema_count[1] > 1.0 && cb.ema_count[0] < 1.0);
    }

    #[test]
    fn empty_batch_only_decays() {
        let mut cb = VqCodebook::from_codewords(vec![basis(3, 0), basis(3, 1)], Metric::Cosine).unwrap();
        vq_train_step(&[], &mut cb, 0.9993).unwrap();
        assert!(cb.ema_count.iter().all(|&n| (n - 0.9993).abs() < 1e-15));
        assert_eq!(cb.codewords[0], basis(3, 0));
        assert_eq!(cb.len(), 2);
    }

    #[test]
    fn seeding_takes_first_distinct_items() {
        let mut cb = VqCodebook::new(2, 2, Metric::Cosine).unwrap();
        let batch = vec![
            rec(1, vec![1.0, 0.0]),
            rec(2, vec![1.0, 0.0]),
            rec(3, vec![0.0, 1.0]),
            rec(4, vec![1.0, 0.1]),
        ];
        let a = vq_train_step(&batch, &mut cb, 0.99).unwrap();
        assert_eq!(a.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 0, 1, 0]);
        assert_eq!(cb.len(), 2);
        for _ in 0..3 {
            vq_train_step(&batch, &mut cb, 0.99).unwrap();
        }
        assert_eq!(cb.len(), 2);
    }

    #[test]
    fn rq_training_keeps_layer_sizes() {
        let mut rq = RqCodebook::new(2, 3, 2, Metric::Euclidean).unwrap();
        let batch: Vec<_> = (0..20)
            .map(|i| rec(i, vec![(i as f64).sin(), (i as f64 * 0.7).cos()]))
            .collect();
        let codes = rq.train_step(&batch, 0.99).unwrap();
        assert!(codes.iter().all(|c| c.len() == 2));
        rq.train_step(&batch, 0.99).unwrap();
        assert!(rq.layers.iter().all(|l| l.len() == 3));
    }
}
