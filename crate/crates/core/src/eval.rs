//! Offline diagnostics: item-to-cluster and cluster-to-cluster cosine
//! histograms, cluster-size uniformity by popularity bucket, the codeword
//! stability bound and pairwise scores against ground truth.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{cosine_similarity, dot, normalized};
use crate::types::{ItemRecord, Snapshot};

pub const BIN_WIDTH: f64 = 0.02;
pub const BIN_COUNT: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub item_id: u64,
    pub embedding: Vec<f64>,
    pub popularity: u64,
    pub code: usize,
    pub truth: Option<u32>,
}

/// Builds evaluation items from records and their ground truth. Records
/// without a code are left out.
pub fn build_sample<'a>(
    records: impl IntoIterator<Item = (&'a ItemRecord, Option<u32>)>,
    mut code_of: impl FnMut(&ItemRecord) -> Option<usize>,
) -> Vec<EvalItem> {
    records
        .into_iter()
        .filter_map(|(r, truth)| {
            code_of(r).map(|code| EvalItem {
                item_id: r.item_id,
                embedding: r.embedding.clone(),
                popularity: r.popularity,
                code,
                truth,
            })
        })
        .collect()
}

/// Seeded uniform subsample without replacement, in original order.
pub fn subsample<T: Clone>(items: &[T], size: usize, seed: u64) -> Vec<T> {
    if size >= items.len() {
        return items.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, items.len(), size).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i].clone()).collect()
}

/// Fixed-width histogram over [-1, 1] with exact mean and median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
    pub n: usize,
    pub mean: f64,
    pub median: f64,
}

impl Histogram {
    /// Values are clamped into [-1, 1]; 1.0 lands in the last bin.
    pub fn from_values(mut values: Vec<f64>) -> Self {
        let mut counts = vec![0u64; BIN_COUNT];
        let mut sum = 0.0;
        for v in values.iter_mut() {
            *v = v.clamp(-1.0, 1.0);
            sum += *v;
            counts[bin_of(*v)] += 1;
        }
        let n = values.len();
        let (mean, median) = if n == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (sum / n as f64, median_of(&mut values))
        };
        Self {
            counts,
            n,
            mean,
            median,
        }
    }

    pub fn edges(bin: usize) -> (f64, f64) {
        let lo = -1.0 + bin as f64 * BIN_WIDTH;
        (lo, if bin + 1 == BIN_COUNT { 1.0 } else { lo + BIN_WIDTH })
    }

    /// `bin_left,bin_right,count` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_left,bin_right,count\n");
        for (b, c) in self.counts.iter().enumerate() {
            let (lo, hi) = Self::edges(b);
            s.push_str(&format!("{lo:.2},{hi:.2},{c}\n"));
        }
        s
    }
}

pub fn bin_of(v: f64) -> usize {
    (((v + 1.0) / BIN_WIDTH).floor().max(0.0) as usize).min(BIN_COUNT - 1)
}

fn median_of(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, &mut hi, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        hi
    } else {
        let lo = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo + hi) / 2.0
    }
}

fn median_usize(sorted: &[usize]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct I2cReport {
    pub histogram: Histogram,
    /// Items whose code points at an empty or missing slot.
    pub stale: usize,
}

pub fn i2c_histogram(sample: &[EvalItem], snapshot: &Snapshot) -> Result<I2cReport> {
    if sample.is_empty() {
        return Err(Error::Invalid("empty evaluation sample".into()));
    }
    let scores: Vec<Option<f64>> = sample
        .par_iter()
        .map(|it| {
            snapshot
                .codeword(it.code)
                .and_then(|q| cosine_similarity(&it.embedding, q).ok())
        })
        .collect();
    let stale = scores.iter().filter(|s| s.is_none()).count();
    Ok(I2cReport {
        histogram: Histogram::from_values(scores.into_iter().flatten().collect()),
        stale,
    })
}

/// Cosine over all unordered pairs of active codewords.
pub fn c2c_histogram(snapshot: &Snapshot) -> Result<Histogram> {
    let units: Vec<Vec<f64>> = snapshot.active().filter_map(|(_, q)| normalized(q)).collect();
    if units.len() < 2 {
        return Err(Error::Invalid(format!(
            "cluster-to-cluster similarity needs at least 2 active codewords, found {}",
            units.len()
        )));
    }
    let values: Vec<f64> = (0..units.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let units = &units;
            (i + 1..units.len()).map(move |j| dot(&units[i], &units[j]))
        })
        .collect();
    Ok(Histogram::from_values(values))
}

/// A popularity stratum `(lo, hi]`; `hi = None` is unbounded. The first
/// bucket also takes popularity 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularityBucket {
    pub lo: u64,
    pub hi: Option<u64>,
}

impl PopularityBucket {
    pub fn label(&self) -> String {
        match self.hi {
            Some(h) => format!("({},{}]", self.lo, h),
            None => format!("({},inf)", self.lo),
        }
    }
}

pub fn default_buckets() -> Vec<PopularityBucket> {
    let b = |lo, hi| PopularityBucket { lo, hi };
    vec![
        b(0, Some(1_000)),
        b(1_000, Some(5_000)),
        b(5_000, Some(10_000)),
        b(10_000, Some(100_000)),
        b(100_000, None),
    ]
}

fn bucket_index(buckets: &[PopularityBucket], p: u64) -> Option<usize> {
    buckets
        .iter()
        .enumerate()
        .position(|(i, b)| (p > b.lo || (i == 0 && p == b.lo)) && b.hi.is_none_or(|h| p <= h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketCurve {
    pub bucket: PopularityBucket,
    pub items: usize,
    /// Distinct clusters holding at least one item of the bucket.
    pub clusters: usize,
    /// Cumulative share of the bucket's items over clusters sorted by
    /// descending bucket count. `None` when the bucket is empty.
    pub curve: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    /// `(slot, items)` for every active slot, ascending by slot.
    pub sizes: Vec<(usize, usize)>,
    pub occupied: usize,
    pub max_size: usize,
    /// Median over occupied slots.
    pub median_size: f64,
    /// max / median over occupied slots; `None` when a single slot holds
    /// everything and the ratio says nothing.
    pub max_median_ratio: Option<f64>,
    /// max / median over all active slots, `None` if that median is 0.
    pub max_median_ratio_all: Option<f64>,
    /// Gini coefficient of the sizes of all active slots.
    pub gini: f64,
    pub buckets: Vec<BucketCurve>,
    pub stale: usize,
}

pub fn gini(values: &[usize]) -> f64 {
    let n = values.len();
    let total: f64 = values.iter().map(|&v| v as f64).sum();
    if n == 0 || total == 0.0 {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| (i + 1) as f64 * v as f64)
        .sum();
    2.0 * weighted / (n as f64 * total) - (n as f64 + 1.0) / n as f64
}

pub fn uniformity_report(
    sample: &[EvalItem],
    snapshot: &Snapshot,
    buckets: &[PopularityBucket],
) -> Result<UniformityReport> {
    let mut size_of: BTreeMap<usize, usize> = snapshot.active().map(|(k, _)| (k, 0)).collect();
    let mut per_bucket: Vec<HashMap<usize, usize>> = vec![HashMap::new(); buckets.len()];
    let mut stale = 0;
    for it in sample {
        let Some(n) = size_of.get_mut(&it.code) else {
            stale += 1;
            continue;
        };
        *n += 1;
        if let Some(b) = bucket_index(buckets, it.popularity) {
            *per_bucket[b].entry(it.code).or_default() += 1;
        }
    }
    let sizes: Vec<(usize, usize)> = size_of.into_iter().collect();
    let all: Vec<usize> = sizes.iter().map(|&(_, n)| n).collect();
    let mut occupied: Vec<usize> = all.iter().copied().filter(|&n| n > 0).collect();
    occupied.sort_unstable();
    let mut all_sorted = all.clone();
    all_sorted.sort_unstable();
    let max_size = occupied.last().copied().unwrap_or(0);
    let median_size = if occupied.is_empty() { 0.0 } else { median_usize(&occupied) };
    let max_median_ratio = (occupied.len() > 1).then(|| max_size as f64 / median_size);
    let max_median_ratio_all = if all_sorted.is_empty() {
        None
    } else {
        let m = median_usize(&all_sorted);
        (m > 0.0).then(|| max_size as f64 / m)
    };
    let buckets = buckets
        .iter()
        .zip(per_bucket)
        .map(|(&bucket, counts)| {
            let mut c: Vec<usize> = counts.into_values().collect();
            c.sort_unstable_by(|a, b| b.cmp(a));
            let items: usize = c.iter().sum();
            let curve = (items > 0).then(|| {
                let mut acc = 0usize;
                c.iter()
                    .map(|&n| {
                        acc += n;
                        acc as f64 / items as f64
                    })
                    .collect()
            });
            BucketCurve {
                bucket,
                items,
                clusters: c.len(),
                curve,
            }
        })
        .collect();
    Ok(UniformityReport {
        gini: gini(&all),
        sizes,
        occupied: occupied.len(),
        max_size,
        median_size,
        max_median_ratio,
        max_median_ratio_all,
        buckets,
        stale,
    })
}

/// Largest inner product `q_k . q_j` for which the assignment of a unit
/// embedding with alignment `alpha` and residual norm `delta_norm` survives
/// any perturbation of norm at most `epsilon`.
pub fn stability_threshold(alpha: f64, delta_norm: f64, epsilon: f64) -> f64 {
    let root = epsilon + (epsilon * epsilon + 2.0 * alpha * delta_norm).sqrt();
    1.0 - root * root / (2.0 * alpha * alpha)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub trials: usize,
    /// Trials skipped because the item was not positively aligned with its
    /// codeword.
    pub skipped: usize,
    /// Total size of the competitor sets over all trials.
    pub competitors: usize,
    /// Perturbed argmax moved to a competitor satisfying the bound.
    pub violations: usize,
    /// Perturbed argmax moved to a codeword outside the bound.
    pub other_flips: usize,
}

fn argmax(units: &[Vec<f64>], e: &[f64]) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, q) in units.iter().enumerate() {
        let s = dot(q, e);
        if s > best.1 {
            best = (j, s);
        }
    }
    best.0
}

/// Draws `trials` embeddings from `embeddings` (with replacement), perturbs
/// each by a uniformly random vector of norm `epsilon` and counts argmax
/// moves onto codewords that satisfy the stability bound.
pub fn stability_check(
    snapshot: &Snapshot,
    embeddings: &[Vec<f64>],
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<StabilityReport> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::Invalid("epsilon must be non-negative".into()));
    }
    let units: Vec<Vec<f64>> = snapshot.active().filter_map(|(_, q)| normalized(q)).collect();
    if units.is_empty() || embeddings.is_empty() {
        return Err(Error::Invalid("stability check needs codewords and embeddings".into()));
    }
    let dim = units[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<(usize, Vec<f64>)> = (0..trials)
        .map(|_| {
            let i = rng.random_range(0..embeddings.len());
            let dir: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            (i, dir)
        })
        .collect();
    let per_trial: Vec<StabilityReport> = draws
        .par_iter()
        .map(|(i, dir)| {
            let mut r = StabilityReport {
                trials: 1,
                ..Default::default()
            };
            let Some(e) = normalized(&embeddings[*i]) else {
                r.skipped = 1;
                return r;
            };
            let k = argmax(&units, &e);
            let alpha = dot(&units[k], &e);
            if alpha <= 0.0 {
                r.skipped = 1;
                return r;
            }
            let delta_norm = e
                .iter()
                .zip(&units[k])
                .map(|(x, q)| (x - alpha * q).powi(2))
                .sum::<f64>()
                .sqrt();
            let thr = stability_threshold(alpha, delta_norm, epsilon);
            let bounded = |j: usize| j != k && dot(&units[k], &units[j]) <= thr;
            r.competitors = (0..units.len()).filter(|&j| bounded(j)).count();
            let perturbed: Vec<f64> = match normalized(dir) {
                Some(u) => e.iter().zip(&u).map(|(x, d)| x + epsilon * d).collect(),
                None => e.clone(),
            };
            let k2 = argmax(&units, &perturbed);
            if k2 != k {
                if bounded(k2) {
                    r.violations = 1;
                } else {
                    r.other_flips = 1;
                }
            }
            r
        })
        .collect();
    Ok(per_trial.into_iter().fold(StabilityReport::default(), |a, b| StabilityReport {
        trials: a.trials + b.trials,
        skipped: a.skipped + b.skipped,
        competitors: a.competitors + b.competitors,
        violations: a.violations + b.violations,
        other_flips: a.other_flips + b.other_flips,
    }))
}

/// Pair-counting agreement between predicted codes and true clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthScores {
    pub same_code_pairs: u128,
    pub same_truth_pairs: u128,
    pub agreeing_pairs: u128,
    /// `None` when no two items share a code.
    pub precision: Option<f64>,
    /// `None` when no two items share a true cluster.
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn pairs(n: usize) -> u128 {
    let n = n as u128;
    n * n.saturating_sub(1) / 2
}

pub fn ground_truth_scores(sample: &[EvalItem]) -> Result<GroundTruthScores> {
    let mut by_code: HashMap<usize, usize> = HashMap::new();
    let mut by_truth: HashMap<u32, usize> = HashMap::new();
    let mut cells: HashMap<(usize, u32), usize> = HashMap::new();
    for it in sample {
        let t = it
            .truth
            .ok_or_else(|| Error::Invalid(format!("item {} has no ground-truth cluster", it.item_id)))?;
        *by_code.entry(it.code).or_default() += 1;
        *by_truth.entry(t).or_default() += 1;
        *cells.entry((it.code, t)).or_default() += 1;
    }
    let same_code_pairs: u128 = by_code.values().map(|&n| pairs(n)).sum();
    let same_truth_pairs: u128 = by_truth.values().map(|&n| pairs(n)).sum();
    let agreeing_pairs: u128 = cells.values().map(|&n| pairs(n)).sum();
    let ratio = |a: u128, b: u128| (b > 0).then(|| a as f64 / b as f64);
    let precision = ratio(agreeing_pairs, same_code_pairs);
    let recall = ratio(agreeing_pairs, same_truth_pairs);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    Ok(GroundTruthScores {
        same_code_pairs,
        same_truth_pairs,
        agreeing_pairs,
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub sample_size: usize,
    pub active_codewords: usize,
    pub i2c: I2cReport,
    pub c2c: Option<Histogram>,
    pub uniformity: UniformityReport,
    pub ground_truth: Option<GroundTruthScores>,
    pub stability: Option<StabilityReport>,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub buckets: Vec<PopularityBucket>,
    /// `(epsilon, trials, seed)`; `None` skips the stability check.
    pub stability: Option<(f64, usize, u64)>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            buckets: default_buckets(),
            stability: Some((0.05, 10_000, 0)),
        }
    }
}

pub fn evaluate(sample: &[EvalItem], snapshot: &Snapshot, opts: &EvalOptions) -> Result<MetricReport> {
    let i2c = i2c_histogram(sample, snapshot)?;
    let c2c = (snapshot.active_count() >= 2)
        .then(|| c2c_histogram(snapshot))
        .transpose()?;
    let uniformity = uniformity_report(sample, snapshot, &opts.buckets)?;
    let ground_truth = if sample.iter().all(|it| it.truth.is_some()) {
        Some(ground_truth_scores(sample)?)
    } else {
        None
    };
    let stability = match opts.stability {
        Some((eps, trials, seed)) if snapshot.active_count() > 0 => {
            let embeddings: Vec<Vec<f64>> = sample.iter().map(|it| it.embedding.clone()).collect();
            Some(stability_check(snapshot, &embeddings, eps, trials, seed)?)
        }
        _ => None,
    };
    Ok(MetricReport {
        sample_size: sample.len(),
        active_codewords: snapshot.active_count(),
        i2c,
        c2c,
        uniformity,
        ground_truth,
        stability,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

impl MetricReport {
    /// `bucket,rank,cumulative_share` rows.
    pub fn bucket_curves_csv(&self) -> String {
        let mut s = String::from("bucket,x,y\n");
        for b in &self.uniformity.buckets {
            if let Some(curve) = &b.curve {
                for (i, y) in curve.iter().enumerate() {
                    s.push_str(&format!("{},{},{y}\n", b.bucket.label(), i + 1));
                }
            }
        }
        s
    }

    /// `slot,items` rows.
    pub fn sizes_csv(&self) -> String {
        let mut s = String::from("slot,items\n");
        for (k, n) in &self.uniformity.sizes {
            s.push_str(&format!("{k},{n}\n"));
        }
        s
    }

    pub fn summary(&self) -> String {
        let u = &self.uniformity;
        let mut s = String::new();
        s.push_str(&format!("sample size          {}\n", self.sample_size));
        s.push_str(&format!("active codewords     {}\n", self.active_codewords));
        s.push_str(&format!(
            "I2C mean / median    {:.6} / {:.6}  (stale {})\n",
            self.i2c.histogram.mean, self.i2c.histogram.median, self.i2c.stale
        ));
        match &self.c2c {
            Some(h) => s.push_str(&format!("C2C mean / median    {:.6} / {:.6}\n", h.mean, h.median)),
            None => s.push_str("C2C                  n/a (fewer than 2 codewords)\n"),
        }
        s.push_str(&format!(
            "cluster sizes        occupied {} max {} median {} max/median {} gini {:.6}\n",
            u.occupied,
            u.max_size,
            u.median_size,
            u.max_median_ratio
                .map_or_else(|| "degenerate".to_string(), |r| format!("{r:.6}")),
            u.gini
        ));
        for b in &u.buckets {
            let note = if b.curve.is_none() { "  (empty, curve omitted)" } else { "" };
            s.push_str(&format!(
                "bucket {:<16} items {} clusters {}{note}\n",
                b.bucket.label(),
                b.items,
                b.clusters
            ));
        }
        if let Some(g) = &self.ground_truth {
            s.push_str(&format!(
                "pairwise P / R / F1  {} / {} / {}\n",
                fmt_opt(g.precision),
                fmt_opt(g.recall),
                fmt_opt(g.f1)
            ));
        }
        if let Some(st) = &self.stability {
            s.push_str(&format!(
                "stability            trials {} skipped {} violations {} other flips {}\n",
                st.trials, st.skipped, st.violations, st.other_flips
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(codewords: Vec<Option<Vec<f64>>>) -> Snapshot {
        let counts = vec![1.0; codewords.len()];
        Snapshot {
            dim: codewords.iter().flatten().next().map_or(0, Vec::len),
            codewords,
            counts,
        }
    }

    fn item(id: u64, e: Vec<f64>, code: usize, pop: u64) -> EvalItem {
        EvalItem {
            item_id: id,
            embedding: e,
            popularity: pop,
            code,
            truth: None,
        }
    }

    #[test]
    fn subsample_is_seeded_and_ordered() {
        let v: Vec<u32> = (0..100).collect();
        let a = subsample(&v, 10, 4);
        assert_eq!(a, subsample(&v, 10, 4));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(subsample(&v, 200, 4), v);
    }

    #[test]
    fn binning_edges() {
        assert_eq!(bin_of(-1.0), 0);
        assert_eq!(bin_of(1.0), BIN_COUNT - 1);
        assert_eq!(bin_of(0.0), 50);
        assert_eq!(bin_of(-0.0001), 49);
        let h = Histogram::from_values(vec![1.0 + 1e-15, -1.0 - 1e-15]);
        assert_eq!(h.counts.iter().sum::<u64>(), 2);
        assert_eq!(h.mean, 0.0);
    }

    #[test]
    fn exact_items_give_point_mass_at_one() {
        let s = snap(vec![Some(vec![1.0, 0.0]), Some(vec![0.0, 2.0])]);
        let sample = vec![item(0, vec![3.0, 0.0], 0, 1), item(1, vec![0.0, 1.0], 1, 1)];
        let r = i2c_histogram(&sample, &s).unwrap();
        assert_eq!(r.histogram.counts[BIN_COUNT - 1], 2);
        assert_eq!(r.histogram.mean, 1.0);
        assert_eq!(r.histogram.median, 1.0);
    }

    #[test]
    fn stale_codes_are_tallied() {
        let s = snap(vec![Some(vec![1.0, 0.0]), None]);
        let sample = vec![item(0, vec![1.0, 0.0], 0, 1), item(1, vec![1.0, 0.0], 1, 1), item(2, vec![1.0, 0.0], 7, 1)];
        let r = i2c_histogram(&sample, &s).unwrap();
        assert_eq!(r.stale, 2);
        assert_eq!(r.histogram.n, 1);
        assert!(i2c_histogram(&[], &s).is_err());
    }

    #[test]
    fn orthogonal_pair_gives_zero_c2c() {
        let h = c2c_histogram(&snap(vec![Some(vec![1.0, 0.0]), None, Some(vec![0.0, 5.0])])).unwrap();
        assert_eq!(h.n, 1);
        assert_eq!(h.mean, 0.0);
        assert_eq!(h.counts[50], 1);
        assert!(c2c_histogram(&snap(vec![Some(vec![1.0, 0.0])])).is_err());
    }

    #[test]
    fn single_cluster_is_degenerate() {
        let s = snap(vec![Some(vec![1.0, 0.0]), Some(vec![0.0, 1.0]), Some(vec![-1.0, 0.0]), Some(vec![0.0, -1.0])]);
        let sample: Vec<_> = (0..10).map(|i| item(i, vec![1.0, 0.0], 0, 10)).collect();
        let u = uniformity_report(&sample, &s, &default_buckets()).unwrap();
        assert_eq!(u.max_median_ratio, None);
        assert_eq!(u.max_median_ratio_all, None);
        assert!((u.gini - 0.75).abs() < 1e-12);
    }

    #[test]
    fn even_assignment_is_uniform() {
        let s = snap(vec![Some(vec![1.0, 0.0]), Some(vec![0.0, 1.0]), Some(vec![-1.0, 0.0])]);
        let sample: Vec<_> = (0..30).map(|i| item(i, vec![1.0, 0.0], (i % 3) as usize, i * 100)).collect();
        let u = uniformity_report(&sample, &s, &default_buckets()).unwrap();
        assert_eq!(u.gini, 0.0);
        assert_eq!(u.max_median_ratio, Some(1.0));
        let first = &u.buckets[0];
        assert_eq!(first.items, 11);
        assert_eq!(first.clusters, 3);
        let curve = first.curve.as_ref().unwrap();
        assert!(curve.windows(2).all(|w| w[0] <= w[1]));
        assert!((curve.last().unwrap() - 1.0).abs() < 1e-12);
        assert!(u.buckets[4].curve.is_none());
    }

    #[test]
    fn bucket_boundaries() {
        let b = default_buckets();
        assert_eq!(bucket_index(&b, 0), Some(0));
        assert_eq!(bucket_index(&b, 1_000), Some(0));
        assert_eq!(bucket_index(&b, 1_001), Some(1));
        assert_eq!(bucket_index(&b, 100_000), Some(3));
        assert_eq!(bucket_index(&b, u64::MAX), Some(4));
    }

    #[test]
    fn threshold_matches_hand_value() {
        let alpha: f64 = 0.9;
        let t = stability_threshold(alpha, (1.0 - alpha * alpha).sqrt(), 0.05);
        assert!((t - 0.4578).abs() < 1e-3, "{t}");
        assert_eq!(stability_threshold(1.0, 0.0, 0.0), 1.0);
    }

    #[test]
    fn zero_epsilon_never_flips() {
        let s = snap(vec![Some(vec![1.0, 0.0, 0.0]), Some(vec![0.0, 1.0, 0.0]), Some(vec![0.6, 0.8, 0.0])]);
        let e = vec![vec![1.0, 0.2, 0.1], vec![0.3, 1.0, -0.2]];
        let r = stability_check(&s, &e, 0.0, 500, 3).unwrap();
        assert_eq!(r.violations + r.other_flips, 0);
        assert_eq!(r.trials, 500);
    }

    #[test]
    fn identical_truth_scores_one() {
        let sample: Vec<_> = (0..12)
            .map(|i| EvalItem {
                truth: Some((i % 4) as u32),
                ..item(i, vec![1.0], (i % 4) as usize, 0)
            })
            .collect();
        let g = ground_truth_scores(&sample).unwrap();
        assert_eq!((g.precision, g.recall, g.f1), (Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn singletons_have_zero_recall_and_no_precision() {
        let sample: Vec<_> = (0..6)
            .map(|i| EvalItem {
                truth: Some((i % 2) as u32),
                ..item(i, vec![1.0], i as usize, 0)
            })
            .collect();
        let g = ground_truth_scores(&sample).unwrap();
        assert_eq!(g.precision, None);
        assert_eq!(g.recall, Some(0.0));
        let mut missing = sample.clone();
        missing[0].truth = None;
        assert!(ground_truth_scores(&missing).is_err());
    }
}
