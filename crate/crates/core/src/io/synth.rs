//! Synthetic item streams with skewed cluster sizes and popularity, tag
//! groups and slowly rotating cluster centers.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::similarity::{dot, normalized};
use crate::types::ItemRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticStreamSpec {
    pub n_items: usize,
    pub n_true_clusters: usize,
    pub dim: usize,
    pub tag_count: u32,
    /// Inverse within-cluster noise energy: an item sits at cosine about
    /// `1/sqrt(1 + 1/concentration)` from its center. `f64::INFINITY` puts
    /// every item exactly on its center.
    pub concentration: f64,
    /// Skew of both cluster sizes and item popularity. Zero means uniform.
    pub zipf_exponent: f64,
    /// Rotation of each center per drift period, in radians.
    pub drift_rate: f64,
    /// Items emitted between two center rotations.
    pub drift_period: usize,
    /// Squared cosine between a center and its tag group's anchor.
    pub tag_coherence: f64,
    /// Popularity of the top-ranked item.
    pub max_popularity: u64,
    pub seed: u64,
}

impl Default for SyntheticStreamSpec {
    fn default() -> Self {
        Self {
            n_items: 100_000,
            n_true_clusters: 500,
            dim: 64,
            tag_count: 100,
            concentration: 10.0,
            zipf_exponent: 1.0,
            drift_rate: 0.002,
            drift_period: 1024,
            tag_coherence: 0.3,
            max_popularity: 10_000_000,
            seed: 0,
        }
    }
}

impl SyntheticStreamSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_true_clusters == 0 {
            return bad("n_true_clusters must be at least 1");
        }
        if self.n_true_clusters > self.n_items {
            return Err(Error::Config(format!(
                "n_true_clusters ({}) exceeds n_items ({})",
                self.n_true_clusters, self.n_items
            )));
        }
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if self.tag_count == 0 {
            return bad("tag_count must be at least 1");
        }
        if self.concentration.is_nan() || self.concentration <= 0.0 {
            return bad("concentration must be positive");
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return bad("zipf_exponent must be non-negative");
        }
        if !(self.drift_rate.is_finite() && self.drift_rate >= 0.0) {
            return bad("drift_rate must be non-negative");
        }
        if self.drift_period == 0 {
            return bad("drift_period must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.tag_coherence) {
            return bad("tag_coherence must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Lazily generated stream. Yields each record with its true cluster id.
pub struct SyntheticStream {
    spec: SyntheticStreamSpec,
    rng: ChaCha8Rng,
    centers: Vec<Vec<f64>>,
    /// Unit vectors orthogonal to the matching center; rotation planes.
    axes: Vec<Vec<f64>>,
    sequence: Vec<u32>,
    ranks: Vec<u64>,
    sigma: f64,
    emitted: usize,
}

impl SyntheticStream {
    pub fn spec(&self) -> &SyntheticStreamSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.n_items
    }

    pub fn is_empty(&self) -> bool {
        self.spec.n_items == 0
    }

    /// Number of items per true cluster.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.spec.n_true_clusters];
        for &c in &self.sequence {
            sizes[c as usize] += 1;
        }
        sizes
    }

    fn rotate_centers(&mut self) {
        let (s, c) = self.spec.drift_rate.sin_cos();
        for (u, w) in self.centers.iter_mut().zip(self.axes.iter_mut()) {
            for (a, b) in u.iter_mut().zip(w.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = c * x + s * y;
                *b = c * y - s * x;
            }
        }
    }
}

impl Iterator for SyntheticStream {
    type Item = (ItemRecord, u32);

    fn next(&mut self) -> Option<Self::Item> {
        let i = self.emitted;
        if i >= self.spec.n_items {
            return None;
        }
        if i > 0 && self.spec.drift_rate > 0.0 && i.is_multiple_of(self.spec.drift_period) {
            self.rotate_centers();
        }
        self.emitted += 1;
        let cluster = self.sequence[i];
        let center = &self.centers[cluster as usize];
        let mut e: Vec<f64> = center.clone();
        if self.sigma > 0.0 {
            for x in e.iter_mut() {
                let z: f64 = self.rng.sample(StandardNormal);
                *x += self.sigma * z;
            }
        }
        let e = normalized(&e).unwrap_or_else(|| center.clone());
        let popularity = zipf_value(self.spec.max_popularity, self.ranks[i], self.spec.zipf_exponent);
        let record = ItemRecord {
            item_id: i as u64,
            embedding: e,
            tag: cluster % self.spec.tag_count,
            popularity,
        };
        Some((record, cluster))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.spec.n_items - self.emitted;
        (left, Some(left))
    }
}

fn zipf_value(max: u64, rank: u64, s: f64) -> u64 {
    (max as f64 * (rank as f64).powf(-s)).round() as u64
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(u) = normalized(&v) {
            return u;
        }
    }
}

/// Cluster sizes: one item each, the rest apportioned by largest remainder
/// over Zipf weights.
pub fn zipf_sizes(n_items: usize, n_clusters: usize, s: f64) -> Vec<usize> {
    let mut sizes = vec![1usize; n_clusters];
    let rest = n_items - n_clusters;
    let weights: Vec<f64> = (1..=n_clusters).map(|r| (r as f64).powf(-s)).collect();
    let total: f64 = weights.iter().sum();
    let mut given = 0;
    let mut fracs = Vec::with_capacity(n_clusters);
    for (c, w) in weights.iter().enumerate() {
        let quota = rest as f64 * w / total;
        let whole = quota.floor() as usize;
        sizes[c] += whole;
        given += whole;
        fracs.push((quota - whole as f64, c));
    }
    fracs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, c) in fracs.iter().take(rest.saturating_sub(given)) {
        sizes[c] += 1;
    }
    sizes
}

pub fn generate_stream(spec: &SyntheticStreamSpec) -> Result<SyntheticStream> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let anchors: Vec<Vec<f64>> = (0..spec.tag_count.min(spec.n_true_clusters as u32))
        .map(|_| random_unit(&mut rng, d))
        .collect();
    let (wa, wz) = (spec.tag_coherence.sqrt(), (1.0 - spec.tag_coherence).sqrt());
    let mut centers = Vec::with_capacity(spec.n_true_clusters);
    let mut axes = Vec::with_capacity(spec.n_true_clusters);
    for c in 0..spec.n_true_clusters {
        let a = &anchors[c % anchors.len()];
        let z = random_unit(&mut rng, d);
        let mixed: Vec<f64> = a.iter().zip(&z).map(|(x, y)| wa * x + wz * y).collect();
        let center = normalized(&mixed).unwrap_or(z);
        let axis = loop {
            let v = random_unit(&mut rng, d);
            let p = dot(&v, &center);
            let orth: Vec<f64> = v.iter().zip(&center).map(|(x, y)| x - p * y).collect();
            if let Some(u) = normalized(&orth) {
                break u;
            }
        };
        centers.push(center);
        axes.push(axis);
    }
    let sizes = zipf_sizes(spec.n_items, spec.n_true_clusters, spec.zipf_exponent);
    let mut sequence: Vec<u32> = sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(c as u32, n))
        .collect();
    sequence.shuffle(&mut rng);
    let mut ranks: Vec<u64> = (1..=spec.n_items as u64).collect();
    ranks.shuffle(&mut rng);
    let sigma = if spec.concentration.is_infinite() {
        0.0
    } else {
        1.0 / (spec.concentration * d as f64).sqrt()
    };
    Ok(SyntheticStream {
        spec: spec.clone(),
        rng,
        centers,
        axes,
        sequence,
        ranks,
        sigma,
        emitted: 0,
    })
}
