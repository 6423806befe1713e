//! Cosine similarity kernel.
//!
//! Every cosine in the crate goes through [`dot`] and [`norm`] so that a
//! score computed with cached norms is bit-identical to one recomputed later
//! through [`cosine_similarity`].

use crate::error::{Error, Result};

/// Dot product with four independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine from a precomputed dot product and norms.
#[inline]
pub fn cosine_from_parts(dot_ab: f64, norm_a: f64, norm_b: f64) -> f64 {
    dot_ab / (norm_a * norm_b)
}

/// `dot(a, b) / (|a| |b|)`. Fails on a zero-norm (or non-finite norm) input.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if !(na > 0.0 && nb > 0.0 && na.is_finite() && nb.is_finite()) {
        return Err(Error::ZeroNorm);
    }
    Ok(cosine_from_parts(dot(a, b), na, nb))
}

/// Unit-norm copy of `a`, or `None` for a zero vector.
pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let n = norm(a);
    if n > 0.0 && n.is_finite() {
        Some(a.iter().map(|x| x / n).collect())
    } else {
        None
    }
}

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    #[test]
    fn identity_orthogonal_and_diagonal() {
        let v: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin() + 0.1).collect();
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&unit(64, 0), &unit(64, 1)).unwrap(), 0.0);
        let mut a = unit(64, 0);
        a[1] = 1.0;
        let c = cosine_similarity(&a, &unit(64, 0)).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn zero_norm_is_a_domain_error() {
        let z = vec![0.0; 8];
        assert!(matches!(cosine_similarity(&z, &unit(8, 2)), Err(Error::ZeroNorm)));
        assert!(normalized(&z).is_none());
    }

    #[test]
    fn odd_lengths_use_the_tail() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert_eq!(dot(&a, &b), 35.0);
    }

    fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 17).prop_filter("non-zero", |v| norm(v) > 1e-6)
    }

    proptest! {
        #[test]
        fn symmetric(a in vec_strategy(), b in vec_strategy()) {
            prop_assert_eq!(cosine_similarity(&a, &b).unwrap(), cosine_similarity(&b, &a).unwrap());
        }

        #[test]
        fn scale_invariant(a in vec_strategy(), b in vec_strategy(), c in 0.01f64..100.0) {
            let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
            let lhs = cosine_similarity(&scaled, &b).unwrap();
            let rhs = cosine_similarity(&a, &b).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn bounded(a in vec_strategy(), b in vec_strategy()) {
            prop_assert!(cosine_similarity(&a, &b).unwrap().abs() <= 1.0 + 1e-12);
        }
    }
}
