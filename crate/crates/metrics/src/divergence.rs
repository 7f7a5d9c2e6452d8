//! KL divergence between pooled label distributions.

use echo_core::RngSeed;

use crate::error::{MetricsError, Result};
use crate::records::{AnnotationRecord, OPTION_COUNT};
use crate::vote::majority;

pub const SMOOTHING: f64 = 1e-6;

/// D_KL(p ‖ q) in nats. Terms with p_i = 0 contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(MetricsError::LengthMismatch(p.len(), q.len()));
    }
    Ok(p
        .iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum())
}

/// Adds `eps` to every cell and renormalizes.
pub fn smooth(p: &[f64], eps: f64) -> Vec<f64> {
    let total: f64 = p.iter().sum::<f64>() + eps * p.len() as f64;
    p.iter().map(|x| (x + eps) / total).collect()
}

pub fn distribution(labels: impl IntoIterator<Item = usize>) -> Vec<f64> {
    let mut counts = vec![0.0; OPTION_COUNT];
    let mut n = 0.0;
    for l in labels {
        counts[l] += 1.0;
        n += 1.0;
    }
    if n > 0.0 {
        for c in &mut counts {
            *c /= n;
        }
    }
    counts
}

/// D_KL(author ‖ source) over option positions, with the source represented
/// by its per-record majority label.
pub fn kl_to_author(records: &[AnnotationRecord], source: &str, seed: RngSeed) -> Result<f64> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let p = distribution(records.iter().map(|r| r.author_label));
    let q_labels = records
        .iter()
        .map(|r| Ok(majority(r.labels(source)?, seed, source, r.id())))
        .collect::<Result<Vec<_>>>()?;
    let q = distribution(q_labels);
    kl_divergence(&smooth(&p, SMOOTHING), &smooth(&q, SMOOTHING))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_is_zero() {
        let p = smooth(&[0.1, 0.2, 0.3, 0.4], SMOOTHING);
        assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn matches_summation_oracle() {
        let p = smooth(&[0.5, 0.5, 0.0, 0.0], SMOOTHING);
        let q = smooth(&[0.25; 4], SMOOTHING);
        let mut oracle = 0.0;
        let pe: [f64; 4] = [0.5 + 1e-6, 0.5 + 1e-6, 1e-6, 1e-6];
        let z = 1.0 + 4e-6;
        for v in pe {
            let pi = v / z;
            oracle += pi * (pi.ln() - 0.25f64.ln());
        }
        let got = kl_divergence(&p, &q).unwrap();
        assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
        // close to ln 2 since the smoothing mass is tiny
        assert!((got - 2f64.ln()).abs() < 1e-4);
    }

    #[test]
    fn length_mismatch() {
        assert!(kl_divergence(&[1.0], &[0.5, 0.5]).is_err());
    }

    proptest! {
        #[test]
        fn gibbs_inequality(
            a in proptest::collection::vec(0u32..20, 4),
            b in proptest::collection::vec(0u32..20, 4),
        ) {
            let norm = |v: &[u32]| {
                let t: u32 = v.iter().sum();
                v.iter().map(|x| if t == 0 { 0.25 } else { *x as f64 / t as f64 }).collect::<Vec<_>>()
            };
            let p = smooth(&norm(&a), SMOOTHING);
            let q = smooth(&norm(&b), SMOOTHING);
            let d = kl_divergence(&p, &q).unwrap();
            prop_assert!(d >= -1e-12);
            let same = p.iter().zip(&q).all(|(x, y)| (x - y).abs() < 1e-15);
            if same {
                prop_assert!(d.abs() < 1e-9);
            } else {
                prop_assert!(d > 0.0);
            }
        }
    }
}
