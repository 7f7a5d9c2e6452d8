//! Chance-corrected agreement between annotators.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MetricsError, Result};
use crate::records::AnnotationRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaMethod {
    /// Mean of Cohen's kappa over annotator pairs.
    #[default]
    PairwiseCohen,
    Fleiss,
}

impl std::str::FromStr for KappaMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cohen" | "pairwise" | "pairwise_cohen" => Ok(KappaMethod::PairwiseCohen),
            "fleiss" => Ok(KappaMethod::Fleiss),
            other => Err(format!("unknown kappa method `{other}` (expected cohen or fleiss)")),
        }
    }
}

fn chance_corrected(p_o: f64, p_e: f64) -> f64 {
    if p_e >= 1.0 {
        if p_o >= 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (p_o - p_e) / (1.0 - p_e)
    }
}

/// Cohen's kappa with the marginal-product chance agreement.
pub fn cohen_kappa<L: Ord>(a: &[L], b: &[L]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = a.len() as f64;
    let mut marg: BTreeMap<&L, (f64, f64)> = BTreeMap::new();
    let mut agree = 0usize;
    for (x, y) in a.iter().zip(b) {
        marg.entry(x).or_default().0 += 1.0;
        marg.entry(y).or_default().1 += 1.0;
        if x == y {
            agree += 1;
        }
    }
    let p_o = agree as f64 / n;
    let p_e: f64 = marg.values().map(|(ca, cb)| (ca / n) * (cb / n)).sum();
    Ok(chance_corrected(p_o, p_e))
}

/// Fleiss' kappa from an items × categories count table; every row must sum
/// to the same rater count m ≥ 2.
pub fn fleiss_kappa_counts(table: &[Vec<usize>]) -> Result<f64> {
    let first = table.first().ok_or(MetricsError::Empty)?;
    let m: usize = first.iter().sum();
    if m < 2 {
        return Err(MetricsError::Empty);
    }
    let k = first.len();
    let mut col = vec![0.0; k];
    let mut p_bar = 0.0;
    for row in table {
        if row.len() != k {
            return Err(MetricsError::LengthMismatch(k, row.len()));
        }
        if row.iter().sum::<usize>() != m {
            return Err(MetricsError::LengthMismatch(m, row.iter().sum()));
        }
        let sq: usize = row.iter().map(|c| c * c).sum();
        p_bar += (sq - m) as f64 / (m * (m - 1)) as f64;
        for (j, c) in row.iter().enumerate() {
            col[j] += *c as f64;
        }
    }
    let n = table.len() as f64;
    p_bar /= n;
    let total = n * m as f64;
    let p_e: f64 = col.iter().map(|c| (c / total).powi(2)).sum();
    Ok(chance_corrected(p_bar, p_e))
}

/// Agreement of one source's annotators across the records.
///
/// Pairwise: annotator slot j of every record is treated as one rater; each
/// pair of slots is scored over the records where both are present.
/// Fleiss: uses records carrying the most common annotation count.
pub fn source_agreement(records: &[AnnotationRecord], source: &str, method: KappaMethod) -> Result<f64> {
    let labels: Vec<&[usize]> = records.iter().map(|r| r.labels(source)).collect::<Result<_>>()?;
    match method {
        KappaMethod::PairwiseCohen => {
            let raters = labels.iter().map(|l| l.len()).max().unwrap_or(0);
            let mut kappas = Vec::new();
            for i in 0..raters {
                for j in i + 1..raters {
                    let (a, b): (Vec<usize>, Vec<usize>) = labels
                        .iter()
                        .filter(|l| l.len() > j)
                        .map(|l| (l[i], l[j]))
                        .unzip();
                    if !a.is_empty() {
                        kappas.push(cohen_kappa(&a, &b)?);
                    }
                }
            }
            if kappas.is_empty() {
                return Err(MetricsError::Empty);
            }
            Ok(kappas.iter().sum::<f64>() / kappas.len() as f64)
        }
        KappaMethod::Fleiss => {
            let mut by_len: BTreeMap<usize, usize> = BTreeMap::new();
            for l in &labels {
                *by_len.entry(l.len()).or_default() += 1;
            }
            let m = by_len
                .iter()
                .filter(|(len, _)| **len >= 2)
                .max_by_key(|(len, count)| (**count, **len))
                .map(|(len, _)| *len)
                .ok_or(MetricsError::Empty)?;
            let table: Vec<Vec<usize>> = labels
                .iter()
                .filter(|l| l.len() == m)
                .map(|l| {
                    let mut row = vec![0; crate::records::OPTION_COUNT];
                    for &x in l.iter() {
                        row[x] += 1;
                    }
                    row
                })
                .collect();
            fleiss_kappa_counts(&table)
        }
    }
}
