//! Majority vote over one source's annotations with seeded tie-breaking.

use echo_core::RngSeed;
use rand::Rng;
use serde::Serialize;

/// How many of the annotators chose the same label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AgreementShape {
    /// 3-0
    Three,
    /// 2-1
    Two,
    /// 1-1-1
    None,
}

impl AgreementShape {
    pub fn of(labels: &[usize]) -> Option<Self> {
        if labels.len() != 3 {
            return Option::None;
        }
        let (a, b, c) = (labels[0], labels[1], labels[2]);
        Some(if a == b && b == c {
            AgreementShape::Three
        } else if a == b || b == c || a == c {
            AgreementShape::Two
        } else {
            AgreementShape::None
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgreementShape::Three => "three_agree",
            AgreementShape::Two => "two_agree",
            AgreementShape::None => "none_agree",
        }
    }
}

/// Most frequent label; ties are broken uniformly at random from a stream
/// keyed by (seed, source, record), so the choice for a record is the same in
/// every analysis that asks for it.
pub fn majority(labels: &[usize], seed: RngSeed, source: &str, record_id: &str) -> usize {
    assert!(!labels.is_empty(), "majority of no labels");
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &l in labels {
        match counts.iter_mut().find(|(k, _)| *k == l) {
            Some((_, c)) => *c += 1,
            None => counts.push((l, 1)),
        }
    }
    let top = counts.iter().map(|(_, c)| *c).max().unwrap();
    let mut tied: Vec<usize> = counts.iter().filter(|(_, c)| *c == top).map(|(k, _)| *k).collect();
    if tied.len() == 1 {
        return tied[0];
    }
    tied.sort_unstable();
    let mut rng = seed.substream(&format!("vote/{source}/{record_id}"), 0);
    tied[rng.gen_range(0..tied.len())]
}

impl Serialize for AgreementShape {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}
