//! Downstream product recommendation and impression/click accounting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use chrono::{DateTime, Datelike};
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{EchoError, Result};
use crate::scalar::Scalar;
use crate::snapshot::hex;
use crate::text::{cosine_similarity, featurize, fnv1a, tokenize, SparseVec};
use crate::types::{FeatureSpec, FeatureValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Echo,
    Baseline,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Echo => "echo",
            Source::Baseline => "baseline",
        }
    }
}

/// One catalog line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub product_id: String,
    pub vertical: String,
    pub title: String,
    pub keywords: Vec<String>,
    pub attribute_text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Product<T> {
    pub record: ProductRecord,
    pub attribute_embedding: SparseVec<T>,
    keyword_set: BTreeSet<String>,
}

impl<T: Scalar> Product<T> {
    pub fn id(&self) -> &str {
        &self.record.product_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Catalog<T> {
    /// Sorted by product_id.
    products: Vec<Product<T>>,
    dim: usize,
}

impl<T: Scalar> Catalog<T> {
    pub fn new(records: Vec<ProductRecord>, dim: usize) -> Result<Self> {
        let mut products = Vec::with_capacity(records.len());
        let mut seen = BTreeSet::new();
        for r in records {
            if !seen.insert(r.product_id.clone()) {
                return Err(EchoError::Catalog(format!("duplicate product_id `{}`", r.product_id)));
            }
            let attribute_embedding = featurize(&r.attribute_text, dim);
            if attribute_embedding.is_zero() {
                return Err(EchoError::Catalog(format!("product `{}` has no attribute text", r.product_id)));
            }
            let keyword_set = r.keywords.iter().flat_map(|k| tokenize(k)).collect();
            products.push(Product {
                record: r,
                attribute_embedding,
                keyword_set,
            });
        }
        products.sort_by(|a, b| a.record.product_id.cmp(&b.record.product_id));
        Ok(Catalog { products, dim })
    }

    pub fn from_jsonl(reader: impl BufRead, dim: usize) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(
                serde_json::from_str(&line)
                    .map_err(|e| EchoError::Catalog(format!("line {}: {e}", n + 1)))?,
            );
        }
        Self::new(records, dim)
    }

    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_jsonl(std::io::BufReader::new(file), dim)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for p in &self.products {
            out.push_str(&serde_json::to_string(&p.record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn products(&self) -> &[Product<T>] {
        &self.products
    }

    pub fn get(&self, product_id: &str) -> Option<&Product<T>> {
        self.products
            .binary_search_by(|p| p.record.product_id.as_str().cmp(product_id))
            .ok()
            .map(|i| &self.products[i])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipFlag {
    EmptyCatalog,
    NoSignal,
    BelowThreshold,
}

impl SkipFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            SkipFlag::EmptyCatalog => "empty_catalog",
            SkipFlag::NoSignal => "no_signal",
            SkipFlag::BelowThreshold => "below_threshold",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision<T> {
    Show {
        product_id: String,
        score: T,
        rendered_text: String,
    },
    Skip {
        best_score: T,
        flag: SkipFlag,
    },
}

impl<T: Scalar> Decision<T> {
    pub fn is_show(&self) -> bool {
        matches!(self, Decision::Show { .. })
    }

    pub fn product_id(&self) -> Option<&str> {
        match self {
            Decision::Show { product_id, .. } => Some(product_id),
            Decision::Skip { .. } => None,
        }
    }

    pub fn score(&self) -> T {
        match self {
            Decision::Show { score, .. } => *score,
            Decision::Skip { best_score, .. } => *best_score,
        }
    }
}

pub fn render_ad(title: &str, key_tokens: &[String]) -> String {
    if key_tokens.is_empty() {
        format!("Recommended: {title}")
    } else {
        format!("Recommended: {title} (you mentioned {})", key_tokens.join(", "))
    }
}

/// Nearest product to the mean embedding of the selected values.
///
/// Scans products in id order and keeps the first strict maximum, so ties go
/// to the lower product_id.
pub fn recommend<T: Scalar>(
    values: &[(&FeatureSpec, &FeatureValue<T>)],
    catalog: &Catalog<T>,
    display_threshold: T,
    key_tokens: &[String],
) -> Decision<T> {
    if catalog.is_empty() {
        return Decision::Skip {
            best_score: T::zero(),
            flag: SkipFlag::EmptyCatalog,
        };
    }
    let embeddings: Vec<SparseVec<T>> = values
        .iter()
        .filter_map(|(spec, v)| spec.value_embedding(v, catalog.dim()))
        .collect();
    let query = SparseVec::mean(catalog.dim(), &embeddings);
    if query.is_zero() {
        return Decision::Skip {
            best_score: T::zero(),
            flag: SkipFlag::NoSignal,
        };
    }
    let mut best: Option<(&Product<T>, T)> = None;
    for p in catalog.products() {
        let s = cosine_similarity(&query, &p.attribute_embedding);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((p, s));
        }
    }
    let (p, score) = best.expect("non-empty catalog");
    if score >= display_threshold {
        Decision::Show {
            product_id: p.record.product_id.clone(),
            score,
            rendered_text: render_ad(&p.record.title, key_tokens),
        }
    } else {
        Decision::Skip {
            best_score: score,
            flag: SkipFlag::BelowThreshold,
        }
    }
}

/// Number of distinct message tokens among the product's keywords.
pub fn keyword_overlap<T: Scalar>(message_tokens: &BTreeSet<String>, product: &Product<T>) -> usize {
    message_tokens.intersection(&product.keyword_set).count()
}

/// Keyword-matching baseline: the product with the largest token overlap,
/// shown when it overlaps at all.
pub fn baseline_recommend<T: Scalar>(message: &str, catalog: &Catalog<T>, key_tokens: &[String]) -> Decision<T> {
    if catalog.is_empty() {
        return Decision::Skip {
            best_score: T::zero(),
            flag: SkipFlag::EmptyCatalog,
        };
    }
    let tokens: BTreeSet<String> = tokenize(message).into_iter().collect();
    let mut best: Option<(&Product<T>, usize)> = None;
    for p in catalog.products() {
        let n = keyword_overlap(&tokens, p);
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((p, n));
        }
    }
    let (p, n) = best.expect("non-empty catalog");
    let score = T::of(n as f64);
    if n >= 1 {
        Decision::Show {
            product_id: p.record.product_id.clone(),
            score,
            rendered_text: render_ad(&p.record.title, key_tokens),
        }
    } else {
        Decision::Skip {
            best_score: score,
            flag: SkipFlag::BelowThreshold,
        }
    }
}

pub fn content_hash(source: Source, product_id: &str, rendered_text: &str) -> String {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(source.as_str().as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(product_id.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(rendered_text.as_bytes());
    hex(fnv1a(&bytes))
}

/// A request to display an ad, before accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImpressionRequest {
    pub session_id: String,
    pub source: Source,
    pub product_id: String,
    pub vertical: String,
    pub content_hash: String,
    /// Timestamp of the message that triggered the ad.
    pub message_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Impression {
    pub impression_id: String,
    pub session_id: String,
    pub source: Source,
    pub product_id: String,
    pub vertical: String,
    /// Every rendered content folded into this impression; the first is the
    /// one shown.
    pub content_hashes: Vec<String>,
    pub shown_at: u64,
    /// Latest message folded in; later messages within the merge window of it
    /// join this impression.
    pub last_message_ms: u64,
    pub clicks: Vec<u64>,
}

impl Impression {
    pub fn content_hash(&self) -> &str {
        &self.content_hashes[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Accounted {
    New,
    Deduplicated,
    Merged,
}

/// Append-only impression ledger.
///
/// Rules: rendered content already shown in the session maps back to its
/// impression; an ad triggered by a message within `merge_window_ms` of the
/// previous impression's latest message for the same session and source
/// merges into that impression; every click appends.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpressionLedger {
    pub merge_window_ms: u64,
    impressions: Vec<Impression>,
    by_id: HashMap<String, usize>,
    by_hash: HashMap<(String, String), usize>,
    last: HashMap<(String, Source), usize>,
}

impl ImpressionLedger {
    pub fn new(merge_window_ms: u64) -> Self {
        ImpressionLedger {
            merge_window_ms,
            impressions: Vec::new(),
            by_id: HashMap::new(),
            by_hash: HashMap::new(),
            last: HashMap::new(),
        }
    }

    fn next_id(&self) -> String {
        format!("imp-{:06}", self.impressions.len() + 1)
    }

    pub fn record_impression(&mut self, req: &ImpressionRequest) -> (String, Accounted) {
        let hash_key = (req.session_id.clone(), req.content_hash.clone());
        if let Some(&i) = self.by_hash.get(&hash_key) {
            return (self.impressions[i].impression_id.clone(), Accounted::Deduplicated);
        }
        let last_key = (req.session_id.clone(), req.source);
        if let Some(&i) = self.last.get(&last_key) {
            let imp = &mut self.impressions[i];
            if req.message_ms.abs_diff(imp.last_message_ms) < self.merge_window_ms {
                imp.last_message_ms = imp.last_message_ms.max(req.message_ms);
                imp.content_hashes.push(req.content_hash.clone());
                self.by_hash.insert(hash_key, i);
                return (imp.impression_id.clone(), Accounted::Merged);
            }
        }
        let impression_id = self.next_id();
        let i = self.impressions.len();
        self.impressions.push(Impression {
            impression_id: impression_id.clone(),
            session_id: req.session_id.clone(),
            source: req.source,
            product_id: req.product_id.clone(),
            vertical: req.vertical.clone(),
            content_hashes: vec![req.content_hash.clone()],
            shown_at: req.message_ms,
            last_message_ms: req.message_ms,
            clicks: Vec::new(),
        });
        self.by_id.insert(impression_id.clone(), i);
        self.by_hash.insert(hash_key, i);
        self.last.insert(last_key, i);
        (impression_id, Accounted::New)
    }

    /// Appends a click; returns the impression's click count.
    pub fn record_click(&mut self, impression_id: &str, timestamp_ms: u64) -> Result<usize> {
        let i = *self
            .by_id
            .get(impression_id)
            .ok_or_else(|| EchoError::UnknownImpression(impression_id.to_string()))?;
        let imp = &mut self.impressions[i];
        imp.clicks.push(timestamp_ms);
        Ok(imp.clicks.len())
    }

    pub fn get(&self, impression_id: &str) -> Option<&Impression> {
        self.by_id.get(impression_id).map(|&i| &self.impressions[i])
    }

    pub fn impressions(&self) -> &[Impression] {
        &self.impressions
    }

    pub fn total_clicks(&self) -> u64 {
        self.impressions.iter().map(|i| i.clicks.len() as u64).sum()
    }
}

/// Batch form of the accounting rules over already-materialized impressions.
///
/// Impressions are folded in order of first display. Each one joins an
/// earlier survivor when it shares rendered content with it in the same
/// session (a reload, which does not extend the merge chain), or when it
/// starts within the merge window of the survivor's latest message for the
/// same session and source. Applying it to its own output changes nothing.
pub fn merge_pass(impressions: &[Impression], merge_window_ms: u64) -> Vec<Impression> {
    let mut order: Vec<&Impression> = impressions.iter().collect();
    order.sort_by(|a, b| {
        (a.shown_at, &a.impression_id).cmp(&(b.shown_at, &b.impression_id))
    });
    let mut out: Vec<Impression> = Vec::new();
    let mut by_hash: HashMap<(String, String), usize> = HashMap::new();
    let mut last: HashMap<(String, Source), usize> = HashMap::new();
    for imp in order {
        let by_content = imp
            .content_hashes
            .iter()
            .find_map(|h| by_hash.get(&(imp.session_id.clone(), h.clone())).copied());
        let by_window = || {
            last.get(&(imp.session_id.clone(), imp.source))
                .copied()
                .filter(|&i| imp.shown_at.abs_diff(out[i].last_message_ms) < merge_window_ms)
        };
        let target = by_content.map(|i| (i, false)).or_else(|| by_window().map(|i| (i, true)));
        let i = match target {
            Some((i, extend)) => {
                let t = &mut out[i];
                for h in &imp.content_hashes {
                    if !t.content_hashes.contains(h) {
                        t.content_hashes.push(h.clone());
                    }
                }
                t.clicks.extend(&imp.clicks);
                t.clicks.sort_unstable();
                if extend {
                    t.last_message_ms = t.last_message_ms.max(imp.last_message_ms);
                }
                i
            }
            None => {
                out.push(imp.clone());
                let i = out.len() - 1;
                last.insert((imp.session_id.clone(), imp.source), i);
                i
            }
        };
        for h in &imp.content_hashes {
            by_hash.insert((imp.session_id.clone(), h.clone()), i);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    All,
    Source,
    Day,
    Weekday,
    Vertical,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CtrRow {
    pub group: String,
    pub impressions: u64,
    pub clicks: u64,
}

impl CtrRow {
    /// Exact click-through ratio; absent with no impressions.
    pub fn ctr(&self) -> Option<Ratio<u64>> {
        (self.impressions > 0).then(|| Ratio::new(self.clicks, self.impressions))
    }

    pub fn ctr_f64(&self) -> Option<f64> {
        self.ctr().map(|r| *r.numer() as f64 / *r.denom() as f64)
    }

    /// CTR as a fraction with four decimals, empty when absent.
    pub fn ctr_text(&self) -> String {
        self.ctr_f64().map(|c| format!("{c:.4}")).unwrap_or_default()
    }
}

fn group_key(imp: &Impression, grouping: Grouping) -> String {
    let date = || DateTime::from_timestamp_millis(imp.shown_at as i64).expect("timestamp in range");
    match grouping {
        Grouping::All => "all".to_string(),
        Grouping::Source => format!("{}", imp.source.as_str()),
        Grouping::Day => date().format("%Y-%m-%d").to_string(),
        Grouping::Weekday => date().weekday().to_string(),
        Grouping::Vertical => imp.vertical.clone(),
    }
}

pub fn ctr_report<'a>(impressions: impl IntoIterator<Item = &'a Impression>, grouping: Grouping) -> Vec<CtrRow> {
    let mut groups: BTreeMap<String, (u64, u64)> = BTreeMap::new();
    for imp in impressions {
        let g = groups.entry(group_key(imp, grouping)).or_default();
        g.0 += 1;
        g.1 += imp.clicks.len() as u64;
    }
    groups
        .into_iter()
        .map(|(group, (impressions, clicks))| CtrRow {
            group,
            impressions,
            clicks,
        })
        .collect()
}

pub const CTR_HEADER: &str = "group,impressions,clicks,ctr";

pub fn ctr_csv(rows: &[CtrRow]) -> String {
    let mut out = String::from(CTR_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{},{}", r.group, r.impressions, r.clicks, r.ctr_text()).expect("write to string");
    }
    out
}
