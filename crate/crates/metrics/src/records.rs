//! Annotation records: one four-option task with the author's own answer and
//! labels from any number of third-party sources.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MetricsError, Result};

pub const OPTION_COUNT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRef {
    pub task_id: String,
    pub question: String,
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationRef {
    pub conversation_id: String,
    pub user_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub task: TaskRef,
    pub conversation: ConversationRef,
    pub author_label: usize,
    /// Source id to that source's annotations, one option index per annotator.
    pub sources: BTreeMap<String, Vec<usize>>,
}

impl AnnotationRecord {
    pub fn id(&self) -> &str {
        &self.task.task_id
    }

    pub fn user_id(&self) -> &str {
        &self.conversation.user_id
    }

    pub fn labels(&self, source: &str) -> Result<&[usize]> {
        match self.sources.get(source) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(MetricsError::MissingSource {
                record: self.id().to_string(),
                source_id: source.to_string(),
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| MetricsError::InvalidRecord {
            record: self.id().to_string(),
            reason: reason.to_string(),
        };
        if self.task.options.len() != OPTION_COUNT {
            return Err(invalid("expected exactly 4 options"));
        }
        for (i, o) in self.task.options.iter().enumerate() {
            if self.task.options[..i].contains(o) {
                return Err(invalid("duplicate option text"));
            }
        }
        let bad = std::iter::once(self.author_label)
            .chain(self.sources.values().flatten().copied())
            .find(|&i| i >= OPTION_COUNT);
        if let Some(index) = bad {
            return Err(MetricsError::InvalidOption {
                record: self.id().to_string(),
                index,
            });
        }
        Ok(())
    }
}

/// Source ids present in any record, sorted.
pub fn source_ids(records: &[AnnotationRecord]) -> Vec<String> {
    let mut ids: Vec<String> = records
        .iter()
        .flat_map(|r| r.sources.keys().cloned())
        .collect();
    ids.sort();
    ids.dedup();
    ids
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(&line).map_err(|e| MetricsError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let f = std::fs::File::open(path)?;
    read_jsonl(std::io::BufReader::new(f))
}

pub fn write_jsonl(records: &[AnnotationRecord], mut w: impl Write) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(id: &str, author: usize, src: &[(&str, &[usize])]) -> AnnotationRecord {
        AnnotationRecord {
            task: TaskRef {
                task_id: id.into(),
                question: "How do you feel?".into(),
                options: vec!["Excited".into(), "Calm".into(), "Worried".into(), "Annoyed".into()],
            },
            conversation: ConversationRef {
                conversation_id: "c1".into(),
                user_id: "u1".into(),
                text: "some text".into(),
            },
            author_label: author,
            sources: src.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect(),
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let recs = vec![
            record("t1", 0, &[("llm", &[0, 0, 1])]),
            record("t2", 3, &[("llm", &[3, 2, 2]), ("mturk", &[1])]),
        ];
        let mut buf = Vec::new();
        write_jsonl(&recs, &mut buf).unwrap();
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, recs);
        assert_eq!(source_ids(&back), vec!["llm", "mturk"]);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let bad = record("t1", 4, &[]);
        assert!(matches!(bad.validate(), Err(MetricsError::InvalidOption { index: 4, .. })));
        let bad = record("t1", 0, &[("llm", &[0, 7])]);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn malformed_line_reports_position() {
        let text = "\n{\"nope\": 1}\n";
        match read_jsonl(text.as_bytes()) {
            Err(MetricsError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_source_is_an_error() {
        let r = record("t1", 0, &[("llm", &[])]);
        assert!(r.labels("llm").is_err());
        assert!(r.labels("expert").is_err());
    }
}
