//! Line-delimited JSON records: manifests in, predictions out.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One manifest line. `label` is a leaf name; it is required when building a
/// bank and optional for queries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub vector: Vec<f32>,
}

/// Per-query output of `classify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y1: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y2: Option<String>,
    pub y3: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback: Option<[bool; 3]>,
}

/// Per-query output of `ensemble`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub id: String,
    pub leaf: String,
    pub votes: usize,
    pub members: usize,
}

/// Minimal view used when scoring: any record with an id and a leaf.
#[derive(Debug, Clone, Deserialize)]
pub struct LeafRecord {
    pub id: String,
    #[serde(alias = "y3", alias = "label")]
    pub leaf: String,
}

/// Parse one JSON object per non-blank line.
pub fn read_jsonl<T, R>(reader: R) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, records: &[T]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Manifest {
            line: 0,
            msg: e.to_string(),
        })?;
        writeln!(writer, "{line}")?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_records_and_skips_blank_lines() {
        let text = "{\"id\":\"a\",\"label\":\"BL\",\"vector\":[1.0,0.0]}\n\n{\"id\":\"b\",\"vector\":[0.5]}\n";
        let recs: Vec<Record> = read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].label.as_deref(), Some("BL"));
        assert_eq!(recs[1].label, None);
    }

    #[test]
    fn bad_line_reports_line_number() {
        let text = "{\"id\":\"a\",\"vector\":[]}\nnot json\n";
        let err = read_jsonl::<Record, _>(text.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }));
    }

    #[test]
    fn leaf_record_accepts_all_field_spellings() {
        for text in [
            r#"{"id":"q","y3":"BL"}"#,
            r#"{"id":"q","leaf":"BL"}"#,
            r#"{"id":"q","label":"BL","vector":[1]}"#,
        ] {
            let r: Vec<LeafRecord> = read_jsonl(text.as_bytes()).unwrap();
            assert_eq!(r[0].leaf, "BL");
        }
    }
}
