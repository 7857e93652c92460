//! Seizure label formats: the native line format and CHB-MIT patient summaries.

use super::{IngestError, SeizureAnnotations, SeizureEvent};
use std::collections::BTreeMap;

pub const ANNOTATION_HEADER: &str = "# ictal-annotations v1";

/// Parses `seizure <onset_s> <offset_s>` lines. Blank lines and `#` comments
/// are ignored.
pub fn parse_annotations(text: &str) -> Result<SeizureAnnotations, IngestError> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: String| IngestError::MalformedLine {
            line: i + 1,
            reason,
        };
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 3 || tokens[0] != "seizure" {
            return Err(malformed(format!(
                "expected `seizure <onset> <offset>`, got {line:?}"
            )));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(format!("non-numeric field {s:?}")))
        };
        let (onset_s, offset_s) = (num(tokens[1])?, num(tokens[2])?);
        if onset_s >= offset_s {
            return Err(malformed(format!(
                "onset {onset_s} not before offset {offset_s}"
            )));
        }
        events.push(SeizureEvent { onset_s, offset_s });
    }
    SeizureAnnotations::new(events)
}

pub fn render_annotations(ann: &SeizureAnnotations) -> String {
    let mut out = String::from(ANNOTATION_HEADER);
    out.push('\n');
    for e in ann.events() {
        out.push_str(&format!("seizure {} {}\n", e.onset_s, e.offset_s));
    }
    out
}

fn seconds_value(line: &str) -> Option<f64> {
    let (_, rhs) = line.split_once(':')?;
    rhs.split_whitespace().next()?.parse().ok()
}

/// Parses a CHB-MIT `chbNN-summary.txt` into per-file annotations.
pub fn parse_chbmit_summary(
    text: &str,
) -> Result<BTreeMap<String, SeizureAnnotations>, IngestError> {
    struct Block {
        file: String,
        declared: Option<usize>,
        starts: Vec<f64>,
        ends: Vec<f64>,
    }

    fn finish(b: Block, out: &mut BTreeMap<String, SeizureAnnotations>) -> Result<(), IngestError> {
        let declared = b.declared.unwrap_or(b.starts.len());
        if b.starts.len() != b.ends.len() {
            return Err(IngestError::MalformedBlock(format!(
                "{}: {} seizure starts but {} ends",
                b.file,
                b.starts.len(),
                b.ends.len()
            )));
        }
        if b.starts.len() != declared {
            return Err(IngestError::MalformedBlock(format!(
                "{}: declares {} seizures but lists {}",
                b.file,
                declared,
                b.starts.len()
            )));
        }
        let events = b
            .starts
            .iter()
            .zip(&b.ends)
            .map(|(&onset_s, &offset_s)| SeizureEvent { onset_s, offset_s })
            .collect();
        let ann = SeizureAnnotations::new(events)
            .map_err(|e| IngestError::MalformedBlock(format!("{}: {e}", b.file)))?;
        out.insert(b.file, ann);
        Ok(())
    }

    let mut out = BTreeMap::new();
    let mut current: Option<Block> = None;
    for raw in text.lines() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix("File Name:") {
            if let Some(b) = current.take() {
                finish(b, &mut out)?;
            }
            current = Some(Block {
                file: name.trim().to_string(),
                declared: None,
                starts: vec![],
                ends: vec![],
            });
            continue;
        }
        let Some(b) = current.as_mut() else { continue };
        let bad = |what: &str| {
            IngestError::MalformedBlock(format!("{}: unreadable {what} in {line:?}", b.file))
        };
        if line.starts_with("Number of Seizures in File:") {
            let n = seconds_value(line).ok_or_else(|| bad("seizure count"))?;
            b.declared = Some(n as usize);
        } else if line.starts_with("Seizure") && line.contains("Start Time:") {
            let v = seconds_value(line).ok_or_else(|| bad("start time"))?;
            b.starts.push(v);
        } else if line.starts_with("Seizure") && line.contains("End Time:") {
            let v = seconds_value(line).ok_or_else(|| bad("end time"))?;
            b.ends.push(v);
        }
    }
    if let Some(b) = current.take() {
        finish(b, &mut out)?;
    }
    Ok(out)
}
