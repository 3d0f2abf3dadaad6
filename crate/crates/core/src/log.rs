//! Canonical JSON and JSON-lines message histories.
//!
//! Canonical form is plain JSON with object keys sorted and no
//! insignificant whitespace, so equal values have equal bytes and logs,
//! golden files, and oracle output can be compared as strings.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::causal::Envelope;

/// Serializes any value to canonical JSON. Keys are sorted by routing the
/// value through a tree of ordered maps first.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let tree = serde_json::to_value(value).expect("value serializes to JSON");
    serde_json::to_string(&tree).expect("JSON tree prints")
}

/// One canonical-JSON envelope per line, in history order.
pub fn to_jsonl(envelopes: &[Envelope]) -> String {
    let mut out = String::new();
    for e in envelopes {
        out.push_str(&canonical_json(e));
        out.push('\n');
    }
    out
}

#[derive(Debug, thiserror::Error)]
#[error("line {line}: {source}")]
pub struct ParseLogError {
    pub line: usize,
    #[source]
    pub source: serde_json::Error,
}

/// Parses a JSON-lines history. Blank lines are allowed and skipped;
/// anything else must be one envelope per line.
pub fn parse_jsonl(text: &str) -> Result<Vec<Envelope>, ParseLogError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let env = serde_json::from_str(line).map_err(|source| ParseLogError {
            line: i + 1,
            source,
        })?;
        out.push(env);
    }
    Ok(out)
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Parse(#[from] ParseLogError),
}

pub fn write_log(path: impl AsRef<Path>, envelopes: &[Envelope]) -> io::Result<()> {
    fs::write(path, to_jsonl(envelopes))
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<Envelope>, LogError> {
    Ok(parse_jsonl(&fs::read_to_string(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::causal::ReplicaId;
    use crate::element::{attr_set, AttrValue};
    use crate::list::{ElemOp, ElementState, Replica};

    fn sample_history() -> Vec<Envelope> {
        let mut a = Replica::new(ReplicaId::new("A").unwrap());
        let mut out = Vec::new();
        out.push(a.insert_gen(0, ElementState::rich_char('h')).unwrap());
        out.push(
            a.apply_gen(0, ElemOp::Pure(attr_set("bold", AttrValue::Bool(true))))
                .unwrap(),
        );
        out.push(a.delete_gen(0).unwrap());
        out
    }

    #[test]
    fn canonical_json_sorts_object_keys() {
        #[derive(Serialize)]
        struct Unsorted {
            zeta: u32,
            alpha: u32,
        }
        assert_eq!(
            canonical_json(&Unsorted { zeta: 1, alpha: 2 }),
            r#"{"alpha":2,"zeta":1}"#
        );
    }

    #[test]
    fn envelope_lines_round_trip() {
        let history = sample_history();
        let text = to_jsonl(&history);
        assert_eq!(text.lines().count(), 3);
        let back = parse_jsonl(&text).unwrap();
        assert_eq!(back, history);
    }

    #[test]
    fn envelope_wire_shape_is_stable() {
        let history = sample_history();
        let first = canonical_json(&history[0]);
        assert_eq!(
            first,
            r#"{"dot":{"clock":1,"sender":"A"},"kind":"insert","payload":{"p":"1.A","sigma0":{"rich_char":{"attrs":{},"char":"h"}}},"vc":{"A":1}}"#
        );
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let history = sample_history();
        let mut text = to_jsonl(&history);
        text.push_str("not json\n");
        let err = parse_jsonl(&text).unwrap_err();
        assert_eq!(err.line, 4);
    }
}
