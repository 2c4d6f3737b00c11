//! Canonical labeled-lines interchange format: `<label>\t<base64>\n`.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use super::{IngestError, Label, PayloadSample};

/// Decodes a labeled-lines file. Line order becomes id order. A trailing
/// newline (or `\r\n`) on the last line is optional.
pub fn parse_labeled_lines(raw: &[u8], source: &str) -> Result<Vec<PayloadSample>, IngestError> {
    let text = std::str::from_utf8(raw).map_err(|e| {
        let line = raw[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        IngestError::BadLine {
            line,
            reason: "not valid UTF-8".into(),
        }
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let bad = |reason: String| IngestError::BadLine { line: lineno, reason };
        let (label, b64) = line
            .split_once('\t')
            .ok_or_else(|| bad("missing tab separator".into()))?;
        let label = match label {
            "0" => Label::Normal,
            "1" => Label::Anomalous,
            other => return Err(bad(format!("label {other:?} is not 0 or 1"))),
        };
        let payload = STANDARD.decode(b64).map_err(|e| bad(format!("invalid base64: {e}")))?;
        out.push(PayloadSample::new(out.len() as u64, payload, label, source));
    }
    Ok(out)
}

/// Encodes samples in list order. Ids and source tags are not stored.
pub fn serialize_labeled_lines(samples: &[PayloadSample]) -> Vec<u8> {
    let mut out = Vec::new();
    for s in samples {
        out.push(b'0' + s.label.as_u8());
        out.push(b'\t');
        out.extend_from_slice(STANDARD.encode(&s.payload).as_bytes());
        out.push(b'\n');
    }
    out
}
