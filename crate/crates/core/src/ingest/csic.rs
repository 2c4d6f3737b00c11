//! CSIC-2010 style raw HTTP request text.
//!
//! A file is a sequence of records: request line, header lines, a blank
//! line, then an optional body that runs until the next blank line or the
//! next request line. Both `\r\n` and `\n` line endings are accepted.
//! `Content-Length` is not trusted for framing; the published files frame
//! bodies by line structure.

use super::{IngestError, Label, PayloadSample};

/// Parses every request record in `raw`, labelling each with `label`.
///
/// With `strip_headers` the payload is the request line (without its line
/// terminator) followed directly by the body bytes. Without it, the payload
/// is the exact record bytes from the start of the request line through the
/// end of the body, or through the blank separator line for bodyless
/// requests.
pub fn parse_http_text(
    raw: &[u8],
    label: Label,
    strip_headers: bool,
    source: &str,
) -> Result<Vec<PayloadSample>, IngestError> {
    let mut out = Vec::new();
    let mut pos = 0;

    loop {
        while let Some((line, next)) = next_line(raw, pos) {
            if !line.is_empty() {
                break;
            }
            pos = next;
        }
        let Some((request_line, next)) = next_line(raw, pos) else {
            break;
        };
        if !is_request_line(request_line) {
            return Err(IngestError::MalformedRecord {
                offset: pos,
                reason: "expected a request line",
            });
        }
        let record_start = pos;
        pos = next;

        let mut saw_blank = false;
        while let Some((line, next)) = next_line(raw, pos) {
            if line.is_empty() {
                pos = next;
                saw_blank = true;
                break;
            }
            if is_request_line(line) {
                break;
            }
            if !line.contains(&b':') {
                return Err(IngestError::MalformedRecord {
                    offset: pos,
                    reason: "header line without ':'",
                });
            }
            pos = next;
        }
        let headers_end = pos;

        let body_start = pos;
        let mut body_end = pos;
        if saw_blank {
            while let Some((line, next)) = next_line(raw, pos) {
                if line.is_empty() || is_request_line(line) {
                    break;
                }
                body_end = pos + line.len();
                pos = next;
            }
        }
        let body = &raw[body_start..body_end];

        let payload = if strip_headers {
            let mut p = Vec::with_capacity(request_line.len() + body.len());
            p.extend_from_slice(request_line);
            p.extend_from_slice(body);
            p
        } else {
            let end = if body.is_empty() { headers_end } else { body_end };
            raw[record_start..end].to_vec()
        };
        out.push(PayloadSample::new(out.len() as u64, payload, label, source));
    }
    Ok(out)
}

/// Returns the line starting at `pos` without its terminator, plus the
/// offset of the following line.
fn next_line(raw: &[u8], pos: usize) -> Option<(&[u8], usize)> {
    if pos >= raw.len() {
        return None;
    }
    let rest = &raw[pos..];
    match rest.iter().position(|&b| b == b'\n') {
        Some(nl) => {
            let content = if nl > 0 && rest[nl - 1] == b'\r' {
                &rest[..nl - 1]
            } else {
                &rest[..nl]
            };
            Some((content, pos + nl + 1))
        }
        None => Some((rest, raw.len())),
    }
}

/// `METHOD SP target SP HTTP/x.y`
fn is_request_line(line: &[u8]) -> bool {
    let Some(sp) = line.iter().position(|&b| b == b' ') else {
        return false;
    };
    let method = &line[..sp];
    if method.is_empty() || !method.iter().all(|b| b.is_ascii_uppercase()) {
        return false;
    }
    let Some(last_sp) = line.iter().rposition(|&b| b == b' ') else {
        return false;
    };
    last_sp > sp + 1 && line[last_sp + 1..].starts_with(b"HTTP/")
}
