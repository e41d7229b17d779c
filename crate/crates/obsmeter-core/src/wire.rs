//! The text wire protocol between clients and the collection server.
//!
//! A connection starts with a header block (`key: value` lines, one `schema:`
//! line per stream, terminated by a blank line) followed by one LF-terminated
//! frame line per sample. Frames are TAB-separated; text values escape TAB,
//! LF and backslash. Encoding is bit-exact: `decode(encode(x)) == x` for
//! every valid header and frame, and distinct frames yield distinct bytes.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::measure::{ClientIdentity, MetricType, MetricValue};
use crate::time::Micros;

pub const PROTOCOL_VERSION: u32 = 1;

/// Schema of one measurement stream as declared in the header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamSchema {
    /// 1-based wire index; indices of a header are contiguous 1..=N.
    pub index: u32,
    pub name: String,
    pub fields: Vec<(String, MetricType)>,
}

/// The connection preamble: protocol version, client identity and the
/// ordered stream schema declarations.
#[derive(Debug, Clone, PartialEq)]
pub struct HeaderBlock {
    pub protocol_version: u32,
    pub identity: ClientIdentity,
    pub schemas: Vec<StreamSchema>,
}

/// One sample on the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamFrame {
    /// Client timestamp relative to client start.
    pub client_ts_rel: Micros,
    pub stream_index: u32,
    pub seq: u64,
    pub values: Vec<MetricValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WireError {
    NonContiguousIndices,
    UndeclaredStream(u32),
    ProtocolVersionMismatch(u32),
    MalformedHeader(String),
    MalformedFrame(String),
    DuplicateSeq(u64),
}

impl fmt::Display for WireError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WireError::NonContiguousIndices => write!(f, "stream indices must be contiguous from 1"),
            WireError::UndeclaredStream(i) => write!(f, "frame for undeclared stream {i}"),
            WireError::ProtocolVersionMismatch(v) => write!(f, "unsupported protocol version {v}"),
            WireError::MalformedHeader(s) => write!(f, "malformed header: {s}"),
            WireError::MalformedFrame(s) => write!(f, "malformed frame: {s}"),
            WireError::DuplicateSeq(s) => write!(f, "duplicate sequence number {s}"),
        }
    }
}

impl core::error::Error for WireError {}

fn escape_text(s: &str, out: &mut String) {
    for ch in s.chars() {
        match ch {
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
}

fn unescape_text(s: &str) -> Result<String, WireError> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            other => {
                return Err(WireError::MalformedFrame(format!(
                    "bad escape '\\{}'",
                    other.map(String::from).unwrap_or_default()
                )))
            }
        }
    }
    Ok(out)
}

/// Render a float with 17 significant digits so the exact value survives a
/// decode round-trip.
fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Append one value in its wire form: decimal int64, 17-significant-digit
/// float64, escaped text. Stored tables reuse this rendering.
pub fn encode_value(v: &MetricValue, out: &mut String) {
    match v {
        MetricValue::Int64(i) => out.push_str(&i.to_string()),
        MetricValue::Float64(f) => out.push_str(&format_f64(*f)),
        MetricValue::Text(t) => escape_text(t, out),
    }
}

/// Parse one wire-form value of a known type.
pub fn decode_value(token: &str, ty: MetricType) -> Result<MetricValue, WireError> {
    parse_value(token, ty)
}

fn parse_value(token: &str, ty: MetricType) -> Result<MetricValue, WireError> {
    match ty {
        MetricType::Int64 => token
            .parse::<i64>()
            .map(MetricValue::Int64)
            .map_err(|_| WireError::MalformedFrame(format!("bad int64 '{token}'"))),
        MetricType::Float64 => token
            .parse::<f64>()
            .map(MetricValue::Float64)
            .map_err(|_| WireError::MalformedFrame(format!("bad float64 '{token}'"))),
        MetricType::Text => unescape_text(token).map(MetricValue::Text),
    }
}

fn check_contiguous(schemas: &[StreamSchema]) -> Result<(), WireError> {
    for (i, schema) in schemas.iter().enumerate() {
        if schema.index as usize != i + 1 {
            return Err(WireError::NonContiguousIndices);
        }
    }
    Ok(())
}

/// Encode the header block, blank-line terminated.
pub fn encode_header(h: &HeaderBlock) -> Result<String, WireError> {
    check_contiguous(&h.schemas)?;
    let mut out = String::new();
    out.push_str(&format!("protocol: {}\n", h.protocol_version));
    for (key, value) in [
        ("experiment-id", &h.identity.experiment_id),
        ("node-id", &h.identity.node_id),
        ("app-name", &h.identity.app_name),
    ] {
        out.push_str(key);
        out.push_str(": ");
        escape_text(value, &mut out);
        out.push('\n');
    }
    out.push_str(&format!("start-time: {}\n", h.identity.start_time.to_wire()));
    for schema in &h.schemas {
        out.push_str(&format!("schema: {} {}", schema.index, schema.name));
        for (field, ty) in &schema.fields {
            out.push_str(&format!(" {}:{}", field, ty.name()));
        }
        out.push('\n');
    }
    out.push('\n');
    Ok(out)
}

/// Decode a header block from the exact text produced by [`encode_header`].
/// The input must include the terminating blank line.
pub fn decode_header(text: &str) -> Result<HeaderBlock, WireError> {
    let mut lines = text.split('\n');
    let mut kv = |key: &str| -> Result<String, WireError> {
        let line = lines
            .next()
            .ok_or_else(|| WireError::MalformedHeader(format!("missing '{key}' line")))?;
        let rest = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(": "))
            .ok_or_else(|| WireError::MalformedHeader(format!("expected '{key}:' line, got '{line}'")))?;
        Ok(String::from(rest))
    };
    let version_str = kv("protocol")?;
    let version: u32 = version_str
        .parse()
        .map_err(|_| WireError::MalformedHeader(format!("bad version '{version_str}'")))?;
    if version != PROTOCOL_VERSION {
        return Err(WireError::ProtocolVersionMismatch(version));
    }
    let experiment_id = unescape_text(&kv("experiment-id")?)
        .map_err(|_| WireError::MalformedHeader("bad experiment-id escape".into()))?;
    let node_id = unescape_text(&kv("node-id")?)
        .map_err(|_| WireError::MalformedHeader("bad node-id escape".into()))?;
    let app_name = unescape_text(&kv("app-name")?)
        .map_err(|_| WireError::MalformedHeader("bad app-name escape".into()))?;
    let start_str = kv("start-time")?;
    let start_time = Micros::parse_wire(&start_str)
        .ok_or_else(|| WireError::MalformedHeader(format!("bad start-time '{start_str}'")))?;

    let mut schemas = Vec::new();
    loop {
        let line = lines
            .next()
            .ok_or_else(|| WireError::MalformedHeader("unterminated header".into()))?;
        if line.is_empty() {
            break;
        }
        let body = line
            .strip_prefix("schema: ")
            .ok_or_else(|| WireError::MalformedHeader(format!("expected schema line, got '{line}'")))?;
        let mut tokens = body.split(' ');
        let index: u32 = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| WireError::MalformedHeader("bad schema index".into()))?;
        let name = tokens
            .next()
            .ok_or_else(|| WireError::MalformedHeader("schema line missing name".into()))?;
        let mut fields = Vec::new();
        for tok in tokens {
            let (fname, tname) = tok
                .split_once(':')
                .ok_or_else(|| WireError::MalformedHeader(format!("bad field spec '{tok}'")))?;
            let ty = MetricType::parse(tname)
                .ok_or_else(|| WireError::MalformedHeader(format!("unknown type '{tname}'")))?;
            fields.push((String::from(fname), ty));
        }
        if fields.is_empty() {
            return Err(WireError::MalformedHeader("schema with no fields".into()));
        }
        schemas.push(StreamSchema {
            index,
            name: String::from(name),
            fields,
        });
    }
    check_contiguous(&schemas)?;
    Ok(HeaderBlock {
        protocol_version: version,
        identity: ClientIdentity {
            experiment_id,
            node_id,
            app_name,
            start_time,
        },
        schemas,
    })
}

/// Encode one frame as an LF-terminated TAB-separated line.
pub fn encode_frame(f: &StreamFrame) -> String {
    let mut out = String::with_capacity(32 + 16 * f.values.len());
    out.push_str(&f.client_ts_rel.to_wire());
    out.push('\t');
    out.push_str(&f.stream_index.to_string());
    out.push('\t');
    out.push_str(&f.seq.to_string());
    for v in &f.values {
        out.push('\t');
        encode_value(v, &mut out);
    }
    out.push('\n');
    out
}

/// Encode a frame after checking its stream is declared and typed correctly.
pub fn encode_frame_checked(f: &StreamFrame, schemas: &[StreamSchema]) -> Result<String, WireError> {
    let schema = schemas
        .iter()
        .find(|s| s.index == f.stream_index)
        .ok_or(WireError::UndeclaredStream(f.stream_index))?;
    if f.values.len() != schema.fields.len()
        || f
            .values
            .iter()
            .zip(&schema.fields)
            .any(|(v, (_, ty))| v.metric_type() != *ty)
    {
        return Err(WireError::MalformedFrame(format!(
            "values do not match schema '{}'",
            schema.name
        )));
    }
    Ok(encode_frame(f))
}

/// Decode one frame line (without the trailing LF, or with it) against the
/// declared schemas.
pub fn decode_frame(line: &str, schemas: &[StreamSchema]) -> Result<StreamFrame, WireError> {
    let line = line.strip_suffix('\n').unwrap_or(line);
    let mut tokens = line.split('\t');
    let ts_tok = tokens
        .next()
        .filter(|t| !t.is_empty())
        .ok_or_else(|| WireError::MalformedFrame("empty frame".into()))?;
    let client_ts_rel = Micros::parse_wire(ts_tok)
        .ok_or_else(|| WireError::MalformedFrame(format!("bad timestamp '{ts_tok}'")))?;
    let stream_index: u32 = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| WireError::MalformedFrame("bad stream index".into()))?;
    let seq: u64 = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| WireError::MalformedFrame("bad sequence number".into()))?;
    let schema = schemas
        .iter()
        .find(|s| s.index == stream_index)
        .ok_or(WireError::UndeclaredStream(stream_index))?;
    let mut values = Vec::with_capacity(schema.fields.len());
    for (_, ty) in &schema.fields {
        let tok = tokens
            .next()
            .ok_or_else(|| WireError::MalformedFrame("missing value".into()))?;
        values.push(parse_value(tok, *ty)?);
    }
    if tokens.next().is_some() {
        return Err(WireError::MalformedFrame("trailing values".into()));
    }
    Ok(StreamFrame {
        client_ts_rel,
        stream_index,
        seq,
        values,
    })
}

/// Missing-sequence accounting for one stream.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GapReport {
    pub missing: u64,
    /// Inclusive ranges of missing sequence numbers, ascending.
    pub ranges: Vec<(u64, u64)>,
}

/// Detect gaps in the sequence numbers observed for a single stream, in any
/// arrival order. Missing count is relative to the observed min..=max span,
/// so drops before the first or after the last delivered frame are invisible
/// here and only show up in the client's own drop counters.
pub fn detect_gaps(seqs: &[u64]) -> Result<GapReport, WireError> {
    if seqs.is_empty() {
        return Ok(GapReport::default());
    }
    let mut sorted: Vec<u64> = seqs.to_vec();
    sorted.sort_unstable();
    for pair in sorted.windows(2) {
        if pair[0] == pair[1] {
            return Err(WireError::DuplicateSeq(pair[0]));
        }
    }
    let span = sorted[sorted.len() - 1] - sorted[0] + 1;
    let missing = span - sorted.len() as u64;
    let mut ranges = Vec::new();
    for pair in sorted.windows(2) {
        if pair[1] - pair[0] > 1 {
            ranges.push((pair[0] + 1, pair[1] - 1));
        }
    }
    Ok(GapReport { missing, ranges })
}
