//! The bit-exact TSV wire format.
//!
//! UTF-8; rows separated by `\n`; fields separated by `\t`. Inside a field,
//! tab is written `\t`, newline `\n`, and backslash `\\` (two characters
//! each). Null is the two-character sequence `\N`. Bools are `true`/`false`.
//! Json blobs are their raw JSON text, escaped by the same rules. The same
//! format is used for relation dumps and for the UDF subprocess protocol.

use super::{ColumnType, RelStoreError, Schema, Tuple, Value};
use std::io::{Read, Write};

/// Escapes tab, newline and backslash inside a field.
pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out
}

/// Reverses [`escape_field`]. `None` marks an invalid escape sequence; the
/// caller attaches line and field positions.
pub fn unescape_field(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            _ => return None,
        }
    }
    Some(out)
}

/// Serializes one value as a TSV field.
pub fn format_value(v: &Value) -> String {
    match v {
        Value::Null => "\\N".to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Int(i) => i.to_string(),
        Value::Float(f) => f.to_string(),
        Value::Text(s) => escape_field(s),
        Value::Json(s) => escape_field(s),
    }
}

/// Parses one raw (still escaped) TSV field against a column type.
/// The unescaped-null sequence `\N` wins before unescaping, so a literal
/// backslash-N text value round-trips as `\\N`.
pub fn parse_field(raw: &str, ty: ColumnType) -> Result<Value, FieldError> {
    if raw == "\\N" {
        return Ok(Value::Null);
    }
    let text = unescape_field(raw).ok_or(FieldError::InvalidEscape)?;
    let bad = || FieldError::Unparseable(text.clone());
    match ty {
        ColumnType::Bool => match text.as_str() {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            _ => Err(bad()),
        },
        ColumnType::Int64 => text.parse::<i64>().map(Value::Int).map_err(|_| bad()),
        ColumnType::Float64 => text.parse::<f64>().map(Value::Float).map_err(|_| bad()),
        ColumnType::Text => Ok(Value::Text(text)),
        ColumnType::Json => Ok(Value::Json(text)),
    }
}

#[derive(Debug)]
pub enum FieldError {
    InvalidEscape,
    Unparseable(String),
}

/// Writes one row, escaped, with a trailing newline.
pub fn write_row(writer: &mut impl Write, values: &[Value]) -> std::io::Result<()> {
    let line = row_to_line(values);
    writer.write_all(line.as_bytes())?;
    writer.write_all(b"\n")
}

pub fn row_to_line(values: &[Value]) -> String {
    values
        .iter()
        .map(format_value)
        .collect::<Vec<_>>()
        .join("\t")
}

/// Parses one line against a schema. `line_no` is 1-based and only used in
/// error reports.
pub fn parse_line(schema: &Schema, line: &str, line_no: usize) -> Result<Tuple, RelStoreError> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != schema.arity() {
        return Err(RelStoreError::LineArity {
            line: line_no,
            expected: schema.arity(),
            found: fields.len(),
        });
    }
    let mut values = Vec::with_capacity(fields.len());
    for (i, (raw, col)) in fields.iter().zip(&schema.columns).enumerate() {
        match parse_field(raw, col.ty) {
            Ok(v) => values.push(v),
            Err(FieldError::InvalidEscape) => {
                return Err(RelStoreError::InvalidEscape {
                    line: line_no,
                    field: i + 1,
                })
            }
            Err(FieldError::Unparseable(text)) => {
                return Err(RelStoreError::ValueParse {
                    line: line_no,
                    field: i + 1,
                    text,
                    ty: col.ty,
                })
            }
        }
    }
    Ok(Tuple(values))
}

/// Parses a whole byte stream into rows. A trailing newline is permitted and
/// does not produce an empty final row.
pub fn parse_stream(schema: &Schema, mut reader: impl Read) -> Result<Vec<Tuple>, RelStoreError> {
    let mut buf = String::new();
    reader.read_to_string(&mut buf)?;
    parse_text(schema, &buf)
}

pub fn parse_text(schema: &Schema, text: &str) -> Result<Vec<Tuple>, RelStoreError> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, line)| parse_line(schema, line, i + 1))
        .collect()
}
