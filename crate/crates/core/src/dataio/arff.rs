//! ARFF reader for the Mulan-style dense and sparse numeric files.
//!
//! Supported subset: `@relation`, `@attribute <name> numeric|real|integer`,
//! `@attribute <name> {0,1}`, `@data`, `%` comment lines, dense rows, and
//! sparse rows of the form `{index value, index value}`. Keywords are
//! case-insensitive. Anything else, including missing-value markers, is
//! an error that names the offending 1-based line.

use crate::matrix::Matrix;
use std::fmt;

#[derive(Debug)]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

impl ParseError {
    fn at(line: usize, msg: impl Into<String>) -> Self {
        ParseError { line, msg: msg.into() }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.msg)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttrKind {
    Numeric,
    /// Nominal with domain exactly {0, 1}.
    Nominal01,
}

#[derive(Debug, Clone)]
pub struct ArffAttribute {
    pub name: String,
    pub kind: AttrKind,
}

#[derive(Debug)]
pub struct ArffRelation {
    pub relation: String,
    pub attributes: Vec<ArffAttribute>,
    /// One row per data line, one column per attribute.
    pub data: Matrix,
}

/// Split an attribute declaration body into (name, type text). The name
/// may be single- or double-quoted.
fn split_attribute(body: &str, line: usize) -> Result<(String, String), ParseError> {
    let body = body.trim();
    if let Some(quote) = body.chars().next().filter(|&c| c == '\'' || c == '"') {
        let rest = &body[1..];
        let end = rest
            .find(quote)
            .ok_or_else(|| ParseError::at(line, "unterminated quoted attribute name"))?;
        let name = rest[..end].to_string();
        let ty = rest[end + 1..].trim().to_string();
        if name.is_empty() {
            return Err(ParseError::at(line, "empty attribute name"));
        }
        Ok((name, ty))
    } else {
        let mut parts = body.splitn(2, char::is_whitespace);
        let name = parts
            .next()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| ParseError::at(line, "missing attribute name"))?;
        let ty = parts.next().unwrap_or("").trim().to_string();
        Ok((name.to_string(), ty))
    }
}

fn parse_attr_kind(ty: &str, line: usize) -> Result<AttrKind, ParseError> {
    let lower = ty.to_ascii_lowercase();
    match lower.as_str() {
        "numeric" | "real" | "integer" => return Ok(AttrKind::Numeric),
        "" => return Err(ParseError::at(line, "missing attribute type")),
        _ => {}
    }
    if lower.starts_with('{') {
        if !lower.ends_with('}') {
            return Err(ParseError::at(line, "unterminated nominal domain"));
        }
        let mut values: Vec<&str> = lower[1..lower.len() - 1]
            .split(',')
            .map(|v| v.trim().trim_matches('\'').trim_matches('"'))
            .collect();
        values.sort_unstable();
        if values == ["0", "1"] {
            return Ok(AttrKind::Nominal01);
        }
        return Err(ParseError::at(
            line,
            format!("unsupported nominal domain {{{}}}; only {{0,1}} is accepted", ty.trim_matches(['{', '}'])),
        ));
    }
    Err(ParseError::at(line, format!("unsupported attribute type '{}'", ty)))
}

fn parse_value(token: &str, kind: AttrKind, line: usize) -> Result<f64, ParseError> {
    let token = token.trim();
    if token.is_empty() {
        return Err(ParseError::at(line, "empty value"));
    }
    if token == "?" {
        return Err(ParseError::at(line, "missing value marker '?' is not supported"));
    }
    let v: f64 = token
        .parse()
        .map_err(|_| ParseError::at(line, format!("'{}' is not a number", token)))?;
    if !v.is_finite() {
        return Err(ParseError::at(line, format!("non-finite value '{}'", token)));
    }
    if kind == AttrKind::Nominal01 && v != 0.0 && v != 1.0 {
        return Err(ParseError::at(
            line,
            format!("value '{}' outside the {{0,1}} domain", token),
        ));
    }
    Ok(v)
}

pub fn parse_arff(text: &str) -> Result<ArffRelation, ParseError> {
    let mut relation: Option<String> = None;
    let mut attributes: Vec<ArffAttribute> = Vec::new();
    let mut in_data = false;
    let mut rows: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        if !in_data {
            let lower = line.to_ascii_lowercase();
            if lower.starts_with("@relation") {
                if relation.is_some() {
                    return Err(ParseError::at(line_no, "duplicate @relation"));
                }
                let name = line["@relation".len()..].trim();
                relation = Some(name.trim_matches(['\'', '"']).to_string());
            } else if lower.starts_with("@attribute") {
                let (name, ty) = split_attribute(&line["@attribute".len()..], line_no)?;
                if attributes.iter().any(|a| a.name == name) {
                    return Err(ParseError::at(line_no, format!("duplicate attribute '{}'", name)));
                }
                let kind = parse_attr_kind(&ty, line_no)?;
                attributes.push(ArffAttribute { name, kind });
            } else if lower == "@data" {
                if attributes.is_empty() {
                    return Err(ParseError::at(line_no, "@data before any @attribute"));
                }
                in_data = true;
            } else if lower.starts_with('@') {
                return Err(ParseError::at(line_no, format!("unknown directive '{}'", line)));
            } else {
                return Err(ParseError::at(line_no, "data row before @data"));
            }
            continue;
        }

        // Data section.
        let cols = attributes.len();
        let row_start = rows.len();
        if line.starts_with('{') {
            if !line.ends_with('}') {
                return Err(ParseError::at(line_no, "unterminated sparse row"));
            }
            rows.resize(row_start + cols, 0.0);
            let body = line[1..line.len() - 1].trim();
            if !body.is_empty() {
                let mut seen: Vec<usize> = Vec::new();
                for entry in body.split(',') {
                    let mut parts = entry.trim().splitn(2, char::is_whitespace);
                    let idx_tok = parts
                        .next()
                        .filter(|s| !s.is_empty())
                        .ok_or_else(|| ParseError::at(line_no, "empty sparse entry"))?;
                    let val_tok = parts
                        .next()
                        .ok_or_else(|| ParseError::at(line_no, format!("sparse entry '{}' has no value", entry.trim())))?;
                    let col: usize = idx_tok
                        .parse()
                        .map_err(|_| ParseError::at(line_no, format!("bad sparse index '{}'", idx_tok)))?;
                    if col >= cols {
                        return Err(ParseError::at(
                            line_no,
                            format!("sparse index {} out of range for {} attributes", col, cols),
                        ));
                    }
                    if seen.contains(&col) {
                        return Err(ParseError::at(line_no, format!("duplicate sparse index {}", col)));
                    }
                    seen.push(col);
                    rows[row_start + col] = parse_value(val_tok, attributes[col].kind, line_no)?;
                }
            }
        } else {
            let mut count = 0usize;
            for (col, token) in line.split(',').enumerate() {
                if col >= cols {
                    return Err(ParseError::at(
                        line_no,
                        format!("row has more than {} values", cols),
                    ));
                }
                rows.push(parse_value(token, attributes[col].kind, line_no)?);
                count += 1;
            }
            if count != cols {
                return Err(ParseError::at(
                    line_no,
                    format!("row has {} values, expected {}", count, cols),
                ));
            }
        }
        n_rows += 1;
    }

    if !in_data {
        return Err(ParseError::at(
            text.lines().count().max(1),
            "no @data section",
        ));
    }
    let relation = relation.unwrap_or_default();
    let cols = attributes.len();
    let data = Matrix::from_vec(n_rows, cols, rows)
        .expect("row assembly is shape-consistent by construction");
    Ok(ArffRelation { relation, attributes, data })
}

/// Render a relation back to dense ARFF text. Numeric values are written
/// with full round-trip precision, nominal values as bare 0/1, and names
/// containing whitespace are single-quoted.
pub fn write_dense_arff(rel: &ArffRelation) -> String {
    let quoted = |name: &str| {
        if name.contains(char::is_whitespace) {
            format!("'{}'", name)
        } else {
            name.to_string()
        }
    };
    let mut out = String::new();
    out.push_str(&format!("@relation {}\n\n", rel.relation));
    for attr in &rel.attributes {
        match attr.kind {
            AttrKind::Numeric => {
                out.push_str(&format!("@attribute {} numeric\n", quoted(&attr.name)))
            }
            AttrKind::Nominal01 => {
                out.push_str(&format!("@attribute {} {{0,1}}\n", quoted(&attr.name)))
            }
        }
    }
    out.push_str("\n@data\n");
    for r in 0..rel.data.rows() {
        let row = rel.data.row(r);
        let mut first = true;
        for (v, attr) in row.iter().zip(rel.attributes.iter()) {
            if !first {
                out.push(',');
            }
            first = false;
            match attr.kind {
                AttrKind::Numeric => out.push_str(&format!("{}", v)),
                AttrKind::Nominal01 => out.push_str(if *v == 1.0 { "1" } else { "0" }),
            }
        }
        out.push('\n');
    }
    out
}
