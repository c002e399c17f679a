//! Minimal RFC-4180 CSV writing and strict parsing, with shortest
//! round-trip float formatting so every numeric field re-parses exactly.

use crate::error::{CliError, CliResult};

/// Quote a field if it contains a comma, quote, or line break.
pub fn field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') || s.contains('\r') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Shortest representation that parses back to the same f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{}", v)
}

pub fn write_row(out: &mut String, fields: &[String]) {
    for (i, f) in fields.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&field(f));
    }
    out.push('\n');
}

/// Parse a full CSV document into rows of unescaped fields.
pub fn parse(text: &str) -> CliResult<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    let mut row: Vec<String> = Vec::new();
    let mut cur = String::new();
    let mut chars = text.chars().peekable();
    let mut in_quotes = false;
    let mut any = false;
    while let Some(c) = chars.next() {
        if in_quotes {
            match c {
                '"' => {
                    if chars.peek() == Some(&'"') {
                        chars.next();
                        cur.push('"');
                    } else {
                        in_quotes = false;
                    }
                }
                other => cur.push(other),
            }
            continue;
        }
        match c {
            '"' => {
                if !cur.is_empty() {
                    return Err(CliError::runtime("csv: quote inside unquoted field"));
                }
                in_quotes = true;
                any = true;
            }
            ',' => {
                row.push(std::mem::take(&mut cur));
                any = true;
            }
            '\r' => {
                if chars.peek() == Some(&'\n') {
                    chars.next();
                }
                row.push(std::mem::take(&mut cur));
                rows.push(std::mem::take(&mut row));
                any = false;
            }
            '\n' => {
                row.push(std::mem::take(&mut cur));
                rows.push(std::mem::take(&mut row));
                any = false;
            }
            other => {
                cur.push(other);
                any = true;
            }
        }
    }
    if in_quotes {
        return Err(CliError::runtime("csv: unterminated quoted field"));
    }
    if any || !cur.is_empty() {
        row.push(cur);
        rows.push(row);
    }
    Ok(rows)
}
