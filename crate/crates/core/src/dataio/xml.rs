//! Reader for the Mulan label-list XML files.
//!
//! The format is a root element whose descendants include `label`
//! elements, each carrying a `name` attribute:
//!
//! ```xml
//! <labels xmlns="http://mulan.sourceforge.net/labels">
//!   <label name="amazed-suprised"></label>
//!   <label name="happy-pleased"/>
//! </labels>
//! ```
//!
//! This is a hand-rolled reader for exactly that shape: elements,
//! attributes, comments, processing instructions, and the five standard
//! entities. Label names are returned in document order (depth-first).

use super::arff::ParseError;

#[derive(Debug, Clone)]
struct Attr {
    name: String,
    value: String,
}

#[derive(Debug)]
enum Token {
    Open { name: String, attrs: Vec<Attr>, self_closing: bool },
    Close { name: String },
}

fn unescape(s: &str, line: usize) -> Result<String, ParseError> {
    if !s.contains('&') {
        return Ok(s.to_string());
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        let end = rest
            .find(';')
            .ok_or_else(|| ParseError { line, msg: "unterminated entity".into() })?;
        match &rest[1..end] {
            "amp" => out.push('&'),
            "lt" => out.push('<'),
            "gt" => out.push('>'),
            "quot" => out.push('"'),
            "apos" => out.push('\''),
            other => {
                return Err(ParseError {
                    line,
                    msg: format!("unsupported entity '&{};'", other),
                })
            }
        }
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Strip an optional namespace prefix: `ns:label` -> `label`.
fn local_name(name: &str) -> &str {
    name.rsplit(':').next().unwrap_or(name)
}

struct Lexer<'a> {
    text: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer { text, pos: 0, line: 1 }
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError { line: self.line, msg: msg.into() }
    }

    fn advance(&mut self, n: usize) {
        self.line += self.text[self.pos..self.pos + n].matches('\n').count();
        self.pos += n;
    }

    fn skip_until(&mut self, pat: &str, what: &str) -> Result<(), ParseError> {
        match self.text[self.pos..].find(pat) {
            Some(off) => {
                self.advance(off + pat.len());
                Ok(())
            }
            None => Err(self.err(format!("unterminated {}", what))),
        }
    }

    /// Next markup token; text content between tags is checked to be
    /// whitespace-free of stray '<'/'>' by construction and ignored.
    fn next_token(&mut self) -> Result<Option<Token>, ParseError> {
        loop {
            let rest = &self.text[self.pos..];
            let lt = match rest.find('<') {
                Some(off) => off,
                None => {
                    if rest.trim().is_empty() {
                        self.advance(rest.len());
                        return Ok(None);
                    }
                    return Err(self.err("text outside markup"));
                }
            };
            self.advance(lt);
            let rest = &self.text[self.pos..];
            if rest.starts_with("<!--") {
                self.skip_until("-->", "comment")?;
                continue;
            }
            if rest.starts_with("<?") {
                self.skip_until("?>", "processing instruction")?;
                continue;
            }
            if rest.starts_with("<!") {
                self.skip_until(">", "declaration")?;
                continue;
            }
            let end = rest.find('>').ok_or_else(|| self.err("unterminated tag"))?;
            let inner = &rest[1..end];
            let token = self.parse_tag(inner)?;
            self.advance(end + 1);
            return Ok(Some(token));
        }
    }

    fn parse_tag(&self, inner: &str) -> Result<Token, ParseError> {
        if let Some(name) = inner.strip_prefix('/') {
            let name = name.trim();
            if name.is_empty() {
                return Err(self.err("empty closing tag"));
            }
            return Ok(Token::Close { name: name.to_string() });
        }
        let (inner, self_closing) = match inner.strip_suffix('/') {
            Some(body) => (body, true),
            None => (inner, false),
        };
        let inner = inner.trim();
        let name_end = inner
            .find(|c: char| c.is_whitespace())
            .unwrap_or(inner.len());
        let name = &inner[..name_end];
        if name.is_empty() {
            return Err(self.err("empty tag name"));
        }
        let mut attrs = Vec::new();
        let mut rest = inner[name_end..].trim_start();
        while !rest.is_empty() {
            let eq = rest
                .find('=')
                .ok_or_else(|| self.err(format!("attribute without value in <{}>", name)))?;
            let attr_name = rest[..eq].trim();
            if attr_name.is_empty() {
                return Err(self.err("empty attribute name"));
            }
            let after = rest[eq + 1..].trim_start();
            let quote = after
                .chars()
                .next()
                .filter(|&c| c == '"' || c == '\'')
                .ok_or_else(|| self.err(format!("unquoted value for '{}'", attr_name)))?;
            let val_end = after[1..]
                .find(quote)
                .ok_or_else(|| self.err(format!("unterminated value for '{}'", attr_name)))?;
            let value = unescape(&after[1..1 + val_end], self.line)?;
            attrs.push(Attr { name: attr_name.to_string(), value });
            rest = after[val_end + 2..].trim_start();
        }
        Ok(Token::Open { name: name.to_string(), attrs, self_closing })
    }
}

/// Parse a label-list document and return the label names in document
/// order. Duplicate names, missing `name` attributes, and malformed
/// markup are errors.
pub fn parse_labels_xml(text: &str) -> Result<Vec<String>, ParseError> {
    let mut lexer = Lexer::new(text);
    let mut stack: Vec<String> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    let mut saw_root = false;

    while let Some(token) = lexer.next_token()? {
        match token {
            Token::Open { name, attrs, self_closing } => {
                if stack.is_empty() {
                    if saw_root {
                        return Err(lexer.err("multiple root elements"));
                    }
                    saw_root = true;
                }
                if local_name(&name) == "label" {
                    let attr = attrs
                        .iter()
                        .find(|a| local_name(&a.name) == "name")
                        .ok_or_else(|| lexer.err("label element without a name attribute"))?;
                    if names.contains(&attr.value) {
                        return Err(lexer.err(format!("duplicate label name '{}'", attr.value)));
                    }
                    names.push(attr.value.clone());
                }
                if !self_closing {
                    stack.push(name);
                }
            }
            Token::Close { name } => match stack.pop() {
                Some(open) if open == name => {}
                Some(open) => {
                    return Err(lexer.err(format!("</{}> closes <{}>", name, open)));
                }
                None => return Err(lexer.err(format!("unmatched </{}>", name))),
            },
        }
    }
    if let Some(open) = stack.pop() {
        return Err(lexer.err(format!("unclosed <{}>", open)));
    }
    if !saw_root {
        return Err(lexer.err("empty document"));
    }
    Ok(names)
}
