use std::fmt::Write as _;

use super::{Activity, AttrValue, Attrs, ProvDocument, ProvRelation, RelationKind};
use crate::error::{Error, Result};

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '"' => out.push_str("\\\""),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

fn attr_list(attrs: &Attrs) -> Option<String> {
    let parts: Vec<String> = attrs
        .iter()
        .flat_map(|(k, vs)| {
            vs.iter().map(move |v| match v {
                AttrValue::Literal(s) => format!("{k}=\"{}\"", escape(s)),
                AttrValue::QName(q) => format!("{k}='{q}'"),
            })
        })
        .collect();
    (!parts.is_empty()).then(|| format!("[{}]", parts.join(", ")))
}

fn statement(keyword: &str, mut args: Vec<String>, attrs: &Attrs) -> String {
    args.extend(attr_list(attrs));
    format!("{keyword}({})", args.join(", "))
}

pub fn to_prov_n(doc: &ProvDocument) -> String {
    let none = Attrs::new();
    let mut lines: Vec<String> = Vec::new();
    lines.extend(
        doc.entities
            .iter()
            .map(|(id, a)| statement("entity", vec![id.clone()], a)),
    );
    lines.extend(
        doc.agents
            .iter()
            .map(|(id, a)| statement("agent", vec![id.clone()], a)),
    );
    lines.extend(doc.activities.iter().map(|(id, a)| {
        let t = |t: &Option<String>| t.clone().unwrap_or_else(|| "-".into());
        statement(
            "activity",
            vec![id.clone(), t(&a.start_time), t(&a.end_time)],
            &a.attrs,
        )
    }));
    lines.extend(doc.relations.iter().map(|r| {
        let mut args = vec![r.subject.clone(), r.object.clone()];
        if r.kind.has_third() {
            args.push("-".into());
        }
        statement(r.kind.keyword(), args, &none)
    }));
    lines.sort();

    let mut out = String::from("document\n");
    for (p, uri) in &doc.prefixes {
        let _ = writeln!(out, "  prefix {p} <{uri}>");
    }
    for l in lines {
        let _ = writeln!(out, "  {l}");
    }
    out.push_str("endDocument\n");
    out
}

#[derive(Debug)]
enum Arg {
    Token(String),
    Attrs(Attrs),
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

fn is_token_char(c: char) -> bool {
    !c.is_whitespace()
        && !matches!(
            c,
            '(' | ')' | ',' | '[' | ']' | '=' | '<' | '>' | '"' | '\''
        )
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: &str) -> Error {
        let line = self.src[..self.pos].matches('\n').count() + 1;
        Error::ParseError(format!("line {line}: {msg}"))
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        loop {
            let rest = &self.src[self.pos..];
            let trimmed = rest.trim_start();
            self.pos += rest.len() - trimmed.len();
            if trimmed.starts_with("//") {
                self.pos += trimmed.find('\n').unwrap_or(trimmed.len());
            } else {
                break;
            }
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        self.skip_ws();
        match self.bump() {
            Some(x) if x == c => Ok(()),
            Some(x) => Err(self.err(&format!("expected `{c}`, found `{x}`"))),
            None => Err(self.err(&format!("expected `{c}`, found end of input"))),
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_ws();
        let start = self.pos;
        while self.peek().is_some_and(is_token_char) {
            self.bump();
        }
        if start == self.pos {
            return Err(self.err("expected identifier"));
        }
        Ok(&self.src[start..self.pos])
    }

    fn delimited(&mut self, close: char) -> Result<String> {
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return Err(self.err("unterminated literal")),
                Some(c) if c == close => return Ok(out),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('r') => out.push('\r'),
                    Some('t') => out.push('\t'),
                    Some(c) => out.push(c),
                    None => return Err(self.err("unterminated escape")),
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn attrs(&mut self) -> Result<Attrs> {
        let mut attrs = Attrs::new();
        self.skip_ws();
        if self.peek() == Some(']') {
            self.bump();
            return Ok(attrs);
        }
        loop {
            let key = self.token()?.to_owned();
            self.expect('=')?;
            self.skip_ws();
            let v = match self.bump() {
                Some('"') => AttrValue::Literal(self.delimited('"')?),
                Some('\'') => AttrValue::QName(self.delimited('\'')?),
                _ => return Err(self.err("expected quoted attribute value")),
            };
            attrs.entry(key).or_default().insert(v);
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some(']') => return Ok(attrs),
                _ => return Err(self.err("expected `,` or `]` in attribute list")),
            }
        }
    }

    fn args(&mut self) -> Result<Vec<Arg>> {
        self.expect('(')?;
        let mut args = Vec::new();
        loop {
            self.skip_ws();
            if self.peek() == Some('[') {
                self.bump();
                args.push(Arg::Attrs(self.attrs()?));
            } else {
                args.push(Arg::Token(self.token()?.to_owned()));
            }
            self.skip_ws();
            match self.bump() {
                Some(',') => continue,
                Some(')') => return Ok(args),
                _ => return Err(self.err("expected `,` or `)`")),
            }
        }
    }
}

fn split(args: Vec<Arg>, keyword: &str) -> Result<(Vec<String>, Attrs)> {
    let mut tokens = Vec::new();
    let mut attrs = None;
    for a in args {
        match a {
            Arg::Token(_) if attrs.is_some() => {
                return Err(Error::ParseError(format!(
                    "{keyword}: attribute list must come last"
                )))
            }
            Arg::Token(t) => tokens.push(t),
            Arg::Attrs(a) => attrs = Some(a),
        }
    }
    Ok((tokens, attrs.unwrap_or_default()))
}

fn opt(t: &str) -> Option<String> {
    (t != "-").then(|| t.to_owned())
}

pub fn parse_prov_n(text: &str) -> Result<ProvDocument> {
    let mut c = Cursor { src: text, pos: 0 };
    if c.token()? != "document" {
        return Err(c.err("expected `document`"));
    }
    let mut doc = ProvDocument::default();
    loop {
        let kw = c.token()?;
        match kw {
            "endDocument" => break,
            "prefix" => {
                let p = c.token()?.to_owned();
                c.expect('<')?;
                let uri = c.delimited('>')?;
                doc.prefixes.insert(p, uri);
            }
            _ => {
                let (tokens, attrs) = split(c.args()?, kw)?;
                let arity = |lo: usize, hi: usize| {
                    if (lo..=hi).contains(&tokens.len()) {
                        Ok(())
                    } else {
                        Err(c.err(&format!("{kw} takes {lo} to {hi} arguments")))
                    }
                };
                match kw {
                    "entity" | "agent" => {
                        arity(1, 1)?;
                        let target = if kw == "entity" {
                            &mut doc.entities
                        } else {
                            &mut doc.agents
                        };
                        target.insert(tokens[0].clone(), attrs);
                    }
                    "activity" => {
                        arity(1, 3)?;
                        doc.activities.insert(
                            tokens[0].clone(),
                            Activity {
                                start_time: tokens.get(1).and_then(|t| opt(t)),
                                end_time: tokens.get(2).and_then(|t| opt(t)),
                                attrs,
                            },
                        );
                    }
                    other => {
                        let kind = RelationKind::from_keyword(other)
                            .ok_or_else(|| c.err(&format!("unknown statement `{other}`")))?;
                        arity(2, 3)?;
                        doc.relations.insert(ProvRelation {
                            kind,
                            subject: tokens[0].clone(),
                            object: tokens[1].clone(),
                        });
                    }
                }
            }
        }
    }
    c.skip_ws();
    if c.peek().is_some() {
        return Err(c.err("trailing content after endDocument"));
    }
    Ok(doc)
}
