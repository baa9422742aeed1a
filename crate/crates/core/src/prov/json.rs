use serde_json::{json, Map, Value};

use super::{Activity, AttrValue, Attrs, ProvDocument, ProvRelation, RelationKind};
use crate::error::{Error, Result};

const QNAME: &str = "prov:QUALIFIED_NAME";
const START: &str = "prov:startTime";
const END: &str = "prov:endTime";

fn value_json(v: &AttrValue) -> Value {
    match v {
        AttrValue::Literal(s) => Value::String(s.clone()),
        AttrValue::QName(q) => json!({ "$": q, "type": QNAME }),
    }
}

fn attrs_json(attrs: &Attrs, out: &mut Map<String, Value>) {
    for (k, vs) in attrs {
        let v = match vs.len() {
            1 => value_json(vs.iter().next().expect("one value")),
            _ => Value::Array(vs.iter().map(value_json).collect()),
        };
        out.insert(k.clone(), v);
    }
}

pub fn to_prov_json(doc: &ProvDocument) -> String {
    let mut root = Map::new();
    root.insert(
        "prefix".into(),
        Value::Object(
            doc.prefixes
                .iter()
                .map(|(k, v)| (k.clone(), Value::String(v.clone())))
                .collect(),
        ),
    );
    let section = |m: &std::collections::BTreeMap<String, Attrs>| {
        Value::Object(
            m.iter()
                .map(|(id, a)| {
                    let mut o = Map::new();
                    attrs_json(a, &mut o);
                    (id.clone(), Value::Object(o))
                })
                .collect(),
        )
    };
    if !doc.entities.is_empty() {
        root.insert("entity".into(), section(&doc.entities));
    }
    if !doc.activities.is_empty() {
        let acts = doc
            .activities
            .iter()
            .map(|(id, a)| {
                let mut o = Map::new();
                if let Some(t) = &a.start_time {
                    o.insert(START.into(), Value::String(t.clone()));
                }
                if let Some(t) = &a.end_time {
                    o.insert(END.into(), Value::String(t.clone()));
                }
                attrs_json(&a.attrs, &mut o);
                (id.clone(), Value::Object(o))
            })
            .collect();
        root.insert("activity".into(), Value::Object(acts));
    }
    if !doc.agents.is_empty() {
        root.insert("agent".into(), section(&doc.agents));
    }
    for kind in RelationKind::ALL {
        let (f1, f2) = kind.json_fields();
        let rels: Map<String, Value> = doc
            .relations
            .iter()
            .filter(|r| r.kind == kind)
            .enumerate()
            .map(|(n, r)| {
                (
                    format!("_:{}-{}", kind.keyword(), n + 1),
                    json!({ f1: r.subject, f2: r.object }),
                )
            })
            .collect();
        if !rels.is_empty() {
            root.insert(kind.keyword().into(), Value::Object(rels));
        }
    }
    let mut s = serde_json::to_string_pretty(&Value::Object(root)).expect("json values serialize");
    s.push('\n');
    s
}

fn bad(msg: impl Into<String>) -> Error {
    Error::ParseError(msg.into())
}

fn object<'a>(v: &'a Value, what: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| bad(format!("{what} must be an object")))
}

fn parse_value(v: &Value) -> Result<AttrValue> {
    match v {
        Value::String(s) => Ok(AttrValue::Literal(s.clone())),
        Value::Number(n) => Ok(AttrValue::Literal(n.to_string())),
        Value::Bool(b) => Ok(AttrValue::Literal(b.to_string())),
        Value::Object(o) => {
            let s = o
                .get("$")
                .and_then(Value::as_str)
                .ok_or_else(|| bad("typed value without `$`"))?;
            Ok(match o.get("type").and_then(Value::as_str) {
                Some(QNAME) => AttrValue::QName(s.to_owned()),
                _ => AttrValue::Literal(s.to_owned()),
            })
        }
        _ => Err(bad(format!("unsupported attribute value {v}"))),
    }
}

fn parse_attrs(o: &Map<String, Value>, skip: &[&str]) -> Result<Attrs> {
    let mut out = Attrs::new();
    for (k, v) in o.iter().filter(|(k, _)| !skip.contains(&k.as_str())) {
        let set = out.entry(k.clone()).or_default();
        match v {
            Value::Array(vs) => {
                for v in vs {
                    set.insert(parse_value(v)?);
                }
            }
            v => {
                set.insert(parse_value(v)?);
            }
        }
    }
    Ok(out)
}

pub fn parse_prov_json(text: &str) -> Result<ProvDocument> {
    let root: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let root = object(&root, "document")?;
    let mut doc = ProvDocument::default();
    for (key, v) in root {
        let sec = object(v, key)?;
        match key.as_str() {
            "prefix" => {
                for (p, uri) in sec {
                    let uri = uri
                        .as_str()
                        .ok_or_else(|| bad("prefix URI must be a string"))?;
                    doc.prefixes.insert(p.clone(), uri.to_owned());
                }
            }
            "entity" | "agent" => {
                for (id, a) in sec {
                    let a = parse_attrs(object(a, id)?, &[])?;
                    let target = if key == "entity" {
                        &mut doc.entities
                    } else {
                        &mut doc.agents
                    };
                    target.insert(id.clone(), a);
                }
            }
            "activity" => {
                for (id, a) in sec {
                    let o = object(a, id)?;
                    let time = |k: &str| -> Result<Option<String>> {
                        o.get(k)
                            .map(|t| {
                                t.as_str()
                                    .map(str::to_owned)
                                    .ok_or_else(|| bad(format!("{k} must be a string")))
                            })
                            .transpose()
                    };
                    doc.activities.insert(
                        id.clone(),
                        Activity {
                            start_time: time(START)?,
                            end_time: time(END)?,
                            attrs: parse_attrs(o, &[START, END])?,
                        },
                    );
                }
            }
            other => {
                let kind = RelationKind::from_keyword(other)
                    .ok_or_else(|| bad(format!("unknown section `{other}`")))?;
                let (f1, f2) = kind.json_fields();
                for (id, r) in sec {
                    let o = object(r, id)?;
                    let arg = |f: &str| {
                        o.get(f)
                            .and_then(Value::as_str)
                            .map(str::to_owned)
                            .ok_or_else(|| bad(format!("{other} {id} lacks {f}")))
                    };
                    doc.relations.insert(ProvRelation {
                        kind,
                        subject: arg(f1)?,
                        object: arg(f2)?,
                    });
                }
            }
        }
    }
    Ok(doc)
}
