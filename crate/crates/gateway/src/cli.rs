//! Command-line client. Every subcommand is an API request; it is sent to
//! a running gateway with `--server`, or handled in-process against the
//! configured store otherwise.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use tower::ServiceExt;

use provbase::config::Config;
use provbase::model::{AnalysisState, Params};
use provbase::query::{Constraint, Op};
use provbase::Error as CoreError;

use crate::api::router;
use crate::app::{App, LOCAL_USER};
use crate::docs;
use crate::error::{ErrorBody, GatewayError, Result};
use crate::server;

const POLL: Duration = Duration::from_millis(25);

#[derive(Debug, Parser)]
#[command(name = "provbase", version, about = "Provenance and workflow tracking")]
pub struct Cli {
    /// Service configuration (TOML).
    #[arg(long, env = "PROVBASE_CONFIG", global = true)]
    pub config: Option<PathBuf>,
    /// Event log; overrides `store.log_path`.
    #[arg(long, env = "PROVBASE_STORE", global = true)]
    pub store: Option<PathBuf>,
    /// Base URL of a running gateway, e.g. http://127.0.0.1:8080.
    #[arg(long, env = "PROVBASE_SERVER", global = true)]
    pub server: Option<String>,
    /// Bearer token.
    #[arg(long, env = "PROVBASE_TOKEN", global = true, hide_env_values = true)]
    pub token: Option<String>,
    /// Act as this configured user; its token is read from the configuration.
    #[arg(long = "as", env = "PROVBASE_USER", global = true)]
    pub user: Option<String>,
    #[arg(long, value_enum, default_value_t = Output::Text, global = true)]
    pub output: Output,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Output {
    Text,
    Structured,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    #[command(subcommand)]
    Pipeline(PipelineCmd),
    #[command(subcommand)]
    Dataset(DatasetCmd),
    #[command(subcommand)]
    Analysis(AnalysisCmd),
    #[command(subcommand)]
    Prov(ProvCmd),
    #[command(subcommand)]
    Lineage(LineageCmd),
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PipelineCmd {
    /// Register a pipeline definition, or a new version of an existing one.
    Register {
        file: PathBuf,
        #[arg(long)]
        reason: Option<String>,
    },
    Show {
        id: String,
        #[arg(long)]
        version: Option<u32>,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCmd {
    Register {
        file: PathBuf,
        #[arg(long)]
        reason: Option<String>,
    },
    Show {
        id: String,
    },
    /// Elements whose metadata satisfies every `--where` constraint.
    Query {
        id: String,
        /// `attr OP value`, OP one of = != < <= > >= ~ (contains).
        #[arg(long = "where", short = 'w')]
        constraints: Vec<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum AnalysisCmd {
    Create {
        #[arg(long)]
        pipeline: String,
        #[arg(long)]
        version: Option<u32>,
        #[arg(long)]
        dataset: String,
        /// Element ids; all elements matching `--where` when absent.
        #[arg(long, value_delimiter = ',')]
        elements: Vec<String>,
        #[arg(long = "where", short = 'w')]
        constraints: Vec<String>,
        /// Parameter override `key=value`.
        #[arg(long = "set")]
        set: Vec<String>,
        /// File with `[[steps]]` run once over all successful elements.
        #[arg(long)]
        post_processing: Option<PathBuf>,
    },
    /// Start an analysis and wait for it to finish.
    Run {
        id: String,
        /// Return once started; only with `--server`.
        #[arg(long)]
        no_wait: bool,
    },
    Status {
        id: String,
    },
    List {
        #[arg(long)]
        state: Option<String>,
        #[arg(long)]
        owner: Option<String>,
        #[arg(long)]
        pipeline: Option<String>,
    },
    Jobs {
        id: String,
    },
    Clone {
        id: String,
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        elements: Vec<String>,
    },
    Share {
        id: String,
        grantee: String,
    },
    Annotate {
        id: String,
        text: String,
    },
    /// Change the not-yet-dispatched part of a running analysis.
    Intervene(InterveneArgs),
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("change").required(true).args(["set_param", "skip_step", "cancel_element", "append_step"])))]
pub struct InterveneArgs {
    pub id: String,
    /// `step:key=value`.
    #[arg(long)]
    pub set_param: Option<String>,
    #[arg(long)]
    pub skip_step: Option<String>,
    #[arg(long)]
    pub cancel_element: Option<String>,
    /// File holding one step definition.
    #[arg(long)]
    pub append_step: Option<PathBuf>,
    /// Restrict the change to one element.
    #[arg(long)]
    pub element: Option<String>,
    #[arg(long, default_value = "")]
    pub reason: String,
}

#[derive(Debug, Subcommand)]
pub enum ProvCmd {
    Export {
        analysis: String,
        #[arg(long, default_value = "prov-json")]
        format: String,
        /// Write to a file instead of stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum LineageCmd {
    Show {
        /// `kind:id`, a bare item id, or `pipeline@version`.
        node: String,
        #[arg(long, default_value = "origins")]
        direction: String,
        #[arg(long)]
        depth: Option<usize>,
    },
}

/// Parses `attr OP value`; the value is JSON when it parses as such.
pub fn parse_constraint(s: &str) -> Result<Constraint, CoreError> {
    const OPS: [(&str, Op); 8] = [
        (">=", Op::Gte),
        ("<=", Op::Lte),
        ("!=", Op::Neq),
        ("==", Op::Eq),
        ("=", Op::Eq),
        ("<", Op::Lt),
        (">", Op::Gt),
        ("~", Op::Contains),
    ];
    let (at, sym, op) = (0..s.len())
        .filter(|i| s.is_char_boundary(*i))
        .find_map(|i| {
            OPS.iter()
                .find(|(sym, _)| s[i..].starts_with(sym))
                .map(|(sym, op)| (i, *sym, *op))
        })
        .ok_or_else(|| CoreError::MalformedConstraint(format!("`{s}` has no operator")))?;
    let attr = s[..at].trim();
    let raw = s[at + sym.len()..].trim();
    Ok(Constraint::new(attr, op, scalar(raw)))
}

fn scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()))
}

fn parse_assignments(items: &[String]) -> Result<Params> {
    items
        .iter()
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                GatewayError::BadRequest(format!("expected key=value, got `{kv}`"))
            })?;
            Ok((k.trim().to_owned(), scalar(v.trim())))
        })
        .collect()
}

enum Transport {
    Local(Router),
    Remote { base: String, http: reqwest::Client },
}

struct Client {
    transport: Transport,
    token: Option<String>,
    local: bool,
}

struct Reply {
    status: StatusCode,
    body: Vec<u8>,
}

impl Client {
    async fn send(&self, method: Method, path: &str, body: Option<Value>) -> Result<Reply> {
        let path = format!("/api/v1{path}");
        let payload = body.map(|b| b.to_string()).unwrap_or_default();
        match &self.transport {
            Transport::Local(router) => {
                let mut req = Request::builder().method(method).uri(path);
                if let Some(t) = &self.token {
                    req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
                }
                let req = req
                    .header(header::CONTENT_TYPE, "application/json")
                    .body(Body::from(payload))
                    .map_err(|e| GatewayError::BadRequest(e.to_string()))?;
                let resp = router
                    .clone()
                    .oneshot(req)
                    .await
                    .expect("infallible router");
                let status = resp.status();
                let body = axum::body::to_bytes(resp.into_body(), usize::MAX)
                    .await
                    .map_err(|e| GatewayError::Transport(e.to_string()))?;
                Ok(Reply {
                    status,
                    body: body.to_vec(),
                })
            }
            Transport::Remote { base, http } => {
                let mut req = http
                    .request(method, format!("{}{path}", base.trim_end_matches('/')))
                    .header(header::CONTENT_TYPE, "application/json")
                    .body(payload);
                if let Some(t) = &self.token {
                    req = req.bearer_auth(t);
                }
                let resp = req
                    .send()
                    .await
                    .map_err(|e| GatewayError::Transport(e.to_string()))?;
                let status = resp.status();
                let body = resp
                    .bytes()
                    .await
                    .map_err(|e| GatewayError::Transport(e.to_string()))?;
                Ok(Reply {
                    status,
                    body: body.to_vec(),
                })
            }
        }
    }

    async fn text(&self, method: Method, path: &str, body: Option<Value>) -> Result<String> {
        let reply = self.send(method, path, body).await?;
        if !reply.status.is_success() {
            let err: ErrorBody =
                serde_json::from_slice(&reply.body).unwrap_or_else(|_| ErrorBody {
                    code: "Http".into(),
                    message: String::from_utf8_lossy(&reply.body).into_owned(),
                });
            return Err(GatewayError::Remote {
                status: reply.status.as_u16(),
                code: err.code,
                message: err.message,
            });
        }
        String::from_utf8(reply.body).map_err(|e| GatewayError::Transport(e.to_string()))
    }

    async fn json(&self, method: Method, path: &str, body: Option<Value>) -> Result<Value> {
        let text = self.text(method, path, body).await?;
        serde_json::from_str(&text).map_err(|e| GatewayError::Transport(e.to_string()))
    }

    async fn get(&self, path: &str) -> Result<Value> {
        self.json(Method::GET, path, None).await
    }

    async fn post(&self, path: &str, body: Value) -> Result<Value> {
        self.json(Method::POST, path, Some(body)).await
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(store) = &cli.store {
        config.store.log_path = Some(store.clone());
    }
    Ok(config)
}

fn token_for(cli: &Cli, config: &Config) -> Result<Option<String>> {
    if let Some(t) = &cli.token {
        return Ok(Some(t.clone()));
    }
    match &cli.user {
        Some(u) if config.auth.users.is_empty() && u == LOCAL_USER => Ok(Some(LOCAL_USER.into())),
        Some(u) => config
            .auth
            .users
            .iter()
            .find(|e| &e.id == u)
            .map(|e| Some(e.token.clone()))
            .ok_or_else(|| GatewayError::UnknownActor(u.clone())),
        None => Ok(Some(
            config
                .auth
                .users
                .first()
                .map_or(LOCAL_USER.into(), |u| u.token.clone()),
        )),
    }
}

fn url_encode(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => {
                (b as char).to_string()
            }
            _ => format!("%{b:02X}"),
        })
        .collect()
}

fn query_string(pairs: &[(&str, Option<String>)]) -> String {
    let parts: Vec<String> = pairs
        .iter()
        .filter_map(|(k, v)| v.as_ref().map(|v| format!("{k}={}", url_encode(v))))
        .collect();
    if parts.is_empty() {
        String::new()
    } else {
        format!("?{}", parts.join("&"))
    }
}

/// What a command prints: a structured value plus its text rendering.
struct Printed {
    value: Value,
    text: String,
}

impl Printed {
    fn new(value: Value, text: impl Into<String>) -> Self {
        Printed {
            value,
            text: text.into(),
        }
    }
}

fn s(v: &Value, key: &str) -> String {
    match &v[key] {
        Value::String(x) => x.clone(),
        Value::Null => "-".into(),
        other => other.to_string(),
    }
}

fn render_status(v: &Value) -> String {
    let mut out = format!("analysis {}: {}\n", s(v, "id"), s(v, "state"));
    for e in v["elements"].as_array().into_iter().flatten() {
        out.push_str(&format!(
            "  [{}] {} {}",
            s(e, "index"),
            s(e, "element"),
            s(e, "state")
        ));
        if let Some(err) = e["error"].as_str() {
            out.push_str(&format!(" ({err})"));
        }
        out.push('\n');
    }
    out.push_str(&format!("records: {}", s(v, "records")));
    if let Some(o) = v["outcome"].as_object() {
        out.push_str(&format!(
            "\noutcome: {}",
            o.get("result_link").and_then(Value::as_str).unwrap_or("-")
        ));
    }
    out
}

fn render_analysis(verb: &str, v: &Value) -> String {
    format!(
        "{verb} analysis {} (pipeline {} v{}, {} elements)",
        s(v, "id"),
        s(v, "pipeline"),
        s(v, "pipeline_version"),
        v["element_ids"].as_array().map_or(0, Vec::len)
    )
}

fn is_terminal(v: &Value) -> bool {
    serde_json::from_value::<AnalysisState>(v["state"].clone())
        .is_ok_and(AnalysisState::is_terminal)
}

async fn elements_matching(
    client: &Client,
    dataset: &str,
    constraints: &[String],
) -> Result<Vec<Value>> {
    let constraints = constraints
        .iter()
        .map(|c| parse_constraint(c))
        .collect::<Result<Vec<_>, _>>()?;
    let hits = client
        .post(
            &format!("/datasets/{dataset}/query"),
            json!({ "constraints": constraints }),
        )
        .await?;
    Ok(hits
        .as_array()
        .into_iter()
        .flatten()
        .map(|h| h["id"].clone())
        .collect())
}

async fn execute(client: &Client, command: Command) -> Result<Printed> {
    Ok(match command {
        Command::Pipeline(PipelineCmd::Register { file, reason }) => {
            let spec = docs::load_pipeline(&file)?;
            let q = query_string(&[("reason", reason)]);
            let v = client.post(&format!("/pipelines{q}"), json!(spec)).await?;
            let text = format!(
                "registered pipeline {} as {}, version {}",
                s(&v, "name"),
                s(&v, "id"),
                s(&v, "version")
            );
            Printed::new(v, text)
        }
        Command::Pipeline(PipelineCmd::Show { id, version }) => {
            let (v, spec) = match version {
                Some(n) => {
                    let spec = client.get(&format!("/pipelines/{id}/versions/{n}")).await?;
                    (json!({ "id": id, "version": n, "spec": spec }), spec)
                }
                None => {
                    let v = client.get(&format!("/pipelines/{id}")).await?;
                    let spec = v["spec"].clone();
                    (v, spec)
                }
            };
            let mut text = format!(
                "pipeline {} {} version {}",
                s(&spec, "name"),
                s(&v, "id"),
                s(&v, "version")
            );
            for st in spec["steps"].as_array().into_iter().flatten() {
                text.push_str(&format!("\n  {} {}", s(st, "name"), s(st, "script_ref")));
                if let Some(deps) = st["depends_on"].as_array() {
                    let deps: Vec<&str> = deps.iter().filter_map(Value::as_str).collect();
                    text.push_str(&format!(" after {}", deps.join(",")));
                }
                if !st["fork"].is_null() {
                    text.push_str(&format!(" fork {}", st["fork"]));
                }
            }
            Printed::new(v, text)
        }
        Command::Dataset(DatasetCmd::Register { file, reason }) => {
            let spec = docs::load_dataset(&file)?;
            let q = query_string(&[("reason", reason)]);
            let v = client.post(&format!("/datasets{q}"), json!(spec)).await?;
            let n = v["elements"].as_array().map_or(0, Vec::len);
            let text = format!(
                "registered dataset {} as {} with {n} elements",
                s(&v, "name"),
                s(&v, "id")
            );
            Printed::new(v, text)
        }
        Command::Dataset(DatasetCmd::Show { id }) => {
            let v = client.get(&format!("/datasets/{id}")).await?;
            let n = v["elements"].as_array().map_or(0, Vec::len);
            let text = format!("dataset {} {}: {n} elements", s(&v, "name"), s(&v, "id"));
            Printed::new(v, text)
        }
        Command::Dataset(DatasetCmd::Query { id, constraints }) => {
            let constraints = constraints
                .iter()
                .map(|c| parse_constraint(c))
                .collect::<Result<Vec<_>, _>>()?;
            let v = client
                .post(
                    &format!("/datasets/{id}/query"),
                    json!({ "constraints": constraints }),
                )
                .await?;
            let hits = v.as_array().cloned().unwrap_or_default();
            let mut text: String = hits
                .iter()
                .map(|h| format!("{} {}\n", s(h, "id"), h["metadata"]))
                .collect();
            text.push_str(&format!("{} matching elements", hits.len()));
            Printed::new(v, text)
        }
        Command::Analysis(cmd) => analysis(client, cmd).await?,
        Command::Prov(ProvCmd::Export {
            analysis,
            format,
            out,
        }) => {
            let q = query_string(&[("format", Some(format.clone()))]);
            let text = client
                .text(Method::GET, &format!("/analyses/{analysis}/prov{q}"), None)
                .await?;
            match out {
                Some(path) => {
                    std::fs::write(&path, &text).map_err(CoreError::from)?;
                    let v = json!({ "path": path, "format": format, "bytes": text.len() });
                    Printed::new(
                        v,
                        format!("wrote {} ({} bytes)", path.display(), text.len()),
                    )
                }
                None => Printed::new(Value::String(text.clone()), text.trim_end().to_owned()),
            }
        }
        Command::Lineage(LineageCmd::Show {
            node,
            direction,
            depth,
        }) => {
            let q = query_string(&[
                ("direction", Some(direction)),
                ("depth", depth.map(|d| d.to_string())),
            ]);
            let v = client
                .get(&format!("/lineage/{}{q}", url_encode(&node)))
                .await?;
            let node_name = |n: &Value| format!("{}:{}", s(n, "kind"), s(n, "id"));
            let mut text = format!(
                "lineage of {} ({})",
                node_name(&v["root"]),
                s(&v, "direction")
            );
            for n in v["nodes"].as_array().into_iter().flatten() {
                text.push_str(&format!("\n  node {}", node_name(n)));
            }
            for e in v["edges"].as_array().into_iter().flatten() {
                text.push_str(&format!(
                    "\n  {} -{}-> {}",
                    node_name(&e["from"]),
                    s(e, "relation"),
                    node_name(&e["to"])
                ));
            }
            Printed::new(v, text)
        }
        Command::Serve { .. } => unreachable!("handled before dispatch"),
    })
}

async fn analysis(client: &Client, cmd: AnalysisCmd) -> Result<Printed> {
    Ok(match cmd {
        AnalysisCmd::Create {
            pipeline,
            version,
            dataset,
            elements,
            constraints,
            set,
            post_processing,
        } => {
            let element_ids: Vec<Value> = if elements.is_empty() {
                elements_matching(client, &dataset, &constraints).await?
            } else {
                elements.into_iter().map(Value::String).collect()
            };
            let post = post_processing
                .as_deref()
                .map(docs::load_steps)
                .transpose()?;
            let req = json!({
                "pipeline": pipeline,
                "version": version,
                "dataset": dataset,
                "element_ids": element_ids,
                "overrides": parse_assignments(&set)?,
                "post_processing": post,
            });
            let v = client.post("/analyses", req).await?;
            let text = render_analysis("created", &v);
            Printed::new(v, text)
        }
        AnalysisCmd::Run { id, no_wait } => {
            let started = client
                .post(&format!("/analyses/{id}/run"), json!({}))
                .await?;
            if no_wait && !client.local {
                let text = format!("analysis {id}: {}", s(&started, "state"));
                return Ok(Printed::new(started, text));
            }
            loop {
                let v = client.get(&format!("/analyses/{id}")).await?;
                if is_terminal(&v) && v["active"] != Value::Bool(true) {
                    let text = render_status(&v);
                    break Printed::new(v, text);
                }
                tokio::time::sleep(POLL).await;
            }
        }
        AnalysisCmd::Status { id } => {
            let v = client.get(&format!("/analyses/{id}")).await?;
            let text = render_status(&v);
            Printed::new(v, text)
        }
        AnalysisCmd::List {
            state,
            owner,
            pipeline,
        } => {
            let q = query_string(&[("state", state), ("owner", owner), ("pipeline", pipeline)]);
            let v = client.get(&format!("/analyses{q}")).await?;
            let rows = v.as_array().cloned().unwrap_or_default();
            let text = rows
                .iter()
                .map(|a| {
                    format!(
                        "{} {} owner={} elements={}",
                        s(a, "id"),
                        s(a, "state"),
                        s(a, "owner"),
                        s(a, "elements")
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            Printed::new(v, text)
        }
        AnalysisCmd::Jobs { id } => {
            let v = client.get(&format!("/analyses/{id}/jobs")).await?;
            let text = v
                .as_array()
                .into_iter()
                .flatten()
                .map(|r| {
                    let mut line = format!(
                        "{} {} attempt {} fork {}/{} {} {}ms",
                        s(r, "id"),
                        s(r, "step"),
                        s(r, "attempt"),
                        s(r, "fork_index"),
                        s(r, "fork_width"),
                        s(r, "status"),
                        s(r, "duration_ms")
                    );
                    if let Some(m) = r["error"]["message"].as_str() {
                        line.push_str(&format!(" error: {m}"));
                    }
                    line
                })
                .collect::<Vec<_>>()
                .join("\n");
            Printed::new(v, text)
        }
        AnalysisCmd::Clone { id, set, elements } => {
            let mut changes = serde_json::Map::new();
            if !set.is_empty() {
                changes.insert("overrides".into(), json!(parse_assignments(&set)?));
            }
            if !elements.is_empty() {
                changes.insert("element_ids".into(), json!(elements));
            }
            let v = client
                .post(&format!("/analyses/{id}/clone"), Value::Object(changes))
                .await?;
            let text = render_analysis("cloned", &v);
            Printed::new(v, text)
        }
        AnalysisCmd::Share { id, grantee } => {
            let v = client
                .post(
                    &format!("/analyses/{id}/share"),
                    json!({ "grantee": grantee }),
                )
                .await?;
            let with: Vec<&str> = v["shared_with"]
                .as_array()
                .into_iter()
                .flatten()
                .filter_map(Value::as_str)
                .collect();
            let text = format!("analysis {id} shared with {}", with.join(", "));
            Printed::new(v, text)
        }
        AnalysisCmd::Annotate { id, text } => {
            let v = client
                .post(
                    &format!("/analyses/{id}/annotations"),
                    json!({ "text": text }),
                )
                .await?;
            let text = format!("annotated {id} (seq {})", s(&v, "seq"));
            Printed::new(v, text)
        }
        AnalysisCmd::Intervene(args) => {
            let body = intervention_body(&args)?;
            let v = client
                .post(&format!("/analyses/{}/interventions", args.id), body)
                .await?;
            let n = v["elements"].as_array().map_or(0, Vec::len);
            let text = format!(
                "applied to {n} element(s) of {} (seq {})",
                args.id,
                s(&v, "seq")
            );
            Printed::new(v, text)
        }
    })
}

fn intervention_body(a: &InterveneArgs) -> Result<Value> {
    let mut body = if let Some(spec) = &a.set_param {
        let bad = || GatewayError::BadRequest(format!("expected step:key=value, got `{spec}`"));
        let (step, kv) = spec.split_once(':').ok_or_else(bad)?;
        let (key, value) = kv.split_once('=').ok_or_else(bad)?;
        json!({ "kind": "set_param", "step": step, "key": key, "value": scalar(value.trim()) })
    } else if let Some(step) = &a.skip_step {
        json!({ "kind": "skip_step", "step": step })
    } else if let Some(element) = &a.cancel_element {
        json!({ "kind": "cancel_element", "element": element })
    } else if let Some(file) = &a.append_step {
        let step: provbase::model::StepSpec = docs::load(file)?;
        json!({ "kind": "append_step", "step": step })
    } else {
        return Err(GatewayError::BadRequest("no intervention given".into()));
    };
    if let Some(e) = &a.element {
        if body["kind"] != "cancel_element" {
            body["element"] = json!(e);
        }
    }
    body["reason"] = json!(a.reason);
    Ok(body)
}

fn report_error(output: Output, e: &GatewayError) {
    match output {
        Output::Structured => println!("{}", serde_json::to_string_pretty(&e.body()).unwrap()),
        Output::Text => eprintln!("error: {e} ({})", e.code()),
    }
}

async fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    if let Command::Serve { bind, port } = &cli.command {
        let mut config = config;
        if let Some(b) = bind {
            config.server.bind = b.clone();
        }
        if let Some(p) = port {
            config.server.port = *p;
        }
        let output = cli.output;
        return server::run(config, move |addr| {
            match output {
                Output::Structured => {
                    println!("{}", json!({ "listening": format!("http://{addr}") }))
                }
                Output::Text => println!("listening on http://{addr}"),
            }
            let _ = std::io::stdout().flush();
        })
        .await;
    }
    let token = token_for(&cli, &config)?;
    let (client, app) = match &cli.server {
        Some(base) => {
            let http = reqwest::Client::new();
            (
                Client {
                    transport: Transport::Remote {
                        base: base.clone(),
                        http,
                    },
                    token,
                    local: false,
                },
                None,
            )
        }
        None => {
            let app = App::open(config)?;
            let client = Client {
                transport: Transport::Local(router(app.clone())),
                token,
                local: true,
            };
            (client, Some(app))
        }
    };
    let printed = execute(&client, cli.command).await;
    if let Some(app) = app {
        app.shutdown()?;
    }
    let printed = printed?;
    match cli.output {
        Output::Structured => println!("{}", serde_json::to_string_pretty(&printed.value).unwrap()),
        Output::Text => println!("{}", printed.text),
    }
    Ok(())
}

/// Parses `std::env::args`, runs the command and maps the outcome to an
/// exit status: 0 on success, 1 on a failed operation, 2 on a usage error.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let filter = if matches!(cli.command, Command::Serve { .. }) {
        "info"
    } else {
        "warn"
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("PROVBASE_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(filter)),
        )
        .with_writer(std::io::stderr)
        .init();
    let output = cli.output;
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    match rt.block_on(run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(output, &e);
            ExitCode::from(1)
        }
    }
}
