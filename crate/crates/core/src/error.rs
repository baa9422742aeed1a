use thiserror::Error;

use crate::kernel::{ItemId, Seq};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown item {0}")]
    UnknownItem(ItemId),
    #[error("unknown description {0}")]
    UnknownDescription(ItemId),
    #[error("invalid kind: {0}")]
    InvalidKind(String),
    #[error("illegal transition: {0}")]
    IllegalTransition(String),
    #[error("seq {as_of} precedes creation of {item} (created at seq {created})")]
    SeqBeforeCreation {
        item: ItemId,
        as_of: Seq,
        created: Seq,
    },
    #[error("corrupt log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("data element #{0} has no files")]
    EmptyElement(usize),
    #[error("unknown pipeline {0}")]
    UnknownPipeline(ItemId),
    #[error("pipeline {pipeline} has no version {version}")]
    UnknownVersion { pipeline: ItemId, version: u32 },
    #[error("unknown dataset {0}")]
    UnknownDataset(ItemId),
    #[error("data element {0} is not part of the dataset")]
    ElementNotInDataset(ItemId),
    #[error("required parameter `{0}` has no value")]
    MissingRequiredParam(String),
    #[error("{0} is not visible to this actor")]
    NotVisible(ItemId),
    #[error("only the owner may do this to {0}")]
    NotOwner(ItemId),
    #[error("unknown analysis {0}")]
    UnknownAnalysis(ItemId),

    #[error("analysis {0} is already running")]
    AlreadyRunning(ItemId),
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("analysis {0} still has running elements")]
    ElementsStillRunning(ItemId),
    #[error("step `{0}` has already been dispatched")]
    StepAlreadyDispatched(String),
    #[error("invalid modification: {0}")]
    InvalidModification(String),

    #[error("malformed constraint: {0}")]
    MalformedConstraint(String),
    #[error("unknown lineage node {0}")]
    UnknownNode(String),
    #[error("unknown usage target {0}")]
    UnknownTarget(String),

    #[error("analysis {0} is not terminal")]
    NotTerminal(ItemId),
    #[error("parse error: {0}")]
    ParseError(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    /// Stable machine-readable code, used in gateway error bodies and CLI output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnknownItem(_) => "UnknownItem",
            Error::UnknownDescription(_) => "UnknownDescription",
            Error::InvalidKind(_) => "InvalidKind",
            Error::IllegalTransition(_) => "IllegalTransition",
            Error::SeqBeforeCreation { .. } => "SeqBeforeCreation",
            Error::CorruptLog { .. } => "CorruptLog",
            Error::Io(_) => "Io",
            Error::ValidationFailed(_) => "ValidationFailed",
            Error::EmptyElement(_) => "EmptyElement",
            Error::UnknownPipeline(_) => "UnknownPipeline",
            Error::UnknownVersion { .. } => "UnknownVersion",
            Error::UnknownDataset(_) => "UnknownDataset",
            Error::ElementNotInDataset(_) => "ElementNotInDataset",
            Error::MissingRequiredParam(_) => "MissingRequiredParam",
            Error::NotVisible(_) => "NotVisible",
            Error::NotOwner(_) => "NotOwner",
            Error::UnknownAnalysis(_) => "UnknownAnalysis",
            Error::AlreadyRunning(_) => "AlreadyRunning",
            Error::UnknownJob(_) => "UnknownJob",
            Error::ElementsStillRunning(_) => "ElementsStillRunning",
            Error::StepAlreadyDispatched(_) => "StepAlreadyDispatched",
            Error::InvalidModification(_) => "InvalidModification",
            Error::MalformedConstraint(_) => "MalformedConstraint",
            Error::UnknownNode(_) => "UnknownNode",
            Error::UnknownTarget(_) => "UnknownTarget",
            Error::NotTerminal(_) => "NotTerminal",
            Error::ParseError(_) => "ParseError",
            Error::Config(_) => "Config",
        }
    }
}
