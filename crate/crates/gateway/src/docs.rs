//! Pipeline, dataset and step definition files. Files ending in `.json`
//! are read as JSON, anything else as TOML.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use provbase::model::{DatasetSpec, PipelineSpec, StepSpec};
use provbase::Error;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::ParseError(format!("{}: {e}", path.display())))?;
    parse(&text, path.extension().is_some_and(|e| e == "json"))
        .map_err(|e| Error::ParseError(format!("{}: {e}", path.display())))
}

fn parse<T: DeserializeOwned>(text: &str, json: bool) -> Result<T, String> {
    if json {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

pub fn load_pipeline(path: &Path) -> Result<PipelineSpec, Error> {
    load(path)
}

pub fn load_dataset(path: &Path) -> Result<DatasetSpec, Error> {
    load(path)
}

/// A file holding `[[steps]]`, used for post-processing.
pub fn load_steps(path: &Path) -> Result<Vec<StepSpec>, Error> {
    #[derive(Deserialize)]
    struct Steps {
        steps: Vec<StepSpec>,
    }
    load::<Steps>(path).map(|s| s.steps)
}
