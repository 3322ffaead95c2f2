use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde_json::{json, Map, Value};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error(transparent)]
    Core(#[from] cprank::Error),
}

impl CliError {
    /// 2 for schema problems, 3 for rejected inputs, 4 for failed pipeline steps.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Read { .. } | CliError::Schema(_) => 2,
            CliError::Write { .. } => 1,
            CliError::Precondition(_) => 3,
            CliError::Core(e) => match e {
                cprank::Error::PipelineStep { .. }
                | cprank::Error::Numerical(_)
                | cprank::Error::SamplingExhausted { .. } => 4,
                _ => 3,
            },
        }
    }

    pub fn to_json(&self) -> String {
        let mut v = json!({
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        });
        if let CliError::Core(cprank::Error::PipelineStep { step, detail }) = self {
            v["step"] = json!(step);
            v["detail"] = json!(detail);
        }
        json!({ "error": v }).to_string()
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Top-level keys of all input files; a key given twice is a schema error.
pub struct Inputs {
    fields: Map<String, Value>,
    pub documents: Vec<Value>,
}

impl Inputs {
    pub fn read(paths: &[PathBuf]) -> Result<Self> {
        let mut fields = Map::new();
        let mut documents = Vec::with_capacity(paths.len());
        for path in paths {
            let text = fs::read_to_string(path).map_err(|source| CliError::Read {
                path: path.clone(),
                source,
            })?;
            let doc: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
            let Value::Object(obj) = &doc else {
                return Err(CliError::Schema(format!(
                    "{}: top level must be an object",
                    path.display()
                )));
            };
            for (k, v) in obj {
                if fields.insert(k.clone(), v.clone()).is_some() {
                    return Err(CliError::Schema(format!(
                        "key `{k}` given by more than one input"
                    )));
                }
            }
            documents.push(doc);
        }
        Ok(Inputs { fields, documents })
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .fields
            .get(key)
            .ok_or_else(|| CliError::Schema(format!("missing key `{key}`")))?;
        parse(key, v)
    }

    pub fn get_opt<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        match self.fields.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => parse(key, v).map(Some),
        }
    }
}

pub fn parse<T: DeserializeOwned>(key: &str, v: &Value) -> Result<T> {
    T::deserialize(v).map_err(|e| CliError::Schema(format!("`{key}`: {e}")))
}

pub fn write_report(out: Option<&Path>, report: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| CliError::Schema(format!("cannot encode report: {e}")))?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Write {
            path: path.to_path_buf(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
