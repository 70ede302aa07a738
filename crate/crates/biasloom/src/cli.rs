//! Command-line front end. Every data command turns its file and flags into
//! the same JSON request the HTTP service accepts and hands it to
//! [`Engine::run`], so both transports produce identical documents.

use std::path::{Path, PathBuf};

use biasloom_core::interface::{parse_set, write_examples, Engine, EngineError, ErrorCode, Operation};
use clap::{Parser, Subcommand};
use serde_json::{json, Map, Value};

/// Exit status for command-line usage errors.
pub const EXIT_USAGE: i32 = 64;
/// Exit status when an input file cannot be opened.
pub const EXIT_NO_INPUT: i32 = 66;

#[derive(Debug, Parser)]
#[command(name = "biasloom", version, about = "Bias-adjusted Bayesian analysis of reported studies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a study file and print its normalized form.
    Validate { file: PathBuf },
    /// List the biases that apply to a study, with their default priors.
    Prune { file: PathBuf },
    /// Run the bias-adjusted analysis of a study or analysis request.
    Analyze {
        file: PathBuf,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        resolution: Option<usize>,
        /// Decision problem file.
        #[arg(long)]
        decision: Option<PathBuf>,
        /// Prior override, e.g. `withdrawal_bias.phi=beta(2,8)`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Return marginals at full grid resolution.
        #[arg(long)]
        full_grids: bool,
    },
    /// Pool several studies, or run one meta request file.
    Meta {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        full_grids: bool,
    },
    /// Find the prior mean at which the recommendation changes.
    Flip {
        file: PathBuf,
        #[arg(long, value_parser = ["mean"])]
        family: Option<String>,
        #[arg(long)]
        ess: Option<f64>,
        #[arg(long)]
        lo: Option<f64>,
        #[arg(long)]
        hi: Option<f64>,
        /// Arm whose prior is varied (default: first treated arm).
        #[arg(long)]
        arm: Option<String>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        decision: Option<PathBuf>,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Evaluate the decision under every model of an ensemble.
    Sweep {
        file: PathBuf,
        #[arg(long)]
        decision: Option<PathBuf>,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Write the bundled example files into a directory.
    Examples { dir: PathBuf },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

/// A failed command: exit status plus the text for the diagnostic stream.
#[derive(Debug)]
pub struct Failure {
    pub exit_code: i32,
    pub message: String,
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        Self {
            exit_code: e.code.exit_code(),
            message: e.to_document(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        exit_code: EXIT_USAGE,
        message: message.into(),
    }
}

/// What a data command asks the engine to do.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub operation: Operation,
    pub body: String,
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure {
        exit_code: EXIT_NO_INPUT,
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    serde_json::from_str(&text).map_err(|e| {
        EngineError::new(ErrorCode::MalformedInput, format!("{}: malformed JSON: {e}", path.display())).into()
    })
}

/// An analysis-style request object: a bare study is wrapped as `{"study": ...}`.
fn request_object(path: &Path) -> Result<Map<String, Value>, Failure> {
    match read_json(path)? {
        Value::Object(m) if m.contains_key("study") => Ok(m),
        other => {
            let mut m = Map::new();
            m.insert("study".into(), other);
            Ok(m)
        }
    }
}

fn study_value(path: &Path) -> Result<Value, Failure> {
    Ok(request_object(path)?.remove("study").expect("request has a study"))
}

fn set_opt<T: Into<Value>>(obj: &mut Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        obj.insert(key.into(), v.into());
    }
}

fn set_decision(obj: &mut Map<String, Value>, path: Option<&Path>) -> Result<(), Failure> {
    if let Some(p) = path {
        obj.insert("decision".into(), read_json(p)?);
    }
    Ok(())
}

impl Command {
    /// Builds the engine request for a data command; `None` for commands
    /// that do not go through the engine.
    pub fn invocation(&self) -> Result<Option<Invocation>, Failure> {
        let (operation, body) = match self {
            Command::Validate { file } => (Operation::Validate, study_value(file)?),
            Command::Prune { file } => (Operation::Prune, study_value(file)?),
            Command::Analyze {
                file,
                kappa,
                resolution,
                decision,
                set,
                full_grids,
            } => {
                let mut req = request_object(file)?;
                set_opt(&mut req, "kappa", *kappa);
                set_opt(&mut req, "resolution", *resolution);
                set_decision(&mut req, decision.as_deref())?;
                if *full_grids {
                    req.insert("full_grids".into(), true.into());
                }
                if !set.is_empty() {
                    let overrides = req
                        .entry("kb_overrides")
                        .or_insert_with(|| Value::Object(Map::new()))
                        .as_object_mut()
                        .ok_or_else(|| usage("kb_overrides in the request file must be an object"))?;
                    for arg in set {
                        let (key, spec) = parse_set(arg).map_err(usage)?;
                        overrides.insert(key, serde_json::to_value(spec).expect("priors serialize"));
                    }
                }
                (Operation::Analyze, Value::Object(req))
            }
            Command::Meta {
                files,
                resolution,
                full_grids,
            } => {
                let mut req = match files.as_slice() {
                    [one] => match read_json(one)? {
                        Value::Object(m) if m.contains_key("studies") => m,
                        other => meta_of(vec![wrap_study(other)]),
                    },
                    many => meta_of(
                        many.iter()
                            .map(|f| read_json(f).map(wrap_study))
                            .collect::<Result<_, _>>()?,
                    ),
                };
                set_opt(&mut req, "resolution", *resolution);
                if *full_grids {
                    req.insert("full_grids".into(), true.into());
                }
                (Operation::Meta, Value::Object(req))
            }
            Command::Flip {
                file,
                family,
                ess,
                lo,
                hi,
                arm,
                kappa,
                decision,
                resolution,
            } => {
                let mut req = request_object(file)?;
                if family.is_some() || ess.is_some() || arm.is_some() {
                    let mut fam = match req.remove("family") {
                        Some(Value::Object(m)) => m,
                        _ => Map::new(),
                    };
                    fam.insert("family".into(), family.clone().unwrap_or_else(|| "mean".into()).into());
                    set_opt(&mut fam, "ess", *ess);
                    set_opt(&mut fam, "arm", arm.clone());
                    req.insert("family".into(), Value::Object(fam));
                }
                for (key, v) in [("family", None), ("lo", *lo), ("hi", *hi)] {
                    set_opt(&mut req, key, v);
                    if !req.contains_key(key) {
                        return Err(usage(format!("flip needs --{} (or `{key}` in the request file)", flag(key))));
                    }
                }
                set_opt(&mut req, "kappa", *kappa);
                set_opt(&mut req, "resolution", *resolution);
                set_decision(&mut req, decision.as_deref())?;
                (Operation::Flip, Value::Object(req))
            }
            Command::Sweep {
                file,
                decision,
                resolution,
            } => {
                let mut req = match read_json(file)? {
                    Value::Object(m) => m,
                    _ => return Err(usage("a sweep file must be a JSON object with `study` and `ensemble`")),
                };
                set_opt(&mut req, "resolution", *resolution);
                set_decision(&mut req, decision.as_deref())?;
                (Operation::Sweep, Value::Object(req))
            }
            Command::Examples { .. } | Command::Serve { .. } => return Ok(None),
        };
        Ok(Some(Invocation {
            operation,
            body: body.to_string(),
        }))
    }
}

fn flag(key: &str) -> &str {
    if key == "family" {
        "ess"
    } else {
        key
    }
}

fn wrap_study(v: Value) -> Value {
    match v {
        Value::Object(m) if m.contains_key("study") => Value::Object(m),
        other => json!({ "study": other }),
    }
}

fn meta_of(studies: Vec<Value>) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("studies".into(), Value::Array(studies));
    m
}

/// Runs a non-serving command and returns the document for the data stream.
pub fn execute(command: &Command, engine: &Engine) -> Result<String, Failure> {
    if let Command::Examples { dir } = command {
        let written = write_examples(dir).map_err(|e| Failure {
            exit_code: 73,
            message: format!("cannot write examples to {}: {e}", dir.display()),
        })?;
        return Ok(written.iter().map(|n| format!("{}\n", dir.join(n).display())).collect());
    }
    let inv = command
        .invocation()?
        .ok_or_else(|| usage("this command does not produce a document"))?;
    Ok(engine.run(inv.operation, &inv.body)?)
}
