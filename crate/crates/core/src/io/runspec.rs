//! Run specification files (JSON).
//!
//! ```json
//! {
//!   "schema": "broyden-lm.runspec.v1",
//!   "model": "exponential_decay",
//!   "dataset": "decay.csv",
//!   "beta0": [1.0, 0.5],
//!   "bounds": [[0, null], null],
//!   "weights": "column",
//!   "solver": { "epsilon": 1e-6, "max_iterations": 500 }
//! }
//! ```
//!
//! `model` is `"linear"`, `"exponential_decay"`, `"logistic"` or
//! `{"kind": "polynomial", "degree": d}`; `dataset` is a path relative to the
//! spec file or an inline `{"x": ..., "y": ..., "weights": ...}` object.
//! An external model replaces both with
//! `"external": {"command": [...], "working_dir": ..., "timeout_secs": ...}`.

use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use super::{load_dataset, DataIoError};
use crate::fd::FdScheme;
use crate::model::{AnalyticModel, Dataset, DatasetModel, ExternalEvaluatorSpec};
use crate::nlls::{NllsError, ParameterVector, SolverConfig, WeightMatrix};

pub const RUNSPEC_SCHEMA: &str = "broyden-lm.runspec.v1";

const TOP_KEYS: &[&str] = &[
    "schema", "model", "dataset", "external", "beta0", "bounds", "solver", "weights",
];
const SOLVER_KEYS: &[&str] = &[
    "epsilon",
    "armijo_c",
    "alpha_min",
    "lambda_init",
    "lambda_decrease",
    "lambda_increase",
    "perturbation_rel",
    "perturbation_abs",
    "max_iterations",
    "max_p_norm",
    "fd_refresh_period",
    "fd_scheme",
    "fd_h_rel",
    "fd_h_abs",
    "diagnostics",
    "verify_determinism",
];

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Analytic {
        model: AnalyticModel,
        dataset: Dataset<f64>,
        /// File the dataset came from, when not inline.
        dataset_path: Option<PathBuf>,
    },
    External(ExternalEvaluatorSpec),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightSpec {
    None,
    /// Weights from the dataset's weight column.
    Column,
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub model: ModelSpec,
    pub beta0: Option<Vec<f64>>,
    pub bounds: Option<Vec<(Option<f64>, Option<f64>)>>,
    pub solver: SolverConfig<f64>,
    pub weights: WeightSpec,
}

impl RunSpec {
    /// Parameter count implied by the model, `beta0` or `bounds`.
    pub fn param_count(&self) -> Result<usize, DataIoError> {
        if let Some(b) = &self.beta0 {
            return Ok(b.len());
        }
        match &self.model {
            ModelSpec::Analytic { model, dataset, .. } => model
                .param_count(dataset.dim())
                .map_err(|e| DataIoError::config("model", e.to_string())),
            ModelSpec::External(_) => self.bounds.as_ref().map(Vec::len).ok_or_else(|| {
                DataIoError::config(
                    "beta0",
                    "external models need `beta0` or `bounds` to fix the parameter count",
                )
            }),
        }
    }

    /// Starting parameters with bounds. Without `beta0` every parameter
    /// starts at zero, clamped into its bounds.
    pub fn initial_parameters(&self) -> Result<ParameterVector<f64>, DataIoError> {
        let n = self.param_count()?;
        let (lower, upper): (Vec<_>, Vec<_>) = match &self.bounds {
            Some(b) if b.len() != n => {
                return Err(DataIoError::config(
                    "bounds",
                    format!("{} bounds for {n} parameters", b.len()),
                ))
            }
            Some(b) => b.iter().copied().unzip(),
            None => (vec![None; n], vec![None; n]),
        };
        let explicit = self.beta0.is_some();
        let mut values = self.beta0.clone().unwrap_or_else(|| vec![0.0; n]);
        if !explicit {
            for (j, v) in values.iter_mut().enumerate() {
                *v = v.max(lower[j].unwrap_or(f64::NEG_INFINITY)).min(upper[j].unwrap_or(f64::INFINITY));
            }
        }
        ParameterVector::with_bounds(values, lower, upper).map_err(|e| match e {
            NllsError::Config { key, reason } => DataIoError::config(key, reason),
            other => DataIoError::config("bounds", other.to_string()),
        })
    }

    /// Weight matrix for `m` residuals.
    pub fn weight_matrix(&self, m: usize) -> Result<Option<WeightMatrix<f64>>, DataIoError> {
        let wm = match (self.weights, &self.model) {
            (WeightSpec::None, _) => return Ok(None),
            (WeightSpec::Column, ModelSpec::Analytic { dataset, .. }) => {
                let w = dataset.weights().ok_or_else(|| {
                    DataIoError::config("weights", "dataset has no weight column")
                })?;
                WeightMatrix::new(w.to_vec())
            }
            (WeightSpec::Column, ModelSpec::External(_)) => {
                return Err(DataIoError::config(
                    "weights",
                    "external models have no dataset weight column",
                ))
            }
            (WeightSpec::Uniform(v), _) => WeightMatrix::uniform(m, v),
        };
        wm.map(Some)
            .map_err(|e| DataIoError::config("weights", e.to_string()))
    }

    /// The analytic model bound to its data, if this is an analytic spec.
    pub fn dataset_model(&self) -> Option<DatasetModel<f64>> {
        match &self.model {
            ModelSpec::Analytic { model, dataset, .. } => {
                DatasetModel::new(*model, dataset.clone()).ok()
            }
            ModelSpec::External(_) => None,
        }
    }
}

/// Reads and validates a run specification. Unknown keys are logged as
/// warnings; relative dataset paths resolve against the spec's directory.
pub fn load_runspec(path: impl AsRef<Path>) -> Result<RunSpec, DataIoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let (spec, warnings) = parse_runspec(&text, base)?;
    for w in warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(spec)
}

/// Parses a run specification, returning it with any warnings about
/// unrecognized keys.
pub fn parse_runspec(text: &str, base_dir: &Path) -> Result<(RunSpec, Vec<String>), DataIoError> {
    let root: Value = serde_json::from_str(text).map_err(|e| DataIoError::Parse {
        source_name: "runspec".into(),
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let obj = root
        .as_object()
        .ok_or_else(|| DataIoError::config("runspec", "top level must be an object"))?;
    let mut warnings = unknown_keys(obj, TOP_KEYS, "");

    if let Some(schema) = obj.get("schema") {
        if schema.as_str() != Some(RUNSPEC_SCHEMA) {
            return Err(DataIoError::config(
                "schema",
                format!("expected \"{RUNSPEC_SCHEMA}\""),
            ));
        }
    }

    let model = match (obj.get("model"), obj.get("external")) {
        (Some(_), Some(_)) => {
            return Err(DataIoError::config(
                "model",
                "give either an analytic model with a dataset or an external command, not both",
            ))
        }
        (None, None) => {
            return Err(DataIoError::config("model", "a model or external command is required"))
        }
        (Some(m), None) => {
            let model = parse_model(m)?;
            let (dataset, dataset_path) = match obj.get("dataset") {
                None => return Err(DataIoError::config("dataset", "analytic models need a dataset")),
                Some(Value::String(p)) => {
                    let full = base_dir.join(p);
                    (load_dataset(&full)?, Some(full))
                }
                Some(inline) => (parse_inline_dataset(inline)?, None),
            };
            DatasetModel::new(model, dataset.clone())
                .map_err(|e| DataIoError::config("model", e.to_string()))?;
            ModelSpec::Analytic {
                model,
                dataset,
                dataset_path,
            }
        }
        (None, Some(ext)) => {
            if obj.contains_key("dataset") {
                warnings.push("`dataset` is ignored for external models".into());
            }
            let mut spec: ExternalEvaluatorSpec = serde_json::from_value(ext.clone())
                .map_err(|e| DataIoError::config("external", e.to_string()))?;
            if let Some(dir) = &spec.working_dir {
                spec.working_dir = Some(base_dir.join(dir));
            }
            spec.validate()
                .map_err(|(k, why)| DataIoError::config(k, why))?;
            ModelSpec::External(spec)
        }
    };

    let beta0 = match obj.get("beta0") {
        None | Some(Value::Null) => None,
        Some(v) => Some(real_array(v, "beta0")?),
    };
    let bounds = match obj.get("bounds") {
        None | Some(Value::Null) => None,
        Some(v) => Some(parse_bounds(v)?),
    };
    let weights = match obj.get("weights") {
        None | Some(Value::Null) => WeightSpec::None,
        Some(Value::String(s)) if s == "none" => WeightSpec::None,
        Some(Value::String(s)) if s == "column" => WeightSpec::Column,
        Some(Value::Object(o)) if o.len() == 1 && o.contains_key("uniform") => {
            let v = real(&o["uniform"], "weights")?;
            if !(v > 0.0) {
                return Err(DataIoError::config("weights", "uniform weight must be positive"));
            }
            WeightSpec::Uniform(v)
        }
        Some(_) => {
            return Err(DataIoError::config(
                "weights",
                "expected \"none\", \"column\" or {\"uniform\": <positive real>}",
            ))
        }
    };

    let mut solver = SolverConfig::default();
    if let Some(s) = obj.get("solver") {
        let s = s
            .as_object()
            .ok_or_else(|| DataIoError::config("solver", "must be an object"))?;
        warnings.extend(unknown_keys(s, SOLVER_KEYS, "solver."));
        apply_solver_overrides(&mut solver, s)?;
    }
    solver.validate().map_err(|e| match e {
        NllsError::Config { key, reason } => DataIoError::config(key, reason),
        other => DataIoError::config("solver", other.to_string()),
    })?;

    let spec = RunSpec {
        model,
        beta0,
        bounds,
        solver,
        weights,
    };
    // Surface parameter-count and bound problems at load time.
    spec.initial_parameters()?;
    if let ModelSpec::Analytic { model, dataset, .. } = &spec.model {
        let n = model.param_count(dataset.dim()).unwrap_or(0);
        if spec.param_count()? != n {
            return Err(DataIoError::config(
                "beta0",
                format!("{} model takes {n} parameters", model.name()),
            ));
        }
        spec.weight_matrix(dataset.len())?;
    } else if spec.weights != WeightSpec::None {
        return Err(DataIoError::config(
            "weights",
            "external models are fitted unweighted; fold weights into the residuals",
        ));
    }
    Ok((spec, warnings))
}

fn unknown_keys(obj: &Map<String, Value>, known: &[&str], prefix: &str) -> Vec<String> {
    obj.keys()
        .filter(|k| !known.contains(&k.as_str()))
        .map(|k| format!("unknown key `{prefix}{k}` ignored"))
        .collect()
}

fn real(v: &Value, key: &str) -> Result<f64, DataIoError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| DataIoError::config(key, "expected a finite number"))
}

fn opt_real(v: &Value, key: &str) -> Result<Option<f64>, DataIoError> {
    if v.is_null() {
        Ok(None)
    } else {
        real(v, key).map(Some)
    }
}

fn real_array(v: &Value, key: &str) -> Result<Vec<f64>, DataIoError> {
    v.as_array()
        .ok_or_else(|| DataIoError::config(key, "expected an array of numbers"))?
        .iter()
        .map(|x| real(x, key))
        .collect()
}

fn parse_model(v: &Value) -> Result<AnalyticModel, DataIoError> {
    let bad = || {
        DataIoError::config(
            "model",
            "expected \"linear\", \"exponential_decay\", \"logistic\" or {\"kind\": \"polynomial\", \"degree\": d}",
        )
    };
    match v {
        Value::String(s) => match s.as_str() {
            "linear" => Ok(AnalyticModel::Linear),
            "exponential_decay" => Ok(AnalyticModel::ExponentialDecay),
            "logistic" => Ok(AnalyticModel::Logistic),
            "constant" => Ok(AnalyticModel::Polynomial { degree: 0 }),
            _ => Err(bad()),
        },
        Value::Object(_) => serde_json::from_value(v.clone()).map_err(|_| bad()),
        _ => Err(bad()),
    }
}

fn parse_inline_dataset(v: &Value) -> Result<Dataset<f64>, DataIoError> {
    let obj = v
        .as_object()
        .ok_or_else(|| DataIoError::config("dataset", "expected a path or an inline object"))?;
    let y = real_array(obj.get("y").unwrap_or(&Value::Null), "dataset.y")?;
    let x_val = obj
        .get("x")
        .and_then(Value::as_array)
        .ok_or_else(|| DataIoError::config("dataset.x", "expected an array"))?;
    let x = x_val
        .iter()
        .map(|row| match row {
            Value::Array(_) => real_array(row, "dataset.x"),
            other => real(other, "dataset.x").map(|v| vec![v]),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let weights = match obj.get("weights") {
        None | Some(Value::Null) => None,
        Some(w) => Some(real_array(w, "dataset.weights")?),
    };
    Dataset::new(x, y, weights).map_err(|e| DataIoError::config("dataset", e.to_string()))
}

fn parse_bounds(v: &Value) -> Result<Vec<(Option<f64>, Option<f64>)>, DataIoError> {
    let arr = v
        .as_array()
        .ok_or_else(|| DataIoError::config("bounds", "expected an array"))?;
    arr.iter()
        .map(|b| match b {
            Value::Null => Ok((None, None)),
            Value::Array(pair) if pair.len() == 2 => {
                Ok((opt_real(&pair[0], "bounds")?, opt_real(&pair[1], "bounds")?))
            }
            _ => Err(DataIoError::config(
                "bounds",
                "each entry must be null or [lower|null, upper|null]",
            )),
        })
        .collect()
}

fn apply_solver_overrides(cfg: &mut SolverConfig<f64>, s: &Map<String, Value>) -> Result<(), DataIoError> {
    let positive_int = |key: &str, v: &Value| {
        v.as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| DataIoError::config(key, "expected a non-negative integer"))
    };
    let boolean = |key: &str, v: &Value| {
        v.as_bool()
            .ok_or_else(|| DataIoError::config(key, "expected true or false"))
    };
    for (key, v) in s {
        let k = key.as_str();
        match k {
            "epsilon" => cfg.epsilon = real(v, k)?,
            "armijo_c" => cfg.armijo_c = real(v, k)?,
            "alpha_min" => cfg.alpha_min = real(v, k)?,
            "lambda_init" => cfg.lambda_init = real(v, k)?,
            "lambda_decrease" => cfg.lambda_decrease = real(v, k)?,
            "lambda_increase" => cfg.lambda_increase = real(v, k)?,
            "perturbation_rel" => cfg.perturbation_rel = real(v, k)?,
            "perturbation_abs" => cfg.perturbation_abs = real(v, k)?,
            "max_iterations" => cfg.max_iterations = positive_int(k, v)?,
            "max_p_norm" => cfg.max_p_norm = opt_real(v, k)?,
            "fd_refresh_period" => {
                cfg.fd_refresh_period = if v.is_null() { None } else { Some(positive_int(k, v)?) }
            }
            "fd_scheme" => {
                cfg.fd.scheme = match v.as_str() {
                    Some("central") => FdScheme::Central,
                    Some("forward") => FdScheme::Forward,
                    _ => return Err(DataIoError::config(k, "expected \"central\" or \"forward\"")),
                }
            }
            "fd_h_rel" => cfg.fd.h_rel = real(v, k)?,
            "fd_h_abs" => cfg.fd.h_abs = real(v, k)?,
            "diagnostics" => cfg.diagnostics = boolean(k, v)?,
            "verify_determinism" => cfg.verify_determinism = boolean(k, v)?,
            _ => {}
        }
    }
    Ok(())
}
