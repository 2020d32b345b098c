//! Version 1 of the evaluator wire protocol.
//!
//! One JSON object per line over the child's standard input and output:
//!
//! ```text
//! request:  {"v":1,"id":<integer>,"params":[<real>...]}
//! response: {"v":1,"id":<integer>,"residuals":[<real>...]}
//!       or  {"v":1,"id":<integer>,"error":"<message>"}
//! ```
//!
//! Reals are written with shortest round-trip formatting, so values survive
//! the text hop bit for bit.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::evaluator::ResidualEvaluator;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub v: u32,
    pub id: i64,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Response {
    pub v: u32,
    pub id: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residuals: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn residuals(id: i64, residuals: Vec<f64>) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            id,
            residuals: Some(residuals),
            error: None,
        }
    }

    pub fn error(id: i64, message: impl Into<String>) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            id,
            residuals: None,
            error: Some(message.into()),
        }
    }
}

pub fn encode<S: Serialize>(msg: &S) -> String {
    serde_json::to_string(msg).expect("protocol messages always serialize")
}

/// Answers one request line. Unparseable lines get an error response that
/// echoes the id when one can be recovered, `-1` otherwise.
pub fn handle_line<E: ResidualEvaluator<f64> + ?Sized>(line: &str, evaluator: &mut E) -> Response {
    let req: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(serde_json::Value::as_i64))
                .unwrap_or(-1);
            return Response::error(id, format!("malformed request: {e}"));
        }
    };
    if req.v != PROTOCOL_VERSION {
        return Response::error(req.id, format!("unsupported protocol version {}", req.v));
    }
    if req.params.iter().any(|p| !p.is_finite()) {
        return Response::error(req.id, "non-finite parameter");
    }
    match evaluator.evaluate(&req.params) {
        Ok(r) if r.iter().all(|v| v.is_finite()) => Response::residuals(req.id, r),
        Ok(_) => Response::error(req.id, "model produced a non-finite residual"),
        Err(e) => Response::error(req.id, e.to_string()),
    }
}

/// Serves requests until `input` reaches end of file. Blank lines are ignored.
pub fn serve<R: BufRead, W: Write, E: ResidualEvaluator<f64> + ?Sized>(
    input: R,
    mut output: W,
    evaluator: &mut E,
) -> io::Result<usize> {
    let mut handled = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = handle_line(&line, evaluator);
        writeln!(output, "{}", encode(&resp))?;
        output.flush()?;
        handled += 1;
    }
    Ok(handled)
}
