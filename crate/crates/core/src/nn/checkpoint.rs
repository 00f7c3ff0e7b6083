//! Plain-text checkpoint format.
//!
//! ```text
//! format=1
//! layers=4,64,64,4
//! recurrent=0            (or recurrent=1,<hidden>,<truncation>)
//! step=<global step>
//! stage=<curriculum stage>
//! rng=<rng fingerprint>
//! <one parameter per line, 17 significant digits>
//! ```

use std::fs;
use std::path::Path;

use super::{NetSpec, ParamVector, RecurrentSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointBundle {
    pub spec: NetSpec,
    pub params: ParamVector<f64>,
    pub global_step: u64,
    pub stage: usize,
    pub rng_fingerprint: u64,
}

/// Serializes a bundle. Every parameter round-trips bit-exactly.
pub fn write_checkpoint(bundle: &CheckpointBundle) -> String {
    let layers: Vec<String> = bundle.spec.layer_sizes.iter().map(usize::to_string).collect();
    let recurrent = match bundle.spec.recurrent {
        Some(r) => format!("1,{},{}", r.hidden_size, r.truncation),
        None => "0".to_string(),
    };
    let mut out = String::with_capacity(32 * bundle.params.len() + 128);
    out.push_str("format=1\n");
    out.push_str(&format!("layers={}\n", layers.join(",")));
    out.push_str(&format!("recurrent={recurrent}\n"));
    out.push_str(&format!("step={}\n", bundle.global_step));
    out.push_str(&format!("stage={}\n", bundle.stage));
    out.push_str(&format!("rng={}\n", bundle.rng_fingerprint));
    for v in bundle.params.iter() {
        out.push_str(&format!("{v:.16e}\n"));
    }
    out
}

fn header<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> Result<(usize, &'a str)> {
    let (n, line) = lines.next().ok_or_else(|| Error::Parse {
        line: 0,
        msg: format!("missing header '{key}='"),
    })?;
    let value = line
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| Error::Parse {
            line: n,
            msg: format!("expected '{key}=...', found '{line}'"),
        })?;
    Ok((n, value.trim()))
}

fn number<T: std::str::FromStr>(line: usize, s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("'{s}' is not a valid number"),
    })
}

pub fn parse_checkpoint(text: &str) -> Result<CheckpointBundle> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n, format) = header(&mut lines, "format")?;
    if format != "1" {
        return Err(Error::Parse {
            line: n,
            msg: format!("unsupported checkpoint format '{format}'"),
        });
    }
    let (n, layers) = header(&mut lines, "layers")?;
    let layer_sizes = layers
        .split(',')
        .map(|s| number::<usize>(n, s))
        .collect::<Result<Vec<_>>>()?;
    let (n, rec) = header(&mut lines, "recurrent")?;
    let rec_fields: Vec<&str> = rec.split(',').collect();
    let recurrent = match rec_fields.as_slice() {
        ["0"] => None,
        ["1", h, t] => Some(RecurrentSpec {
            hidden_size: number(n, h)?,
            truncation: number(n, t)?,
        }),
        _ => {
            return Err(Error::Parse {
                line: n,
                msg: format!("bad recurrent header '{rec}'"),
            })
        }
    };
    let spec = NetSpec { layer_sizes, recurrent };
    spec.validate().map_err(|e| Error::Parse {
        line: n,
        msg: e.to_string(),
    })?;
    let (n, step) = header(&mut lines, "step")?;
    let global_step = number(n, step)?;
    let (n, stage) = header(&mut lines, "stage")?;
    let stage = number(n, stage)?;
    let (n, rng) = header(&mut lines, "rng")?;
    let rng_fingerprint = number(n, rng)?;

    let count = spec.param_count();
    let mut params = Vec::with_capacity(count);
    let mut last_line = n;
    for (n, line) in lines.by_ref() {
        last_line = n;
        if params.len() == count {
            if line.trim().is_empty() {
                continue;
            }
            return Err(Error::Parse {
                line: n,
                msg: format!("unexpected data after {count} parameters"),
            });
        }
        params.push(number::<f64>(n, line)?);
    }
    if params.len() != count {
        return Err(Error::Parse {
            line: last_line + 1,
            msg: format!(
                "truncated checkpoint: expected {count} parameters, found {}",
                params.len()
            ),
        });
    }
    Ok(CheckpointBundle {
        spec,
        params: ParamVector(params),
        global_step,
        stage,
        rng_fingerprint,
    })
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<CheckpointBundle> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    parse_checkpoint(&text)
}
