//! Text state files and JSON report envelopes.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{c, SparseState, PRUNE_THRESHOLD, TOLERANCE};
use crate::upb::{data_layout, LabeledState, SubsetLabel, UPBSet};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// ```text
/// schema 1
/// d 3
/// states 19
/// state A1[k=0](0,1)
/// amp 1,0,0 1.0000000000000000e0 0.0000000000000000e0
/// ```
pub fn write_upb(set: &UPBSet) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "schema {SCHEMA_VERSION}");
    let _ = writeln!(s, "d {}", set.d);
    let _ = writeln!(s, "states {}", set.states.len());
    for st in &set.states {
        let _ = writeln!(s, "state {}", st.label);
        for (idx, a) in st.state.iter() {
            let idx: Vec<String> = idx.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "amp {} {:.16e} {:.16e}", idx.join(","), a.re, a.im);
        }
    }
    s
}

type RawAmp = (Vec<usize>, f64, f64);

pub fn read_upb(text: &str) -> Result<UPBSet> {
    let mut d = None;
    let mut declared = None;
    let mut states: Vec<(SubsetLabel, Vec<RawAmp>)> = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: ln + 1, msg };
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "schema" => {
                let v: u32 = rest.trim().parse().map_err(|_| err("bad schema".into()))?;
                if v != SCHEMA_VERSION {
                    return Err(err(format!("unsupported schema {v}")));
                }
            }
            "d" => d = Some(rest.trim().parse::<usize>().map_err(|_| err("bad d".into()))?),
            "states" => {
                declared = Some(rest.trim().parse::<usize>().map_err(|_| err("bad count".into()))?)
            }
            "state" => {
                let label = rest.trim().parse().map_err(|e: Error| err(e.to_string()))?;
                states.push((label, Vec::new()));
            }
            "amp" => {
                let cur = states
                    .last_mut()
                    .ok_or_else(|| err("amplitude before any state".into()))?;
                let parts: Vec<&str> = rest.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(err("expected `amp i,j,k re im`".into()));
                }
                let idx = parts[0]
                    .split(',')
                    .map(|v| v.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| err(format!("bad index `{}`", parts[0])))?;
                let re: f64 = parts[1].parse().map_err(|_| err("bad real part".into()))?;
                let im: f64 = parts[2].parse().map_err(|_| err("bad imaginary part".into()))?;
                cur.1.push((idx, re, im));
            }
            _ => return Err(err(format!("unknown record `{key}`"))),
        }
    }
    let d = d.ok_or(Error::Parse {
        line: 0,
        msg: "missing `d`".into(),
    })?;
    if let Some(n) = declared {
        if n != states.len() {
            return Err(Error::Parse {
                line: 0,
                msg: format!("declared {n} states, found {}", states.len()),
            });
        }
    }
    let layout = data_layout(d)?;
    let states = states
        .into_iter()
        .map(|(label, amps)| {
            let state = SparseState::new(
                layout.clone(),
                amps.into_iter().map(|(i, re, im)| (i, c(re, im))),
            )?;
            Ok(LabeledState { label, state })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UPBSet { d, states })
}

#[derive(Clone, Debug, Serialize)]
pub struct Tolerances {
    pub prune_threshold: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Envelope<'a, C: Serialize, R: Serialize> {
    pub tool: &'a str,
    pub version: &'a str,
    pub command: &'a str,
    pub config: &'a C,
    pub tolerances: Tolerances,
    pub result: &'a R,
}

/// Pretty JSON with the tool version, config echo and tolerance constants.
pub fn report_json<C: Serialize, R: Serialize>(command: &str, config: &C, result: &R) -> Result<String> {
    let env = Envelope {
        tool: "upb-locc",
        version: TOOL_VERSION,
        command,
        config,
        tolerances: Tolerances {
            prune_threshold: PRUNE_THRESHOLD,
            tolerance: TOLERANCE,
        },
        result,
    };
    serde_json::to_string_pretty(&env)
        .map(|mut s| {
            s.push('\n');
            s
        })
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}
