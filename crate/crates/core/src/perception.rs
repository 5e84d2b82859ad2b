//! Structured observations of requests and network state.
//!
//! Requests use a small line grammar:
//!
//! ```text
//! id=<int> pos=<x>,<y> [csi=<handle>] service=<free text to end of line>
//! ```

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::domain::{occupancy_rate, NetworkState, Position, SliceKind, UserId};

#[derive(Clone, Debug, PartialEq)]
pub struct RawRequest {
    pub user: UserId,
    pub position: Position,
    pub service_text: String,
    /// Opaque channel handle, resolved by the channel tool.
    pub csi_ref: Option<u64>,
}

impl fmt::Display for RawRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "id={} pos={},{}", self.user, self.position.x, self.position.y)?;
        if let Some(csi) = self.csi_ref {
            write!(f, " csi={csi}")?;
        }
        write!(f, " service={}", self.service_text)
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum PerceptionError {
    #[error("malformed or missing field `{0}`")]
    Parse(&'static str),
    #[error("position ({x}, {y}) outside the {side} m square")]
    OutOfArea { x: f64, y: f64, side: f64 },
}

/// Parses one request line; positions are checked against a `side` × `side` square.
pub fn parse_request(line: &str, side: f64) -> Result<RawRequest, PerceptionError> {
    let line = line.trim();
    let (head, service) = match line.find("service=") {
        Some(at) if at == 0 || line[..at].ends_with(char::is_whitespace) => {
            (&line[..at], line[at + "service=".len()..].trim())
        }
        _ => return Err(PerceptionError::Parse("service")),
    };
    if service.is_empty() {
        return Err(PerceptionError::Parse("service"));
    }

    let mut user = None;
    let mut position = None;
    let mut csi_ref = None;
    for token in head.split_whitespace() {
        let (key, value) = token.split_once('=').ok_or(PerceptionError::Parse("token"))?;
        match key {
            "id" => {
                let id: u32 = value.parse().map_err(|_| PerceptionError::Parse("id"))?;
                if id == 0 {
                    return Err(PerceptionError::Parse("id"));
                }
                user = Some(UserId(id));
            }
            "pos" => {
                let (x, y) = value.split_once(',').ok_or(PerceptionError::Parse("pos"))?;
                let x: f64 = x.parse().map_err(|_| PerceptionError::Parse("pos"))?;
                let y: f64 = y.parse().map_err(|_| PerceptionError::Parse("pos"))?;
                if !x.is_finite() || !y.is_finite() {
                    return Err(PerceptionError::Parse("pos"));
                }
                position = Some(Position::new(x, y));
            }
            "csi" => csi_ref = Some(value.parse().map_err(|_| PerceptionError::Parse("csi"))?),
            _ => return Err(PerceptionError::Parse("token")),
        }
    }
    let user = user.ok_or(PerceptionError::Parse("id"))?;
    let position = position.ok_or(PerceptionError::Parse("pos"))?;
    if !position.within_square(side) {
        return Err(PerceptionError::OutOfArea {
            x: position.x,
            y: position.y,
            side,
        });
    }
    Ok(RawRequest {
        user,
        position,
        service_text: service.to_string(),
        csi_ref,
    })
}

/// Parses a request file body; blank and `#` lines are skipped.
/// Errors carry the 1-based line number.
pub fn parse_request_lines(text: &str, side: f64) -> Result<Vec<RawRequest>, (usize, PerceptionError)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| {
            let t = l.trim();
            !t.is_empty() && !t.starts_with('#')
        })
        .map(|(n, l)| parse_request(l, side).map_err(|e| (n + 1, e)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceStatus {
    pub kind: SliceKind,
    pub occupancy: f64,
    pub used_rbs: u32,
    pub free_rbs: u32,
    pub total_rbs: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub total_users: usize,
    pub slices: Vec<SliceStatus>,
}

impl Observation {
    pub fn slice(&self, kind: SliceKind) -> Option<&SliceStatus> {
        self.slices.iter().find(|s| s.kind == kind)
    }

    pub fn occupancy(&self, kind: SliceKind) -> f64 {
        self.slice(kind).map_or(1.0, |s| s.occupancy)
    }

    pub fn free_rbs(&self, kind: SliceKind) -> u32 {
        self.slice(kind).map_or(0, |s| s.free_rbs)
    }
}

/// Snapshot of the network; never mutates it.
pub fn observe(state: &NetworkState) -> Observation {
    Observation {
        total_users: state.total_users(),
        slices: state
            .ledgers()
            .iter()
            .map(|l| SliceStatus {
                kind: l.kind(),
                occupancy: occupancy_rate(l),
                used_rbs: l.used_rbs(),
                free_rbs: l.free_rbs(),
                total_rbs: l.config().total_rbs,
            })
            .collect(),
    }
}
