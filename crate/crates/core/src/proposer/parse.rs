//! Payload extraction from free-form backend text.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::grid::{Cell, Trajectory};

use super::{ActionKind, ProposerReply};

static PATH_ARRAY: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\[\s*\[\s*-?\d+\s*,\s*-?\d+\s*\](?:\s*,\s*\[\s*-?\d+\s*,\s*-?\d+\s*\])*\s*\]").unwrap()
});
static PAIR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[\s*(-?\d+)\s*,\s*(-?\d+)\s*\]").unwrap());
static LABELED_SCORE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:score|compliance)\s*[:=]\s*([0-9]*\.?[0-9]+)").unwrap());
static BARE_NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?:^|[^\w.])([0-9]*\.?[0-9]+)").unwrap());
static LABELED_VERDICT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bverdict\s*[:=]\s*([a-z]+)").unwrap());
static VERDICT_WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(continue|explore|stop|done|accept)\b").unwrap());

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ParseError {
    #[error("no waypoint array found in reply: {raw:?}")]
    NoTrajectory { raw: String },
    #[error("waypoint coordinate out of range in reply: {raw:?}")]
    BadCoordinate { raw: String },
    #[error("no compliance score in [0, 1] found in reply: {raw:?}")]
    NoScore { raw: String },
    #[error("no continue/stop verdict found in reply: {raw:?}")]
    NoVerdict { raw: String },
}

impl ParseError {
    pub fn raw(&self) -> &str {
        match self {
            ParseError::NoTrajectory { raw }
            | ParseError::BadCoordinate { raw }
            | ParseError::NoScore { raw }
            | ParseError::NoVerdict { raw } => raw,
        }
    }
}

fn parse_trajectory(raw: &str) -> Result<Trajectory, ParseError> {
    let m = PATH_ARRAY.find(raw).ok_or_else(|| ParseError::NoTrajectory { raw: raw.to_string() })?;
    PAIR.captures_iter(m.as_str())
        .map(|cap| {
            let row = cap[1].parse::<i32>();
            let col = cap[2].parse::<i32>();
            match (row, col) {
                (Ok(r), Ok(c)) => Ok(Cell::new(r, c)),
                _ => Err(ParseError::BadCoordinate { raw: raw.to_string() }),
            }
        })
        .collect()
}

fn verdict_token(word: &str) -> Option<bool> {
    match word.to_ascii_lowercase().as_str() {
        "continue" | "explore" => Some(true),
        "stop" | "done" | "accept" => Some(false),
        _ => None,
    }
}

fn parse_evaluation(raw: &str) -> Result<(f64, bool), ParseError> {
    let in_range = |s: &str| s.parse::<f64>().ok().filter(|v| (0.0..=1.0).contains(v));
    let score = LABELED_SCORE
        .captures_iter(raw)
        .find_map(|c| in_range(&c[1]))
        .or_else(|| BARE_NUMBER.captures_iter(raw).find_map(|c| in_range(&c[1])))
        .ok_or_else(|| ParseError::NoScore { raw: raw.to_string() })?;
    let verdict = LABELED_VERDICT
        .captures_iter(raw)
        .find_map(|c| verdict_token(&c[1]))
        .or_else(|| VERDICT_WORD.captures_iter(raw).find_map(|c| verdict_token(&c[1])))
        .ok_or_else(|| ParseError::NoVerdict { raw: raw.to_string() })?;
    Ok((score, verdict))
}

/// Extract the payload `kind` calls for, ignoring surrounding prose. The raw
/// text is kept on the reply.
pub fn parse_reply(kind: ActionKind, raw: &str) -> Result<ProposerReply, ParseError> {
    if kind.produces_trajectory() {
        Ok(ProposerReply::with_trajectory(parse_trajectory(raw)?, raw.to_string()))
    } else {
        let (score, verdict) = parse_evaluation(raw)?;
        Ok(ProposerReply::with_evaluation(score, verdict, raw.to_string()))
    }
}
