//! Line-delimited JSON event files.
//!
//! One event per line:
//!
//! ```text
//! {"event_id":"e1","label":"FR","posts":[
//!     {"post_id":"r","parent_id":null,"t":0,"text":"..."},
//!     {"post_id":"x1","parent_id":"r","t":42,"text":"..."}]}
//! ```
//!
//! (shown wrapped; each record is a single line). `label` is one of
//! `NR|FR|TR|UR` or `rumor|non-rumor`, `t` is whole seconds since the claim.
//! Blank lines are skipped.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Event, Label, Post};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct RawPost {
    post_id: String,
    parent_id: Option<String>,
    t: u64,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct RawEvent {
    event_id: String,
    label: Label,
    posts: Vec<RawPost>,
}

/// Parses one record. `line_no` is only used for diagnostics.
pub fn parse_line(line: &str, line_no: usize) -> Result<Event> {
    let raw: RawEvent = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        msg: format!("malformed record: {e}"),
    })?;
    let posts = raw
        .posts
        .into_iter()
        .map(|p| Post {
            post_id: p.post_id,
            parent_id: p.parent_id,
            timestamp: p.t,
            text: p.text,
        })
        .collect();
    Event::new(raw.event_id, raw.label, posts).map_err(|e| Error::Parse {
        line: line_no,
        msg: e.to_string(),
    })
}

pub fn parse_str(text: &str) -> Result<Vec<Event>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1))
        .collect()
}

pub fn parse_events(path: impl AsRef<Path>) -> Result<Vec<Event>> {
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    parse_str(&text)
}

pub fn to_line(event: &Event) -> String {
    let raw = RawEvent {
        event_id: event.id().to_string(),
        label: event.label(),
        posts: event
            .posts()
            .map(|p| RawPost {
                post_id: p.post_id.clone(),
                parent_id: p.parent_id.clone(),
                t: p.timestamp,
                text: p.text.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&raw).expect("event serializes")
}

pub fn write_str(events: &[Event]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&to_line(e));
        out.push('\n');
    }
    out
}

pub fn write_events(path: impl AsRef<Path>, events: &[Event]) -> Result<()> {
    std::fs::write(&path, write_str(events)).map_err(|e| Error::io(&path, e))
}
