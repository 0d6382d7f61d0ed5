//! Conversion from the Twitter15/16 release layout.
//!
//! That release ships, per dataset, a `label.txt` (`label:source_tweet_id`
//! lines), a `source_tweets.txt` (`tweet_id<TAB>text` lines) and one
//! `tree/<source_tweet_id>.txt` per claim whose lines look like
//!
//! ```text
//! ['ROOT', 'ROOT', '0.0']->['972651', '80080680482123777', '0.0']
//! ['972651', '80080680482123777', '0.0']->['189397006', '80080680482123777', '1.0']
//! ```
//!
//! i.e. `[uid, tweet_id, minutes]` of the parent and of the reply. Mapping:
//!
//! * every distinct `[uid, tweet_id, minutes]` triple is one post, with
//!   `post_id = "uid:tweet_id:minutes"`;
//! * minutes become whole seconds (rounded, negatives clamped to 0), and the
//!   claim is pinned to `t = 0`;
//! * response text is not distributed, so responses get empty text; the
//!   claim text comes from `source_tweets.txt`;
//! * labels map `non-rumor → NR`, `false → FR`, `true → TR`,
//!   `unverified → UR`;
//! * a repeated triple keeps its first parent, self-replies are dropped, and
//!   posts whose parent never appears (or that hang off a cycle) are
//!   re-attached to the claim so the result is always a valid tree.

use std::collections::{HashMap, HashSet};

use super::{Event, Label, Post};
use crate::error::{Error, Result};

type Node = (String, String, String);

fn parse_node(s: &str, line: usize) -> Result<Node> {
    let bad = |msg: &str| Error::Parse {
        line,
        msg: format!("{msg}: `{s}`"),
    };
    let inner = s
        .trim()
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| bad("expected [uid, tweet_id, time]"))?;
    let parts: Vec<String> = inner
        .split(',')
        .map(|p| p.trim().trim_matches('\'').trim_matches('"').to_string())
        .collect();
    match <[String; 3]>::try_from(parts) {
        Ok([u, t, m]) => Ok((u, t, m)),
        Err(_) => Err(bad("expected three fields")),
    }
}

fn seconds(minutes: &str, line: usize) -> Result<u64> {
    let m: f64 = minutes.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad time `{minutes}`"),
    })?;
    if !m.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("bad time `{minutes}`"),
        });
    }
    Ok((m * 60.0).round().clamp(0.0, u64::MAX as f64) as u64)
}

pub fn convert_tree(event_id: &str, label: Label, claim_text: &str, tree: &str) -> Result<Event> {
    let key = |n: &Node| format!("{}:{}:{}", n.0, n.1, n.2);
    let mut claim: Option<String> = None;
    let mut order: Vec<String> = Vec::new();
    let mut parent: HashMap<String, String> = HashMap::new();
    let mut time: HashMap<String, u64> = HashMap::new();

    for (i, line) in tree.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (lhs, rhs) = line.split_once("->").ok_or_else(|| Error::Parse {
            line: line_no,
            msg: "expected `parent->child`".into(),
        })?;
        let (p, c) = (parse_node(lhs, line_no)?, parse_node(rhs, line_no)?);
        let ck = key(&c);
        if p.0 == "ROOT" {
            if claim.is_none() {
                claim = Some(ck.clone());
                time.insert(ck.clone(), 0);
                order.push(ck);
            }
            continue;
        }
        let pk = key(&p);
        if pk == ck || time.contains_key(&ck) {
            continue;
        }
        time.insert(ck.clone(), seconds(&c.2, line_no)?);
        parent.insert(ck.clone(), pk);
        order.push(ck);
    }

    let claim = claim.ok_or_else(|| Error::InvalidEvent {
        event_id: event_id.to_string(),
        msg: "tree has no ROOT line".into(),
    })?;

    // anything that cannot walk up to the claim is re-attached to it
    let mut reaches: HashSet<String> = HashSet::from([claim.clone()]);
    for k in &order {
        let mut walk = vec![k.clone()];
        let mut cur = k.clone();
        let ok = loop {
            if reaches.contains(&cur) {
                break true;
            }
            match parent.get(&cur) {
                Some(p) if time.contains_key(p) && !walk.contains(p) => {
                    cur = p.clone();
                    walk.push(cur.clone());
                }
                _ => break false,
            }
        };
        if ok {
            reaches.extend(walk);
        } else {
            parent.insert(k.clone(), claim.clone());
            reaches.insert(k.clone());
        }
    }

    let posts = order
        .iter()
        .map(|k| {
            if *k == claim {
                Post::new(k, None, 0, claim_text)
            } else {
                Post::new(k, Some(&parent[k]), time[k], "")
            }
        })
        .collect();
    Event::new(event_id, label, posts)
}

/// Parses `label:tweet_id` lines.
pub fn parse_labels(text: &str) -> Result<Vec<(String, Label)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (label, id) = l.trim().split_once(':').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: "expected `label:tweet_id`".into(),
            })?;
            let label = match label {
                "non-rumor" => Label::NonRumor,
                "false" => Label::FalseRumor,
                "true" => Label::TrueRumor,
                "unverified" => Label::Unverified,
                other => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: format!("unknown label `{other}`"),
                    })
                }
            };
            Ok((id.to_string(), label))
        })
        .collect()
}

/// Parses `tweet_id<TAB>text` lines.
pub fn parse_source_tweets(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(id, t)| (id.trim().to_string(), t.to_string()))
        .collect()
}
