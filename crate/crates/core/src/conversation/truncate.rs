use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Event, Post};
use crate::error::{Error, Result};

/// How much of a thread is visible at an early-detection checkpoint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cutoff {
    /// The first n responses in chronological order.
    Posts(usize),
    /// Responses posted at most this many seconds after the claim.
    Elapsed(u64),
    All,
}

impl Cutoff {
    fn rank(self) -> (u8, u64) {
        match self {
            Cutoff::Posts(n) => (0, n as u64),
            Cutoff::Elapsed(t) => (0, t),
            Cutoff::All => (1, 0),
        }
    }

    /// Whether `self` shows no more than `later` under the same mode.
    pub fn precedes(self, later: Cutoff) -> bool {
        match (self, later) {
            (Cutoff::Posts(_), Cutoff::Elapsed(_)) | (Cutoff::Elapsed(_), Cutoff::Posts(_)) => false,
            _ => self.rank() <= later.rank(),
        }
    }
}

impl fmt::Display for Cutoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cutoff::Posts(n) => write!(f, "{n}"),
            Cutoff::Elapsed(t) => write!(f, "{t}s"),
            Cutoff::All => f.write_str("all"),
        }
    }
}

impl FromStr for Cutoff {
    type Err = Error;

    /// `all`, a post count like `10`, or an elapsed time like `90s`, `30m`, `4h`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Unknown {
            kind: "checkpoint",
            name: s.to_string(),
        };
        if s == "all" {
            return Ok(Cutoff::All);
        }
        let (num, mult) = match s.char_indices().last() {
            Some((i, 's')) => (&s[..i], Some(1)),
            Some((i, 'm')) => (&s[..i], Some(60)),
            Some((i, 'h')) => (&s[..i], Some(3600)),
            _ => (s, None),
        };
        let n: u64 = num.parse().map_err(|_| bad())?;
        Ok(match mult {
            Some(m) => Cutoff::Elapsed(n.checked_mul(m).ok_or_else(bad)?),
            None => Cutoff::Posts(usize::try_from(n).map_err(|_| bad())?),
        })
    }
}

/// Keeps the claim and the responses visible at `cutoff`. A kept post whose
/// parent was dropped is re-attached to its nearest kept ancestor.
pub fn truncate(event: &Event, cutoff: Cutoff) -> Event {
    let keep: Vec<bool> = event
        .responses()
        .iter()
        .enumerate()
        .map(|(i, p)| match cutoff {
            Cutoff::Posts(n) => i < n,
            Cutoff::Elapsed(t) => p.timestamp <= t,
            Cutoff::All => true,
        })
        .collect();
    if keep.iter().all(|&k| k) {
        return event.clone();
    }

    let parent: HashMap<&str, &str> = event
        .responses()
        .iter()
        .map(|p| (p.post_id.as_str(), p.parent_id.as_deref().expect("response has parent")))
        .collect();
    let mut kept: HashMap<&str, bool> = event
        .responses()
        .iter()
        .zip(&keep)
        .map(|(p, &k)| (p.post_id.as_str(), k))
        .collect();
    kept.insert(event.claim().post_id.as_str(), true);

    let responses: Vec<Post> = event
        .responses()
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(p, _)| {
            let mut anc = p.parent_id.as_deref().expect("response has parent");
            while !kept[anc] {
                anc = parent[anc];
            }
            Post {
                parent_id: Some(anc.to_string()),
                ..p.clone()
            }
        })
        .collect();
    Event::from_parts(
        event.id().to_string(),
        event.label(),
        event.claim().clone(),
        responses,
    )
}
