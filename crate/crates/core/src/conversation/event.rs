use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    /// `None` exactly for the claim.
    pub parent_id: Option<String>,
    /// Seconds since the claim was posted.
    pub timestamp: u64,
    pub text: String,
}

impl Post {
    pub fn new(post_id: &str, parent_id: Option<&str>, timestamp: u64, text: &str) -> Self {
        Post {
            post_id: post_id.to_string(),
            parent_id: parent_id.map(str::to_string),
            timestamp,
            text: text.to_string(),
        }
    }
}

/// Veracity label. The fine-grained scheme has four classes, the binary one two.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NonRumor,
    FalseRumor,
    TrueRumor,
    Unverified,
    Rumor,
    NotRumor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    Fine,
    Binary,
}

impl LabelScheme {
    pub fn classes(self) -> &'static [Label] {
        match self {
            LabelScheme::Fine => &[
                Label::NonRumor,
                Label::FalseRumor,
                Label::TrueRumor,
                Label::Unverified,
            ],
            LabelScheme::Binary => &[Label::NotRumor, Label::Rumor],
        }
    }

    pub fn num_classes(self) -> usize {
        self.classes().len()
    }

    pub fn label(self, class: usize) -> Option<Label> {
        self.classes().get(class).copied()
    }

    pub fn class_names(self) -> Vec<String> {
        self.classes().iter().map(|l| l.to_string()).collect()
    }
}

impl Label {
    pub fn scheme(self) -> LabelScheme {
        match self {
            Label::Rumor | Label::NotRumor => LabelScheme::Binary,
            _ => LabelScheme::Fine,
        }
    }

    pub fn class_index(self) -> usize {
        self.scheme()
            .classes()
            .iter()
            .position(|&l| l == self)
            .expect("label belongs to its scheme")
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::NonRumor => "NR",
            Label::FalseRumor => "FR",
            Label::TrueRumor => "TR",
            Label::Unverified => "UR",
            Label::Rumor => "rumor",
            Label::NotRumor => "non-rumor",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "NR" => Label::NonRumor,
            "FR" => Label::FalseRumor,
            "TR" => Label::TrueRumor,
            "UR" => Label::Unverified,
            "rumor" => Label::Rumor,
            "non-rumor" => Label::NotRumor,
            _ => {
                return Err(Error::Unknown {
                    kind: "label",
                    name: s.to_string(),
                })
            }
        })
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A claim plus its responsive posts, validated to form a reply tree rooted
/// at the claim. Responses are kept in chronological order (ties broken by
/// post id), which is also the canonical node order of every graph built
/// from the event.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    event_id: String,
    label: Label,
    claim: Post,
    responses: Vec<Post>,
}

impl Event {
    pub fn new(event_id: impl Into<String>, label: Label, posts: Vec<Post>) -> Result<Event> {
        let event_id = event_id.into();
        let invalid = |msg: String| Error::InvalidEvent {
            event_id: event_id.clone(),
            msg,
        };
        if posts.is_empty() {
            return Err(invalid("no posts".into()));
        }

        let mut seen = HashSet::new();
        for p in &posts {
            if !seen.insert(p.post_id.as_str()) {
                return Err(invalid(format!("duplicate post_id {}", p.post_id)));
            }
        }

        let roots: Vec<&Post> = posts.iter().filter(|p| p.parent_id.is_none()).collect();
        match roots.len() {
            0 => return Err(invalid("no claim (every post has a parent)".into())),
            1 => {}
            _ => {
                let ids: Vec<&str> = roots.iter().map(|p| p.post_id.as_str()).collect();
                return Err(invalid(format!("multiple roots {ids:?}")));
            }
        }
        if roots[0].timestamp != 0 {
            return Err(invalid(format!(
                "claim {} has timestamp {}, expected 0",
                roots[0].post_id, roots[0].timestamp
            )));
        }
        for p in &posts {
            if let Some(parent) = &p.parent_id {
                if !seen.contains(parent.as_str()) {
                    return Err(invalid(format!(
                        "post {} replies to missing post {parent}",
                        p.post_id
                    )));
                }
            }
        }
        if let Some(cycle) = find_cycle(&posts) {
            return Err(Error::Cycle {
                event_id,
                posts: cycle,
            });
        }

        let mut claim = None;
        let mut responses = Vec::with_capacity(posts.len() - 1);
        for p in posts {
            if p.parent_id.is_none() {
                claim = Some(p);
            } else {
                responses.push(p);
            }
        }
        responses.sort_by(|a, b| {
            a.timestamp
                .cmp(&b.timestamp)
                .then_with(|| a.post_id.cmp(&b.post_id))
        });
        Ok(Event {
            event_id,
            label,
            claim: claim.expect("one root"),
            responses,
        })
    }

    pub fn id(&self) -> &str {
        &self.event_id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn claim(&self) -> &Post {
        &self.claim
    }

    pub fn responses(&self) -> &[Post] {
        &self.responses
    }

    /// Number of posts, claim included.
    pub fn len(&self) -> usize {
        1 + self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Claim first, then responses chronologically.
    pub fn posts(&self) -> impl Iterator<Item = &Post> {
        std::iter::once(&self.claim).chain(self.responses.iter())
    }

    /// Parent position of every post in canonical order.
    pub fn parent_indices(&self) -> Vec<Option<usize>> {
        let index: HashMap<&str, usize> = self
            .posts()
            .enumerate()
            .map(|(i, p)| (p.post_id.as_str(), i))
            .collect();
        self.posts()
            .map(|p| p.parent_id.as_deref().map(|id| index[id]))
            .collect()
    }

    /// Reply depth of every post; the claim has depth 0.
    pub fn depths(&self) -> Vec<usize> {
        let parents = self.parent_indices();
        let mut depth = vec![0usize; parents.len()];
        // parents may come later in chronological order, so resolve lazily
        fn resolve(i: usize, parents: &[Option<usize>], depth: &mut [usize], done: &mut [bool]) -> usize {
            if done[i] {
                return depth[i];
            }
            let d = match parents[i] {
                None => 0,
                Some(p) => resolve(p, parents, depth, done) + 1,
            };
            depth[i] = d;
            done[i] = true;
            d
        }
        let mut done = vec![false; parents.len()];
        for i in 0..parents.len() {
            resolve(i, &parents, &mut depth, &mut done);
        }
        depth
    }

    pub fn max_depth(&self) -> usize {
        self.depths().into_iter().max().unwrap_or(0)
    }

    pub(crate) fn from_parts(event_id: String, label: Label, claim: Post, responses: Vec<Post>) -> Event {
        Event {
            event_id,
            label,
            claim,
            responses,
        }
    }
}

/// Returns the post ids of one cycle, if the parent links contain any.
fn find_cycle(posts: &[Post]) -> Option<Vec<String>> {
    let parent: HashMap<&str, &str> = posts
        .iter()
        .filter_map(|p| p.parent_id.as_deref().map(|q| (p.post_id.as_str(), q)))
        .collect();
    let mut state: HashMap<&str, u8> = HashMap::new(); // 1 = on current walk, 2 = reaches root
    for p in posts {
        let mut walk = Vec::new();
        let mut cur = p.post_id.as_str();
        loop {
            match state.get(cur) {
                Some(2) => break,
                Some(1) => {
                    let start = walk.iter().position(|&w| w == cur).unwrap_or(0);
                    return Some(walk[start..].iter().map(|s: &&str| s.to_string()).collect());
                }
                _ => {}
            }
            state.insert(cur, 1);
            walk.push(cur);
            match parent.get(cur) {
                Some(&next) => cur = next,
                None => break,
            }
        }
        for w in walk {
            state.insert(w, 2);
        }
    }
    None
}

/// A set of events sharing one label scheme, with unique event ids.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub events: Vec<Event>,
    pub scheme: LabelScheme,
}

impl Corpus {
    pub fn new(events: Vec<Event>) -> Result<Corpus> {
        let scheme = events
            .first()
            .map(|e| e.label().scheme())
            .ok_or_else(|| Error::Config("corpus has no events".into()))?;
        let mut ids = HashSet::new();
        for e in &events {
            if e.label().scheme() != scheme {
                return Err(Error::InvalidEvent {
                    event_id: e.id().to_string(),
                    msg: format!("label {} does not match the corpus label scheme", e.label()),
                });
            }
            if !ids.insert(e.id()) {
                return Err(Error::InvalidEvent {
                    event_id: e.id().to_string(),
                    msg: "duplicate event_id".into(),
                });
            }
        }
        Ok(Corpus { events, scheme })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.scheme.num_classes()];
        for e in &self.events {
            counts[e.label().class_index()] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn claim_only_event() {
        let e = Event::new("e", Label::Rumor, vec![Post::new("c", None, 0, "hi")]).unwrap();
        assert_eq!(e.responses().len(), 0);
        assert_eq!(e.len(), 1);
        assert_eq!(e.max_depth(), 0);
    }

    #[test]
    fn rejects_contract_violations() {
        let c = Post::new("c", None, 0, "");
        let cases = vec![
            vec![c.clone(), Post::new("c", Some("c"), 1, "")],
            vec![c.clone(), Post::new("x", None, 1, "")],
            vec![c.clone(), Post::new("x", Some("ghost"), 1, "")],
            vec![Post::new("c", None, 5, "")],
            vec![],
        ];
        for posts in cases {
            assert!(matches!(
                Event::new("e", Label::NonRumor, posts),
                Err(Error::InvalidEvent { .. })
            ));
        }
    }

    #[test]
    fn cycle_error_names_posts() {
        let posts = vec![
            Post::new("c", None, 0, ""),
            Post::new("a", Some("b"), 1, ""),
            Post::new("b", Some("a"), 2, ""),
        ];
        match Event::new("e9", Label::NonRumor, posts) {
            Err(Error::Cycle { event_id, mut posts }) => {
                assert_eq!(event_id, "e9");
                posts.sort();
                assert_eq!(posts, vec!["a", "b"]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn responses_sorted_and_parents_resolved() {
        let e = Event::new(
            "e",
            Label::FalseRumor,
            vec![
                Post::new("b", Some("a"), 30, ""),
                Post::new("c", None, 0, ""),
                Post::new("a", Some("c"), 10, ""),
            ],
        )
        .unwrap();
        let ids: Vec<&str> = e.posts().map(|p| p.post_id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(e.parent_indices(), vec![None, Some(0), Some(1)]);
        assert_eq!(e.depths(), vec![0, 1, 2]);
    }

    #[test]
    fn labels_round_trip_and_index() {
        for s in ["NR", "FR", "TR", "UR", "rumor", "non-rumor"] {
            let l: Label = s.parse().unwrap();
            assert_eq!(l.to_string(), s);
            assert_eq!(l.scheme().label(l.class_index()), Some(l));
        }
        assert!("maybe".parse::<Label>().is_err());
    }
}
