//! Synthetic conversation corpora with planted stance structure.
//!
//! Every post carries at most one stance word (support, deny, question)
//! among filler words, and labels follow a fixed rule over those stances:
//!
//! * `direct-reply`: rumor iff deny+question outnumber support among the
//!   claim's direct replies.
//! * `dominant-stance`: four classes by the most frequent response stance
//!   (support → TR, deny → FR, question → UR, none → NR).
//! * `sibling-majority`: the claim has `hubs` neutral replies, each with
//!   `group_size` stance-bearing children; rumor iff most groups lean deny.
//!   With signal strength 1 the total deny count is split evenly between
//!   the two middle values for both labels, so no single post and no global
//!   tally reveals the label.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conversation::{Event, Label, LabelScheme, Post};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stance {
    Support,
    Deny,
    Question,
}

pub const SUPPORT_WORDS: &[&str] = &["true", "confirmed", "agree", "legit", "verified", "correct"];
pub const DENY_WORDS: &[&str] = &["fake", "false", "hoax", "debunked", "wrong", "lie"];
pub const QUESTION_WORDS: &[&str] = &["really", "source", "unsure", "doubt", "proof", "why"];
/// Cap on distinct token types in a corpus.
pub const MAX_VOCABULARY: usize = 200;

impl Stance {
    pub const ALL: [Stance; 3] = [Stance::Support, Stance::Deny, Stance::Question];

    pub fn words(self) -> &'static [&'static str] {
        match self {
            Stance::Support => SUPPORT_WORDS,
            Stance::Deny => DENY_WORDS,
            Stance::Question => QUESTION_WORDS,
        }
    }

    /// Stance a token plants, if any.
    pub fn of_token(token: &str) -> Option<Stance> {
        Stance::ALL.into_iter().find(|s| s.words().contains(&token))
    }

    /// The single stance planted in a post's text.
    pub fn of_text(text: &str) -> Option<Stance> {
        text.split_whitespace().find_map(Stance::of_token)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LabelRule {
    #[default]
    DirectReply,
    DominantStance,
    SiblingMajority,
}

impl LabelRule {
    pub fn scheme(self) -> LabelScheme {
        match self {
            LabelRule::DominantStance => LabelScheme::Fine,
            _ => LabelScheme::Binary,
        }
    }
}

impl fmt::Display for LabelRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelRule::DirectReply => "direct-reply",
            LabelRule::DominantStance => "dominant-stance",
            LabelRule::SiblingMajority => "sibling-majority",
        })
    }
}

impl FromStr for LabelRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct-reply" => Ok(LabelRule::DirectReply),
            "dominant-stance" => Ok(LabelRule::DominantStance),
            "sibling-majority" => Ok(LabelRule::SiblingMajority),
            _ => Err(Error::Unknown {
                kind: "label rule",
                name: s.to_string(),
            }),
        }
    }
}

impl TryFrom<String> for LabelRule {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LabelRule> for String {
    fn from(r: LabelRule) -> String {
        r.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub events: usize,
    pub seed: u64,
    pub rule: LabelRule,
    /// Class fractions in label-scheme order; empty means uniform.
    pub balance: Vec<f64>,
    /// Inclusive range of children per expanded post (the claim gets at
    /// least one).
    pub branching: [usize; 2],
    /// Inclusive range of the deepest reply level.
    pub depth: [usize; 2],
    pub max_posts: usize,
    pub filler_per_post: usize,
    pub filler_vocabulary: usize,
    /// Chance that a post outside the rule's scope carries a random stance.
    pub distractor_rate: f64,
    /// Fraction of labels replaced by a different random class.
    pub noise: f64,
    /// Sibling rule: fraction of events whose global stance tally is
    /// uninformative.
    pub signal_strength: f64,
    pub hubs: usize,
    pub group_size: usize,
    /// Largest gap in seconds between consecutive posts.
    pub max_gap: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            events: 200,
            seed: 0,
            rule: LabelRule::DirectReply,
            balance: Vec::new(),
            branching: [0, 3],
            depth: [1, 3],
            max_posts: 30,
            filler_per_post: 2,
            filler_vocabulary: 40,
            distractor_rate: 0.3,
            noise: 0.0,
            signal_strength: 1.0,
            hubs: 3,
            group_size: 3,
            max_gap: 600,
        }
    }
}

impl SynthSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.events == 0 {
            return fail("events must be positive".into());
        }
        let classes = self.rule.scheme().num_classes();
        if !self.balance.is_empty() {
            if self.balance.len() != classes {
                return fail(format!("balance lists {} classes, rule has {classes}", self.balance.len()));
            }
            if self.balance.iter().any(|&b| b.is_nan() || b < 0.0) {
                return fail("balance fractions must be non-negative".into());
            }
            let total: f64 = self.balance.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return fail(format!("balance fractions sum to {total}, not 1"));
            }
        }
        if !(0.0..=1.0).contains(&self.signal_strength) {
            return fail(format!("signal strength {} outside [0, 1]", self.signal_strength));
        }
        if !(0.0..=1.0).contains(&self.noise) || !(0.0..=1.0).contains(&self.distractor_rate) {
            return fail("noise and distractor rate must lie in [0, 1]".into());
        }
        if self.filler_per_post > 0 && self.filler_vocabulary == 0 {
            return fail("filler words requested from an empty filler vocabulary".into());
        }
        let lexicon = SUPPORT_WORDS.len() + DENY_WORDS.len() + QUESTION_WORDS.len();
        if self.filler_vocabulary + lexicon > MAX_VOCABULARY {
            return fail(format!(
                "filler vocabulary {} exceeds the {MAX_VOCABULARY}-type budget",
                self.filler_vocabulary
            ));
        }
        match self.rule {
            LabelRule::SiblingMajority => {
                if self.group_size < 3 || self.group_size.is_multiple_of(2) {
                    return fail(format!(
                        "sibling groups need an odd size of at least 3, got {}",
                        self.group_size
                    ));
                }
                if self.hubs == 0 || self.hubs.is_multiple_of(2) {
                    return fail(format!("hub count must be odd, got {}", self.hubs));
                }
                if self.hubs * (self.group_size + 1) + 1 > self.max_posts {
                    return fail("sibling layout exceeds max_posts".into());
                }
            }
            _ => {
                let [blo, bhi] = self.branching;
                let [dlo, dhi] = self.depth;
                if blo > bhi || dlo > dhi {
                    return fail("branching and depth ranges must be ordered".into());
                }
                if dlo == 0 || bhi == 0 {
                    return fail(format!(
                        "branching {:?} with depth {:?} cannot produce replies",
                        self.branching, self.depth
                    ));
                }
                if blo == 0 && dlo > 1 {
                    return fail("depth above 1 is not guaranteed with minimum branching 0".into());
                }
                if self.max_posts < dlo + 1 {
                    return fail(format!("max_posts {} below minimum depth", self.max_posts));
                }
            }
        }
        Ok(())
    }

    /// Exact per-class counts: floors of the fractions, remainder to the
    /// largest fractional parts (lowest class first on ties).
    pub fn class_counts(&self) -> Vec<usize> {
        let classes = self.rule.scheme().num_classes();
        let fractions = if self.balance.is_empty() {
            vec![1.0 / classes as f64; classes]
        } else {
            self.balance.clone()
        };
        let raw: Vec<f64> = fractions.iter().map(|f| f * self.events as f64).collect();
        let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
        let mut rest = self.events - counts.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..classes).collect();
        order.sort_by(|&a, &b| {
            let fa = raw[a] - raw[a].floor();
            let fb = raw[b] - raw[b].floor();
            fb.partial_cmp(&fa).expect("finite").then(a.cmp(&b))
        });
        for &c in order.iter().cycle() {
            if rest == 0 {
                break;
            }
            counts[c] += 1;
            rest -= 1;
        }
        counts
    }
}

struct Builder<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha8Rng,
    posts: Vec<Post>,
    clock: u64,
}

impl Builder<'_> {
    fn text(&mut self, stance: Option<Stance>) -> String {
        let mut words: Vec<String> = (0..self.spec.filler_per_post)
            .map(|_| format!("w{}", self.rng.gen_range(0..self.spec.filler_vocabulary)))
            .collect();
        if let Some(s) = stance {
            let word = s.words().choose(&mut self.rng).expect("non-empty pool");
            let at = self.rng.gen_range(0..=words.len());
            words.insert(at, word.to_string());
        }
        if words.is_empty() {
            words.push("w".to_string());
        }
        words.join(" ")
    }

    fn post(&mut self, parent: Option<usize>, stance: Option<Stance>) -> usize {
        let id = self.posts.len();
        let timestamp = if parent.is_none() {
            0
        } else {
            self.clock += self.rng.gen_range(1..=self.spec.max_gap.max(1));
            self.clock
        };
        let text = self.text(stance);
        let parent_id = parent.map(|p| format!("p{p}"));
        self.posts.push(Post::new(&format!("p{id}"), parent_id.as_deref(), timestamp, &text));
        id
    }

    fn distractor(&mut self) -> Option<Stance> {
        if self.rng.gen_bool(self.spec.distractor_rate) {
            Some(*Stance::ALL.choose(&mut self.rng).expect("stances"))
        } else {
            None
        }
    }

    /// Grows replies below `roots` breadth-first up to depth `max_depth`.
    fn grow(&mut self, roots: &[usize], max_depth: usize) {
        let mut frontier: Vec<(usize, usize)> = roots.iter().map(|&r| (r, 1)).collect();
        let [lo, hi] = self.spec.branching;
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for (node, depth) in frontier {
                if depth >= max_depth {
                    continue;
                }
                let n = self.rng.gen_range(lo..=hi);
                for _ in 0..n {
                    if self.posts.len() >= self.spec.max_posts {
                        return;
                    }
                    let stance = self.distractor();
                    let child = self.post(Some(node), stance);
                    next.push((child, depth + 1));
                }
            }
            frontier = next;
        }
    }
}

/// Direct-reply stances: rumor iff deny+question outnumber support.
fn split_count(rng: &mut ChaCha8Rng, total: usize, favoured: Label) -> Vec<Stance> {
    let against = match favoured {
        Label::Rumor => rng.gen_range(total / 2 + 1..=total),
        _ => rng.gen_range(0..=total / 2),
    };
    let mut out: Vec<Stance> = (0..total)
        .map(|i| {
            if i < against {
                if rng.gen_bool(0.5) {
                    Stance::Deny
                } else {
                    Stance::Question
                }
            } else {
                Stance::Support
            }
        })
        .collect();
    out.shuffle(rng);
    out
}

fn dominant_counts(rng: &mut ChaCha8Rng, total: usize, label: Label) -> Vec<Option<Stance>> {
    let winner: Option<Stance> = match label {
        Label::TrueRumor => Some(Stance::Support),
        Label::FalseRumor => Some(Stance::Deny),
        Label::Unverified => Some(Stance::Question),
        _ => None,
    };
    let kinds: Vec<Option<Stance>> = std::iter::once(None).chain(Stance::ALL.map(Some)).collect();
    // winner takes a strict plurality; others share the rest
    let top = total / 2 + 1;
    let mut out = vec![winner; top.min(total)];
    let others: Vec<Option<Stance>> = kinds.into_iter().filter(|k| *k != winner).collect();
    let mut counts = vec![0usize; others.len()];
    for _ in out.len()..total {
        let i = rng.gen_range(0..others.len());
        counts[i] += 1;
        out.push(others[i]);
    }
    debug_assert!(counts.iter().all(|&c| c < top));
    out.shuffle(rng);
    out
}

/// Deny counts per group for one sibling-rule event.
fn sibling_groups(rng: &mut ChaCha8Rng, spec: &SynthSpec, rumor: bool) -> Result<Vec<usize>> {
    let (h, m) = (spec.hubs, spec.group_size);
    let leaning = |g: &[usize]| g.iter().filter(|&&d| 2 * d > m).count() * 2 > h;
    if !rng.gen_bool(spec.signal_strength) {
        // easy event: every group leans the label's way
        let groups = (0..h)
            .map(|_| if rumor { rng.gen_range(m / 2 + 1..=m) } else { rng.gen_range(0..=m / 2) })
            .collect();
        return Ok(groups);
    }
    let total = h * m;
    let lo = total / 2;
    let hi = total.div_ceil(2);
    let target = if rng.gen_bool(0.5) { lo } else { hi };
    // all compositions with the target tally and the right majority
    let mut candidates = Vec::new();
    let mut g = vec![0usize; h];
    loop {
        if g.iter().sum::<usize>() == target && leaning(&g) == rumor {
            candidates.push(g.clone());
        }
        let mut i = 0;
        loop {
            if i == h {
                break;
            }
            g[i] += 1;
            if g[i] <= m {
                break;
            }
            g[i] = 0;
            i += 1;
        }
        if i == h {
            break;
        }
    }
    candidates
        .choose(rng)
        .cloned()
        .ok_or_else(|| Error::Config(format!("no {h}×{m} sibling layout with a balanced tally")))
}

fn generate_one(spec: &SynthSpec, index: usize, label: Label) -> Result<Event> {
    let mut b = Builder {
        spec,
        rng: seed::rng(spec.seed, &format!("event/{index}")),
        posts: Vec::new(),
        clock: 0,
    };
    let claim = b.post(None, None);
    match spec.rule {
        LabelRule::DirectReply => {
            let [lo, hi] = spec.branching;
            let max_depth = b.rng.gen_range(spec.depth[0]..=spec.depth[1]);
            let direct = b.rng.gen_range(lo.max(1)..=hi).min(spec.max_posts - 1);
            let stances = split_count(&mut b.rng, direct, label);
            let replies: Vec<usize> = stances.into_iter().map(|s| b.post(Some(claim), Some(s))).collect();
            b.grow(&replies, max_depth);
        }
        LabelRule::DominantStance => {
            let [lo, hi] = spec.branching;
            let max_depth = b.rng.gen_range(spec.depth[0]..=spec.depth[1]);
            let direct = b.rng.gen_range(lo.max(1)..=hi).min(spec.max_posts - 1);
            let replies: Vec<usize> = (0..direct).map(|_| b.post(Some(claim), None)).collect();
            b.grow(&replies, max_depth);
            let stances = dominant_counts(&mut b.rng, b.posts.len() - 1, label);
            let texts: Vec<String> = stances.iter().map(|&s| b.text(s)).collect();
            for (post, text) in b.posts[1..].iter_mut().zip(texts) {
                post.text = text;
            }
        }
        LabelRule::SiblingMajority => {
            let groups = sibling_groups(&mut b.rng, spec, label == Label::Rumor)?;
            let hubs: Vec<usize> = (0..spec.hubs).map(|_| b.post(Some(claim), None)).collect();
            for (&hub, &deny) in hubs.iter().zip(&groups) {
                let mut stances: Vec<Stance> = (0..spec.group_size)
                    .map(|i| if i < deny { Stance::Deny } else { Stance::Support })
                    .collect();
                stances.shuffle(&mut b.rng);
                for s in stances {
                    b.post(Some(hub), Some(s));
                }
            }
        }
    }
    Event::new(format!("e{index:05}"), label, b.posts)
}

/// Generates a corpus following `spec.rule`. Labels are exact per
/// `class_counts` before any noise.
pub fn generate(spec: &SynthSpec) -> Result<Vec<Event>> {
    spec.validate()?;
    let scheme = spec.rule.scheme();
    let mut labels: Vec<Label> = spec
        .class_counts()
        .iter()
        .enumerate()
        .flat_map(|(c, &n)| std::iter::repeat_n(scheme.label(c).expect("class"), n))
        .collect();
    labels.shuffle(&mut seed::rng(spec.seed, "labels"));
    let mut noise_rng = seed::rng(spec.seed, "noise");
    labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| {
            let mut event = generate_one(spec, i, label)?;
            if spec.noise > 0.0 && noise_rng.gen_bool(spec.noise) {
                let others: Vec<Label> = scheme.classes().iter().copied().filter(|&l| l != label).collect();
                let flipped = *others.choose(&mut noise_rng).expect("two or more classes");
                event = Event::new(event.id(), flipped, event.posts().cloned().collect())?;
            }
            Ok(event)
        })
        .collect()
}

/// Label the planted rule assigns, read back from the stance words.
pub fn rule_oracle(rule: LabelRule, event: &Event) -> Label {
    let parents = event.parent_indices();
    let posts: Vec<&Post> = event.posts().collect();
    let stance = |i: usize| Stance::of_text(&posts[i].text);
    match rule {
        LabelRule::DirectReply => {
            let (mut support, mut against) = (0, 0);
            for (i, parent) in parents.iter().enumerate().skip(1) {
                if *parent == Some(0) {
                    match stance(i) {
                        Some(Stance::Support) => support += 1,
                        Some(_) => against += 1,
                        None => {}
                    }
                }
            }
            if against > support {
                Label::Rumor
            } else {
                Label::NotRumor
            }
        }
        LabelRule::DominantStance => {
            let mut counts: HashMap<Option<Stance>, usize> = HashMap::new();
            for i in 1..posts.len() {
                *counts.entry(stance(i)).or_default() += 1;
            }
            let best = counts.iter().max_by_key(|(_, &c)| c).map(|(s, _)| *s).unwrap_or(None);
            match best {
                Some(Stance::Support) => Label::TrueRumor,
                Some(Stance::Deny) => Label::FalseRumor,
                Some(Stance::Question) => Label::Unverified,
                None => Label::NonRumor,
            }
        }
        LabelRule::SiblingMajority => {
            let mut groups: HashMap<usize, (usize, usize)> = HashMap::new();
            for (i, parent) in parents.iter().enumerate().skip(1) {
                if let (Some(p), Some(s)) = (*parent, stance(i)) {
                    let g = groups.entry(p).or_default();
                    if s == Stance::Deny {
                        g.0 += 1;
                    } else {
                        g.1 += 1;
                    }
                }
            }
            let leaning = groups.values().filter(|(d, s)| d > s).count();
            if 2 * leaning > groups.len() {
                Label::Rumor
            } else {
                Label::NotRumor
            }
        }
    }
}

/// Sibling corpus plus the best accuracy any rule can reach that sees one
/// root-to-leaf reply path at a time.
#[derive(Clone, Debug)]
pub struct SiblingCorpus {
    pub events: Vec<Event>,
    pub path_ceiling: f64,
}

/// Exhaustive path-feature oracle: groups every root-to-leaf path by its
/// stance sequence and credits each group with its most common label.
pub fn path_only_ceiling(events: &[Event]) -> f64 {
    let mut table: HashMap<Vec<Option<Stance>>, HashMap<Label, usize>> = HashMap::new();
    let mut total = 0usize;
    for event in events {
        let parents = event.parent_indices();
        let posts: Vec<&Post> = event.posts().collect();
        let has_child: Vec<bool> = (0..posts.len()).map(|i| parents.contains(&Some(i))).collect();
        for leaf in (0..posts.len()).filter(|&i| !has_child[i]) {
            let mut path = Vec::new();
            let mut at = Some(leaf);
            while let Some(i) = at {
                path.push(Stance::of_text(&posts[i].text));
                at = parents[i];
            }
            path.reverse();
            *table.entry(path).or_default().entry(event.label()).or_default() += 1;
            total += 1;
        }
    }
    let best: usize = table.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    best as f64 / total.max(1) as f64
}

/// The sibling-majority corpus at full signal strength.
pub fn sibling_task(spec: &SynthSpec) -> Result<SiblingCorpus> {
    if spec.signal_strength != 1.0 {
        return Err(Error::Config(format!(
            "sibling task needs signal strength 1, got {}",
            spec.signal_strength
        )));
    }
    let spec = SynthSpec {
        rule: LabelRule::SiblingMajority,
        ..spec.clone()
    };
    let events = generate(&spec)?;
    let path_ceiling = path_only_ceiling(&events);
    Ok(SiblingCorpus { events, path_ceiling })
}
