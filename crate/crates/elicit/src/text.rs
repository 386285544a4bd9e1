//! Shared text conventions: tokenization, style-marker token lists, and
//! skill-phrase parsing.
//!
//! Every component that reads response text (the simulator's recounting,
//! the embedding features, the trait scorers) goes through these functions
//! so that marker counts and skill mentions are defined exactly once.

use std::collections::BTreeSet;

/// Tokens counted as hedging markers.
pub const HEDGE_TOKENS: [&str; 4] = ["perhaps", "maybe", "somewhat", "arguably"];

/// Tokens counted as boasting markers.
pub const BOAST_TOKENS: [&str; 4] = ["definitely", "certainly", "absolutely", "proudly"];

/// Tokens counted as filler markers.
pub const FILLER_TOKENS: [&str; 4] = ["well", "um", "honestly", "anyway"];

/// Neutral day-to-day vocabulary for padding responses. Disjoint from the
/// marker lists and from every bank skill token.
pub const CHATTER_TOKENS: [&str; 24] = [
    "mornings",
    "afternoons",
    "routines",
    "notebooks",
    "whiteboards",
    "commutes",
    "inboxes",
    "huddles",
    "standups",
    "retros",
    "memos",
    "spreadsheets",
    "dashboards",
    "printouts",
    "keyboards",
    "calendars",
    "hallways",
    "offices",
    "desks",
    "chairs",
    "coffees",
    "lunches",
    "elevators",
    "stairwells",
];

/// Trigger phrase for an affirmed skill: `... skilled in <skill>`.
const AFFIRM_TRIGGER: [&str; 2] = ["skilled", "in"];

/// Trigger phrase for a hypothetical skill: `if i had <skill>`.
const HYPO_TRIGGER: [&str; 3] = ["if", "i", "had"];

/// Per-class style-marker counts for one piece of text.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StyleMarkers {
    pub hedge: usize,
    pub boast: usize,
    pub filler: usize,
}

impl StyleMarkers {
    pub fn total(&self) -> usize {
        self.hedge + self.boast + self.filler
    }
}

/// Lowercases, splits on whitespace, and strips surrounding ASCII
/// punctuation. Standalone punctuation tokens disappear.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| c.is_ascii_punctuation())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Counts marker tokens in already-tokenized text.
pub fn count_markers(tokens: &[String]) -> StyleMarkers {
    let mut m = StyleMarkers::default();
    for t in tokens {
        if HEDGE_TOKENS.contains(&t.as_str()) {
            m.hedge += 1;
        } else if BOAST_TOKENS.contains(&t.as_str()) {
            m.boast += 1;
        } else if FILLER_TOKENS.contains(&t.as_str()) {
            m.filler += 1;
        }
    }
    m
}

/// Skill mentions recovered from one text, split by phrasing.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Mentions {
    /// Skills claimed outright ("i am skilled in X").
    pub affirmed: BTreeSet<String>,
    /// Skills raised hypothetically ("if i had X").
    pub hypothetical: BTreeSet<String>,
}

impl Mentions {
    pub fn all(&self) -> BTreeSet<String> {
        self.affirmed.union(&self.hypothetical).cloned().collect()
    }
}

/// Scans tokenized text for the affirm/hypothetical trigger phrases and
/// greedily matches the longest vocabulary skill after each trigger.
pub fn parse_mentions(tokens: &[String], vocab: &[Vec<String>]) -> Mentions {
    let mut out = Mentions::default();
    for i in 0..tokens.len() {
        if phrase_at(tokens, i, &AFFIRM_TRIGGER) {
            if let Some(skill) = match_skill(tokens, i + AFFIRM_TRIGGER.len(), vocab) {
                out.affirmed.insert(skill);
            }
        }
        if phrase_at(tokens, i, &HYPO_TRIGGER) {
            if let Some(skill) = match_skill(tokens, i + HYPO_TRIGGER.len(), vocab) {
                out.hypothetical.insert(skill);
            }
        }
    }
    out
}

/// Splits each vocabulary skill into tokens, longest skill first, for use
/// with [`parse_mentions`].
pub fn vocab_tokens(vocab: &[String]) -> Vec<Vec<String>> {
    let mut toks: Vec<Vec<String>> = vocab
        .iter()
        .map(|s| s.split_whitespace().map(str::to_string).collect())
        .collect();
    toks.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    toks
}

fn phrase_at(tokens: &[String], at: usize, phrase: &[&str]) -> bool {
    tokens.len() >= at + phrase.len()
        && phrase
            .iter()
            .zip(&tokens[at..])
            .all(|(p, t)| *p == t.as_str())
}

fn match_skill(tokens: &[String], at: usize, vocab: &[Vec<String>]) -> Option<String> {
    for skill in vocab {
        if tokens.len() >= at + skill.len()
            && skill.iter().zip(&tokens[at..]).all(|(s, t)| s == t)
        {
            return Some(skill.join(" "));
        }
    }
    None
}

/// 64-bit FNV-1a over a byte string.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Mixes a base seed with stream tags into a fresh 64-bit seed. Used to
/// derive independent, reproducible RNG streams.
pub fn mix_seed(base: u64, tags: &[u64]) -> u64 {
    let mut buf = Vec::with_capacity(8 * (1 + tags.len()));
    buf.extend_from_slice(&base.to_le_bytes());
    for t in tags {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    fnv1a(&buf)
}
