//! Tokenization, part-of-speech tagging and verb-object extraction.
//!
//! The [`Tagger`] trait is the adapter slot for an external NLP pipeline. The
//! shipped [`LexiconTagger`] is a deterministic word-list tagger with one
//! dependency rule: a verb's direct object is the head noun of the noun phrase
//! immediately following it.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

/// Appended to every tokenized sentence; unmatched queries align to it.
pub const SENTINEL: &str = "not mentioned";

/// Intention-template stems. They stay verbs in the token stream but are
/// excluded from vocabulary statistics.
pub const TEMPLATE_STEMS: [&str; 4] = ["want", "need", "intend", "aim"];

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TextError {
    #[error("cannot tokenize empty text")]
    EmptyText,
    #[error("tagger failed on {text:?}: {message}")]
    Tagging { text: String, message: String },
    #[error("rejected input: {0}")]
    Rejected(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Pos {
    Noun,
    Verb,
    Pron,
    Det,
    Adp,
    Adj,
    Adv,
    /// Particles such as the infinitive marker "to".
    Part,
    Conj,
    Num,
    Punct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepLabel {
    Root,
    Dobj,
    Dep,
}

/// One token's tag as produced by a [`Tagger`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTag {
    pub pos: Pos,
    pub head: Option<usize>,
    pub dep: DepLabel,
}

/// Maps a token list to coarse POS tags and head links.
///
/// Implementations must be deterministic and return exactly one tag per token.
pub trait Tagger {
    fn tag(&self, tokens: &[String]) -> Result<Vec<TokenTag>, String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
    pub pos: Vec<Pos>,
    pub verb_positions: Vec<bool>,
    /// `(verb index, object index)` links.
    pub pairs: Vec<(usize, usize)>,
    pub has_sentinel: bool,
    /// Set when the input was cut to fit a length limit.
    #[serde(default)]
    pub truncated: bool,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn verb_indices(&self) -> Vec<usize> {
        self.verb_positions
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.then_some(i))
            .collect()
    }

    pub fn sentinel_index(&self) -> Option<usize> {
        self.has_sentinel.then(|| self.tokens.len() - 1)
    }

    /// Cuts the sentence so that it, plus the sentinel, fits in `max_len`.
    pub fn truncate_to(&mut self, max_len: usize) {
        if self.tokens.len() <= max_len || max_len == 0 {
            return;
        }
        let keep = if self.has_sentinel { max_len - 1 } else { max_len };
        let sentinel = self.has_sentinel.then(|| self.tokens.last().cloned().unwrap());
        self.tokens.truncate(keep);
        self.pos.truncate(keep);
        self.verb_positions.truncate(keep);
        self.pairs.retain(|&(v, o)| v < keep && o < keep);
        if let Some(s) = sentinel {
            self.tokens.push(s);
            self.pos.push(Pos::Noun);
            self.verb_positions.push(false);
        }
        self.truncated = true;
    }
}

/// Splits on whitespace, then peels punctuation off into separate tokens.
/// Apostrophes inside a word stay attached ("don't").
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut cur = String::new();
        let chars: Vec<char> = chunk.chars().collect();
        for (i, &ch) in chars.iter().enumerate() {
            let inner_apostrophe = ch == '\''
                && i > 0
                && i + 1 < chars.len()
                && chars[i - 1].is_alphanumeric()
                && chars[i + 1].is_alphanumeric();
            if ch.is_ascii_punctuation() && !inner_apostrophe {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// Tokenizes, tags, extracts verb-object pairs and appends the sentinel.
pub fn tokenize_and_tag(text: &str, tagger: &dyn Tagger) -> Result<TokenizedText, TextError> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(TextError::EmptyText);
    }
    let tags = tagger.tag(&tokens).map_err(|message| TextError::Tagging {
        text: text.to_string(),
        message,
    })?;
    if tags.len() != tokens.len() {
        return Err(TextError::Tagging {
            text: text.to_string(),
            message: format!("{} tags for {} tokens", tags.len(), tokens.len()),
        });
    }
    let mut verb_positions: Vec<bool> = tags.iter().map(|t| t.pos == Pos::Verb).collect();
    let mut pairs: Vec<(usize, usize)> = tags
        .iter()
        .enumerate()
        .filter_map(|(i, t)| match (t.dep, t.head) {
            (DepLabel::Dobj, Some(h)) if h < tokens.len() && tags[h].pos == Pos::Verb => Some((h, i)),
            _ => None,
        })
        .collect();
    pairs.sort_unstable();

    let mut pos: Vec<Pos> = tags.iter().map(|t| t.pos).collect();
    let mut tokens = tokens;
    tokens.push(SENTINEL.to_string());
    pos.push(Pos::Noun);
    verb_positions.push(false);
    Ok(TokenizedText {
        tokens,
        pos,
        verb_positions,
        pairs,
        has_sentinel: true,
        truncated: false,
    })
}

/// Softmax of the binary verb-position vector over the positions where
/// `mask` is true; masked positions get probability 0.
pub fn verb_distribution(v_pos: &[bool], mask: &[bool]) -> Result<Vec<f64>, TextError> {
    if v_pos.len() != mask.len() {
        return Err(TextError::Rejected(format!(
            "verb vector has {} entries but mask has {}",
            v_pos.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|m| *m) {
        return Err(TextError::Rejected("all positions are masked".into()));
    }
    // max over valid entries is 1 if any verb is valid, else 0
    let shift = if v_pos.iter().zip(mask).any(|(v, m)| *v && *m) { 1.0 } else { 0.0 };
    let weights: Vec<f64> = v_pos
        .iter()
        .zip(mask)
        .map(|(&v, &m)| if m { (f64::from(u8::from(v)) - shift).exp() } else { 0.0 })
        .collect();
    let z: f64 = weights.iter().sum();
    Ok(weights.into_iter().map(|w| w / z).collect())
}

/// [`verb_distribution`] with the first `valid_len` positions unmasked.
pub fn verb_distribution_prefix(v_pos: &[bool], valid_len: usize) -> Result<Vec<f64>, TextError> {
    let mask: Vec<bool> = (0..v_pos.len()).map(|i| i < valid_len).collect();
    verb_distribution(v_pos, &mask)
}

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "another",
    "my", "your", "his", "her", "its", "our", "their", "all", "few", "more",
];
const PRONOUNS: &[&str] = &[
    "i", "me", "you", "he", "she", "it", "we", "they", "them", "us", "him", "myself", "yourself",
    "ourselves", "themselves", "mine", "yours",
];
const ADPOSITIONS: &[&str] = &[
    "in", "on", "at", "with", "for", "from", "of", "by", "into", "onto", "during", "while",
    "after", "before", "about", "under", "over", "near", "through", "without", "between", "like",
    "around", "across", "off", "up", "out",
];
const ADVERBS: &[&str] = &[
    "down", "here", "there", "away", "back", "quickly", "easily", "comfortably", "properly",
    "safely", "again", "together", "somewhere", "quietly", "neatly", "later", "now", "well",
    "late", "outside", "inside", "warm", "cool", "dry", "clean", "fresh", "tidy", "organized",
    "bright", "open", "closed", "asleep",
];
const CONJUNCTIONS: &[&str] = &["and", "or", "but", "so", "because", "if", "when"];
const ADJECTIVES: &[&str] = &[
    "hot", "cold", "dirty", "new", "old", "favorite", "important", "daily", "morning", "evening",
    "late-night", "tired", "heavy", "small", "large", "long", "short", "wet", "quick", "good",
    "comfortable", "spare", "weekly", "leftover", "loose", "fresh-brewed", "personal", "whole",
    "online", "cozy",
];
/// Base forms. Inflected forms (-s, -es, -ed, -ing) are recognized by stemming.
const VERBS: &[&str] = &[
    "want", "need", "intend", "aim", "sit", "rest", "relax", "sleep", "lie", "nap", "eat", "dine",
    "drink", "serve", "place", "put", "store", "keep", "hang", "wash", "rinse", "dry", "cook",
    "heat", "warm", "cool", "chill", "read", "write", "study", "work", "type", "print", "watch",
    "display", "present", "show", "play", "listen", "light", "illuminate", "see", "throw",
    "dispose", "discard", "toss", "recycle", "organize", "arrange", "sort", "support", "lean",
    "prop", "file", "hold", "carry", "open", "close", "shut", "lock", "brush", "shower", "bathe",
    "flush", "change", "wear", "fold", "iron", "check", "fix", "charge", "stream", "browse",
    "stack", "shelve", "lay", "spread", "fill", "pour", "boil", "brew", "bake", "grill", "clean",
    "wipe", "stretch", "recline", "lounge", "unwind", "stash", "tuck", "stow", "dump", "preserve",
    "freeze", "refrigerate", "reheat", "microwave", "browse", "edit", "review", "draft", "sign",
    "copy", "scan", "hear", "enjoy", "block", "dim", "brighten", "view", "admire", "hide",
    "cover", "protect", "rest", "elevate", "cushion", "sip", "grab", "fetch", "set", "mount",
    "frame", "shade", "seat", "host", "gather", "meet", "chat", "talk", "call", "stand", "wait",
    "make", "do", "get", "take", "use", "find", "give", "go", "come", "look", "try", "let",
    "help", "feel", "bring", "send", "plan", "share", "cut", "chop", "mix", "bathe", "soak",
    "groom", "shave", "style", "blow", "water", "grow", "feed", "pack", "unpack", "load",
    "unload", "spin", "hand", "relieve", "ease", "avoid", "reach", "climb", "step", "recover",
    "cure", "cuddle", "entertain", "receive", "spend", "follow", "catch", "design", "debug",
    "sketch", "finish", "solve", "create", "knit", "soften", "chase", "ditch", "scrub", "drain",
    "empty", "sit", "rest",
];

/// Word-list tagger covering everyday intention vocabulary.
///
/// Unknown alphabetic words are tagged as nouns.
#[derive(Debug, Clone)]
pub struct LexiconTagger {
    verbs: HashSet<String>,
    nouns: HashSet<String>,
}

impl Default for LexiconTagger {
    fn default() -> Self {
        Self {
            verbs: VERBS.iter().map(|s| s.to_string()).collect(),
            nouns: HashSet::new(),
        }
    }
}

impl LexiconTagger {
    /// Adds extra base-form verbs.
    pub fn with_verbs<I: IntoIterator<Item = S>, S: Into<String>>(mut self, verbs: I) -> Self {
        self.verbs.extend(verbs.into_iter().map(Into::into));
        self
    }

    /// Words that must be nouns even if they look like verbs or adverbs.
    pub fn with_nouns<I: IntoIterator<Item = S>, S: Into<String>>(mut self, nouns: I) -> Self {
        self.nouns.extend(nouns.into_iter().map(Into::into));
        self
    }

    fn is_verb(&self, w: &str) -> bool {
        if self.verbs.contains(w) {
            return true;
        }
        for suffix in ["ing", "es", "s", "ed", "d"] {
            let Some(stem) = w.strip_suffix(suffix) else { continue };
            if stem.len() < 2 {
                continue;
            }
            if self.verbs.contains(stem) {
                return true;
            }
            if matches!(suffix, "ing" | "ed") {
                // "making" -> "make", "stopped" -> "stop"
                if self.verbs.contains(&format!("{stem}e")) {
                    return true;
                }
                let b = stem.as_bytes();
                if b[b.len() - 1] == b[b.len() - 2] && self.verbs.contains(&stem[..stem.len() - 1]) {
                    return true;
                }
            }
        }
        false
    }

    fn pos_of(&self, word: &str, prev: Option<Pos>) -> Pos {
        let w = word.to_lowercase();
        if w.chars().all(|c| c.is_ascii_punctuation()) {
            return Pos::Punct;
        }
        if w.chars().all(|c| c.is_ascii_digit()) {
            return Pos::Num;
        }
        if self.nouns.contains(&w) {
            return Pos::Noun;
        }
        if w == "to" {
            return Pos::Part;
        }
        if PRONOUNS.contains(&w.as_str()) {
            return Pos::Pron;
        }
        if DETERMINERS.contains(&w.as_str()) {
            return Pos::Det;
        }
        if CONJUNCTIONS.contains(&w.as_str()) {
            return Pos::Conj;
        }
        // after "to", a subject pronoun or a conjunction a verb reading wins
        let verb_slot = matches!(prev, Some(Pos::Part) | Some(Pos::Pron) | Some(Pos::Conj) | None);
        if verb_slot && self.is_verb(&w) {
            return Pos::Verb;
        }
        if ADJECTIVES.contains(&w.as_str()) {
            return Pos::Adj;
        }
        if matches!(prev, Some(Pos::Det) | Some(Pos::Adj)) {
            return Pos::Noun;
        }
        if ADPOSITIONS.contains(&w.as_str()) {
            return Pos::Adp;
        }
        if ADVERBS.contains(&w.as_str()) || (w.ends_with("ly") && w.len() > 4) {
            return Pos::Adv;
        }
        // a word right after a verb is read as its object
        if prev != Some(Pos::Verb) && self.is_verb(&w) {
            return Pos::Verb;
        }
        Pos::Noun
    }
}

impl Tagger for LexiconTagger {
    fn tag(&self, tokens: &[String]) -> Result<Vec<TokenTag>, String> {
        let mut pos: Vec<Pos> = Vec::with_capacity(tokens.len());
        for t in tokens {
            let p = self.pos_of(t, pos.last().copied());
            pos.push(p);
        }
        let mut tags: Vec<TokenTag> = pos
            .iter()
            .map(|&p| TokenTag {
                pos: p,
                head: None,
                dep: DepLabel::Dep,
            })
            .collect();
        if let Some(first_verb) = pos.iter().position(|p| *p == Pos::Verb) {
            tags[first_verb].dep = DepLabel::Root;
        }
        for (v, _) in pos.iter().enumerate().filter(|(_, p)| **p == Pos::Verb) {
            // skip the noun-phrase prefix, then take the last noun of the run
            let mut j = v + 1;
            while j < pos.len() && matches!(pos[j], Pos::Det | Pos::Adj | Pos::Num) {
                j += 1;
            }
            let start = j;
            while j < pos.len() && pos[j] == Pos::Noun {
                j += 1;
            }
            if j > start {
                let obj = j - 1;
                tags[obj].head = Some(v);
                tags[obj].dep = DepLabel::Dobj;
            }
        }
        Ok(tags)
    }
}
