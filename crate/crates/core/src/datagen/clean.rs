use std::collections::HashSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooShort,
    Gibberish,
    MentionsTarget,
    Duplicate,
}

const MIN_WORDS: usize = 4;

/// Filters generated intention texts.
///
/// Checks run in the order short, gibberish, target mention, duplicate; the
/// first failing check names the reason.
pub fn clean_texts(
    texts: &[String],
    target_class: &str,
    banned_terms: &HashSet<String>,
) -> (Vec<String>, Vec<(String, RejectReason)>) {
    let mut kept: Vec<String> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut rejected = Vec::new();
    let mut terms: Vec<Vec<String>> = banned_terms.iter().map(|t| words(t)).collect();
    terms.push(words(target_class));
    terms.retain(|t| !t.is_empty());

    for text in texts {
        let reason = if text.split_whitespace().count() < MIN_WORDS {
            Some(RejectReason::TooShort)
        } else if is_gibberish(text) {
            Some(RejectReason::Gibberish)
        } else if mentions_any(text, &terms) {
            Some(RejectReason::MentionsTarget)
        } else if seen.contains(text.as_str()) {
            Some(RejectReason::Duplicate)
        } else {
            None
        };
        match reason {
            Some(r) => rejected.push((text.clone(), r)),
            None => {
                seen.insert(text.clone());
                kept.push(text.clone());
            }
        }
    }
    (kept, rejected)
}

fn words(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric() && c != '\'')
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn mentions_any(text: &str, terms: &[Vec<String>]) -> bool {
    let ws = words(text);
    terms.iter().any(|term| {
        ws.windows(term.len()).any(|win| {
            win.iter().zip(term).all(|(w, t)| w == t || w.strip_suffix('s') == Some(t.as_str()))
        })
    })
}

/// Control characters, replacement characters, literal `\uXXXX` escapes, or a
/// word mixing ASCII letters with non-ASCII letters ("duratioн").
fn is_gibberish(text: &str) -> bool {
    if text.chars().any(|c| c.is_control() || c == '\u{fffd}') {
        return true;
    }
    let b = text.as_bytes();
    for i in 0..b.len() {
        if b[i] == b'\\' && i + 1 < b.len() && (b[i + 1] == b'u' || b[i + 1] == b'U') {
            let hex = &b[i + 2..b.len().min(i + 6)];
            if hex.len() == 4 && hex.iter().all(u8::is_ascii_hexdigit) {
                return true;
            }
        }
    }
    text.split_whitespace().any(|w| {
        w.chars().any(|c| c.is_ascii_alphabetic()) && w.chars().any(|c| c.is_alphabetic() && !c.is_ascii())
    })
}
