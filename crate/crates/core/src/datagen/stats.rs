use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSplit;
use crate::text::{tokenize_and_tag, Pos, Tagger, TextError, TEMPLATE_STEMS};

/// Corpus summary over every split given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total_texts: usize,
    pub num_fine_classes: usize,
    pub num_scenes: usize,
    /// Whitespace word count -> number of texts.
    pub text_length_histogram: BTreeMap<usize, usize>,
    /// Distinct verbs used in texts targeting each class.
    pub verbs_per_class: BTreeMap<String, usize>,
    /// Distinct nouns used in texts targeting each class.
    pub nouns_per_class: BTreeMap<String, usize>,
    pub distinct_verbs: usize,
    pub distinct_nouns: usize,
}

impl DatasetStats {
    pub fn mean_text_length(&self) -> f64 {
        if self.total_texts == 0 {
            return 0.0;
        }
        let words: usize = self.text_length_histogram.iter().map(|(len, n)| len * n).sum();
        words as f64 / self.total_texts as f64
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "texts           {}", self.total_texts)?;
        writeln!(f, "fine classes    {}", self.num_fine_classes)?;
        writeln!(f, "scenes          {}", self.num_scenes)?;
        writeln!(f, "mean length     {:.2} words", self.mean_text_length())?;
        writeln!(f, "distinct verbs  {}", self.distinct_verbs)?;
        write!(f, "distinct nouns  {}", self.distinct_nouns)
    }
}

/// Counts texts, classes, scenes, lengths and per-class verb/noun vocabularies.
///
/// Template stems ("want", "need", ...) are not counted as verbs and the
/// pronoun "I" is never counted as a noun.
pub fn compute_statistics(splits: &[DatasetSplit], tagger: &dyn Tagger) -> Result<DatasetStats, TextError> {
    let mut histogram = BTreeMap::new();
    let mut classes: BTreeSet<&str> = BTreeSet::new();
    let mut scenes: BTreeSet<&str> = BTreeSet::new();
    let mut verbs: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    let mut nouns: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    let mut total = 0;

    for sample in splits.iter().flat_map(|s| &s.samples) {
        total += 1;
        classes.insert(&sample.target_fine_class);
        scenes.insert(&sample.scene_id);
        *histogram.entry(sample.text.split_whitespace().count()).or_insert(0) += 1;

        let tagged = tokenize_and_tag(&sample.text, tagger)?;
        let words = tagged.len() - usize::from(tagged.has_sentinel);
        let v = verbs.entry(&sample.target_fine_class).or_default();
        let n = nouns.entry(&sample.target_fine_class).or_default();
        for (tok, pos) in tagged.tokens.iter().zip(&tagged.pos).take(words) {
            let w = tok.to_lowercase();
            match pos {
                Pos::Verb if !TEMPLATE_STEMS.contains(&w.as_str()) => {
                    v.insert(w);
                }
                Pos::Noun if w != "i" => {
                    n.insert(w);
                }
                _ => {}
            }
        }
    }

    let union = |m: &BTreeMap<&str, BTreeSet<String>>| m.values().flatten().collect::<BTreeSet<_>>().len();
    Ok(DatasetStats {
        total_texts: total,
        num_fine_classes: classes.len(),
        num_scenes: scenes.len(),
        text_length_histogram: histogram,
        distinct_verbs: union(&verbs),
        distinct_nouns: union(&nouns),
        verbs_per_class: verbs.iter().map(|(c, s)| (c.to_string(), s.len())).collect(),
        nouns_per_class: nouns.iter().map(|(c, s)| (c.to_string(), s.len())).collect(),
    })
}
