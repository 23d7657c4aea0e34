//! Built-in class catalog and verb-object phrase bank used when no language
//! model is available.
//!
//! Every generated sentence has the shape `I <stem> to <verb> <object...>`,
//! so the gold verb-object pair is `(3, 3 + words in object)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DatagenError;

pub const STEMS: [&str; 4] = ["want", "need", "intend", "aim"];

#[derive(Debug, Clone, Copy)]
pub struct Phrase {
    pub verb: &'static str,
    /// Noun phrase; its last word is the direct object.
    pub object: &'static str,
}

#[derive(Debug, Clone, Copy)]
pub struct ClassTemplate {
    pub fine_class: &'static str,
    pub coarse_class: &'static str,
    /// Typical `(w, l, h)` in meters.
    pub size: [f64; 3],
    /// Mean RGB of the object's points, each in `[0, 1]`.
    pub color: [f64; 3],
    /// Words that would give the target away.
    pub banned: &'static [&'static str],
    pub phrases: &'static [Phrase],
}

macro_rules! phrases {
    ($($verb:literal => $object:literal),* $(,)?) => {
        &[$(Phrase { verb: $verb, object: $object }),*]
    };
}

pub const BANK: &[ClassTemplate] = &[
    ClassTemplate {
        fine_class: "chair",
        coarse_class: "chair",
        size: [0.5, 0.5, 0.9],
        color: [0.8, 0.2, 0.2],
        banned: &["seat", "stool", "armchair"],
        phrases: phrases![
            "rest" => "my legs",
            "relieve" => "my sore feet",
            "take" => "a short break",
            "ease" => "my spine",
            "eat" => "a quick snack",
            "sign" => "some documents",
        ],
    },
    ClassTemplate {
        fine_class: "table",
        coarse_class: "table",
        size: [1.4, 0.8, 0.75],
        color: [0.6, 0.4, 0.2],
        banned: &["desk"],
        phrases: phrases![
            "spread" => "my papers",
            "serve" => "the dinner",
            "lay" => "the plates",
            "play" => "a board game",
            "set" => "the silverware",
            "fold" => "the laundry",
        ],
    },
    ClassTemplate {
        fine_class: "bed",
        coarse_class: "bed",
        size: [2.0, 1.5, 0.5],
        color: [0.9, 0.9, 0.7],
        banned: &["mattress"],
        phrases: phrases![
            "stretch" => "my whole body",
            "recover" => "my energy",
            "cure" => "my insomnia",
            "change" => "the sheets",
            "tuck" => "the kids",
            "cuddle" => "my teddy",
        ],
    },
    ClassTemplate {
        fine_class: "sofa",
        coarse_class: "sofa",
        size: [2.0, 0.9, 0.8],
        color: [0.2, 0.5, 0.8],
        banned: &["couch", "loveseat"],
        phrases: phrases![
            "host" => "my guests",
            "entertain" => "my friends",
            "receive" => "some visitors",
            "enjoy" => "a lazy afternoon",
            "share" => "some popcorn",
            "spend" => "the weekend",
        ],
    },
    ClassTemplate {
        fine_class: "tv",
        coarse_class: "display",
        size: [1.2, 0.2, 0.7],
        color: [0.1, 0.1, 0.1],
        banned: &["television", "screen"],
        phrases: phrases![
            "watch" => "the news",
            "stream" => "a documentary",
            "play" => "some video games",
            "follow" => "my favorite series",
            "catch" => "the weather forecast",
            "see" => "the football highlights",
        ],
    },
    ClassTemplate {
        fine_class: "monitor",
        coarse_class: "display",
        size: [0.6, 0.2, 0.45],
        color: [0.2, 0.2, 0.3],
        banned: &["screen", "display"],
        phrases: phrases![
            "review" => "my spreadsheets",
            "edit" => "the photos",
            "check" => "my emails",
            "design" => "a website",
            "debug" => "my code",
            "draft" => "the report",
        ],
    },
    ClassTemplate {
        fine_class: "desk lamp",
        coarse_class: "lamp",
        size: [0.3, 0.3, 0.6],
        color: [1.0, 0.9, 0.3],
        banned: &["lamp", "light", "bulb"],
        phrases: phrases![
            "read" => "my novel",
            "sketch" => "some drawings",
            "illuminate" => "my notes",
            "study" => "the textbook",
            "finish" => "my homework",
            "solve" => "the crossword",
        ],
    },
    ClassTemplate {
        fine_class: "floor lamp",
        coarse_class: "lamp",
        size: [0.4, 0.4, 1.6],
        color: [1.0, 0.7, 0.0],
        banned: &["lamp", "light", "bulb"],
        phrases: phrases![
            "brighten" => "the dark corner",
            "create" => "a warm glow",
            "knit" => "a new scarf",
            "enjoy" => "some evening reading",
            "soften" => "the ambience",
            "chase" => "the shadows",
        ],
    },
    ClassTemplate {
        fine_class: "bookshelf",
        coarse_class: "shelf",
        size: [0.9, 0.35, 1.8],
        color: [0.5, 0.3, 0.1],
        banned: &["bookshelves", "shelf", "bookcase"],
        phrases: phrases![
            "organize" => "my books",
            "display" => "my trophies",
            "arrange" => "the novels",
            "store" => "some magazines",
            "keep" => "my records",
            "sort" => "my comics",
        ],
    },
    ClassTemplate {
        fine_class: "trash can",
        coarse_class: "bin",
        size: [0.35, 0.35, 0.5],
        color: [0.3, 0.6, 0.3],
        banned: &["can", "bin", "trash", "garbage"],
        phrases: phrases![
            "throw" => "the wrappers",
            "toss" => "the receipts",
            "discard" => "some tissues",
            "dump" => "the peels",
            "empty" => "my pockets",
            "ditch" => "the junk mail",
        ],
    },
    ClassTemplate {
        fine_class: "refrigerator",
        coarse_class: "appliance",
        size: [0.8, 0.7, 1.8],
        color: [0.95, 0.95, 0.95],
        banned: &["fridge", "freezer"],
        phrases: phrases![
            "chill" => "my drinks",
            "preserve" => "the vegetables",
            "keep" => "the milk",
            "cool" => "the watermelon",
            "freeze" => "some ice cubes",
            "refrigerate" => "the cheese",
        ],
    },
    ClassTemplate {
        fine_class: "sink",
        coarse_class: "sink",
        size: [0.6, 0.5, 0.9],
        color: [0.7, 0.8, 0.9],
        banned: &["basin", "faucet"],
        phrases: phrases![
            "wash" => "the dishes",
            "rinse" => "the fruit",
            "fill" => "a kettle",
            "scrub" => "the pots",
            "clean" => "my brushes",
            "drain" => "the pasta",
        ],
    },
    ClassTemplate {
        fine_class: "toilet",
        coarse_class: "toilet",
        size: [0.45, 0.7, 0.8],
        color: [1.0, 1.0, 1.0],
        banned: &["restroom", "bathroom", "loo", "lavatory"],
        phrases: phrases![
            "flush" => "the waste",
            "empty" => "my bladder",
            "use" => "the facilities",
            "do" => "my business",
            "take" => "a quick pee",
            "relieve" => "my urge",
        ],
    },
];

pub const SCENE_TYPES: &[&str] = &["office", "living room", "bedroom", "kitchen", "study"];

pub fn lookup(fine_class: &str) -> Option<&'static ClassTemplate> {
    BANK.iter().find(|c| c.fine_class == fine_class)
}

/// Banned terms for a class: its own name plus its synonyms.
pub fn banned_terms(fine_class: &str) -> Vec<String> {
    let mut out = vec![fine_class.to_string()];
    if let Some(t) = lookup(fine_class) {
        out.extend(t.banned.iter().map(|s| s.to_string()));
    }
    out
}

/// Ambiguity groups for the built-in catalog.
pub fn default_ambiguity_groups() -> Vec<std::collections::BTreeSet<String>> {
    vec![
        ["monitor", "tv"].into_iter().map(String::from).collect(),
        ["desk lamp", "floor lamp"].into_iter().map(String::from).collect(),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateText {
    pub text: String,
    pub pairs: Vec<(usize, usize)>,
}

pub fn render(stem: &str, phrase: &Phrase) -> TemplateText {
    let object_words = phrase.object.split_whitespace().count();
    TemplateText {
        text: format!("I {stem} to {} {}", phrase.verb, phrase.object),
        pairs: vec![(3, 3 + object_words)],
    }
}

/// `n` distinct sentences for `fine_class`, deterministic per seed.
pub fn template_texts(fine_class: &str, n: usize, seed: u64) -> Result<Vec<TemplateText>, DatagenError> {
    let template = lookup(fine_class)
        .ok_or_else(|| DatagenError::Rejected(format!("no template phrases for class {fine_class:?}")))?;
    let mut combos: Vec<(usize, usize)> = (0..template.phrases.len())
        .flat_map(|p| (0..STEMS.len()).map(move |s| (p, s)))
        .collect();
    if n > combos.len() {
        return Err(DatagenError::Rejected(format!(
            "{n} texts requested but class {fine_class:?} has only {} combinations",
            combos.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    combos.shuffle(&mut rng);
    // balance phrase usage so small n still covers several verbs
    let mut out = Vec::with_capacity(n);
    let mut used = vec![0usize; template.phrases.len()];
    let mut queue = combos;
    while out.len() < n {
        let min_use = *used.iter().min().unwrap();
        let pos = queue
            .iter()
            .position(|&(p, _)| used[p] == min_use)
            .unwrap_or(0);
        let (p, s) = queue.remove(pos);
        used[p] += 1;
        out.push(render(STEMS[s], &template.phrases[p]));
    }
    Ok(out)
}
