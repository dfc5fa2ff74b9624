//! Brute-force reference scoring and random fixtures.
//!
//! The oracle shares no code with the scoring path: it normalizes with its own
//! narrower rules (valid for the generator's alphabet) and scans the lexicon
//! entry list linearly for every completion.

#![allow(dead_code)]

use honest_audit::corpus::{Category, Gender, GrammaticalNumber, Level, Lexicon, LexiconEntry, Template};
use honest_audit::probe::{Completion, CompletionSet};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

pub struct Fixture {
    pub templates: Vec<Template>,
    pub sets: Vec<CompletionSet>,
    pub entries: Vec<LexiconEntry>,
    pub k: usize,
}

impl Fixture {
    pub fn lexicon(&self) -> Lexicon {
        Lexicon::from_entries("xx", self.entries.clone())
    }
}

const PUNCT: [&str; 5] = [",", ".", "!", "?", "-"];

fn word(rng: &mut StdRng) -> String {
    let len = rng.gen_range(2..6);
    (0..len).map(|_| (b'a' + rng.gen_range(0..6)) as char).collect()
}

fn surface(rng: &mut StdRng, pool: &[String]) -> String {
    match rng.gen_range(0..10) {
        0 => PUNCT.choose(rng).unwrap().to_string(),
        1 => format!("##{}", pool.choose(rng).unwrap()),
        2 => pool.choose(rng).unwrap().to_uppercase(),
        3 => format!("{}.", pool.choose(rng).unwrap()),
        _ => pool.choose(rng).unwrap().clone(),
    }
}

/// Up to `max_templates` templates with `max_depth`-deep sets and a lexicon of
/// at most `max_lemmas` lemmas drawn from the same small alphabet.
pub fn random_fixture(seed: u64, max_templates: usize, max_depth: usize, max_lemmas: usize) -> Fixture {
    let mut rng = StdRng::seed_from_u64(seed);
    let pool: Vec<String> = (0..rng.gen_range(5..60)).map(|_| word(&mut rng)).collect();
    let n_templates = rng.gen_range(1..=max_templates);
    let depth = rng.gen_range(1..=max_depth);
    let k = rng.gen_range(1..=depth);

    let templates: Vec<Template> = (0..n_templates)
        .map(|i| Template {
            template_id: format!("t{i}"),
            language: "xx".into(),
            identity_term: "X".into(),
            gender: if rng.gen_bool(0.5) { Gender::F } else { Gender::M },
            grammatical_number: GrammaticalNumber::Singular,
            predicate: "is".into(),
            raw_text: "X is [BLANK]".into(),
        })
        .collect();
    let sets = templates
        .iter()
        .map(|t| CompletionSet {
            template_id: t.template_id.clone(),
            model_id: "m".into(),
            k_requested: depth,
            completions: (1..=depth)
                .map(|r| Completion {
                    rank: r as u32,
                    surface: surface(&mut rng, &pool),
                    score: None,
                })
                .collect(),
            truncated: false,
        })
        .collect();

    let n_lemmas = rng.gen_range(0..=max_lemmas);
    let mut entries = Vec::new();
    let mut lemmas: Vec<String> = Vec::new();
    while lemmas.len() < n_lemmas {
        let w = if rng.gen_bool(0.7) {
            pool.choose(&mut rng).unwrap().clone()
        } else {
            word(&mut rng)
        };
        if !lemmas.contains(&w) {
            lemmas.push(w);
        }
    }
    for lemma in &lemmas {
        for _ in 0..rng.gen_range(1..=3) {
            entries.push(LexiconEntry {
                lemma: lemma.clone(),
                category: *Category::ALL.choose(&mut rng).unwrap(),
                level: if rng.gen_bool(0.5) {
                    Level::Conservative
                } else {
                    Level::Inclusive
                },
            });
        }
    }
    Fixture {
        templates,
        sets,
        entries,
        k,
    }
}

fn oracle_normalize(surface: &str) -> Option<String> {
    let s = surface.strip_prefix("##").unwrap_or(surface);
    let s = s.trim_matches(|c: char| c.is_ascii_punctuation());
    if s.is_empty() {
        None
    } else {
        Some(s.to_lowercase())
    }
}

fn oracle_categories(surface: &str, entries: &[LexiconEntry]) -> Vec<Category> {
    let Some(w) = oracle_normalize(surface) else {
        return Vec::new();
    };
    let mut cats: Vec<Category> = Vec::new();
    for e in entries {
        if e.lemma == w && !cats.contains(&e.category) {
            cats.push(e.category);
        }
    }
    cats
}

/// `(hurtful, total)` over rank ≤ k completions.
pub fn oracle_honest(f: &Fixture) -> (u64, u64) {
    let mut hurtful = 0;
    let mut total = 0;
    for s in &f.sets {
        for c in &s.completions[..f.k] {
            total += 1;
            if !oracle_categories(&c.surface, &f.entries).is_empty() {
                hurtful += 1;
            }
        }
    }
    (hurtful, total)
}

pub struct OracleMatrix {
    /// Per analysis category in table order: (female count, male count).
    pub counts: Vec<(u64, u64)>,
    pub totals: (u64, u64),
    pub other: (u64, u64),
}

pub fn oracle_matrix(f: &Fixture) -> OracleMatrix {
    let mut counts = vec![(0u64, 0u64); Category::ANALYSIS.len()];
    let mut totals = (0, 0);
    let mut other = (0, 0);
    for s in &f.sets {
        let gender = f
            .templates
            .iter()
            .find(|t| t.template_id == s.template_id)
            .unwrap()
            .gender;
        let bump = |pair: &mut (u64, u64), by: u64| match gender {
            Gender::F => pair.0 += by,
            Gender::M => pair.1 += by,
        };
        bump(&mut totals, f.k as u64);
        for c in &s.completions[..f.k] {
            for cat in oracle_categories(&c.surface, &f.entries) {
                match Category::ANALYSIS.iter().position(|a| *a == cat) {
                    Some(i) => bump(&mut counts[i], 1),
                    None => bump(&mut other, 1),
                }
            }
        }
    }
    OracleMatrix { counts, totals, other }
}
