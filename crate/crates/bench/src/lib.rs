//! Synthetic workloads shared by the benchmarks.

use honest_audit::corpus::{Category, Gender, GrammaticalNumber, Level, Lexicon, LexiconEntry, Template};
use honest_audit::probe::{query_backend, stub_words, CompletionSet, Endpoint, ModelSpec, StubBackend};

pub struct Workload {
    pub templates: Vec<Template>,
    pub sets: Vec<CompletionSet>,
    pub lexicon: Lexicon,
}

/// `n_templates` stub-probed templates of depth `k` and a lexicon holding every
/// `lemma_stride`th stub word.
pub fn workload(n_templates: usize, k: usize, lemma_stride: usize) -> Workload {
    let spec = ModelSpec::new("bench", "sv", "[MASK]", Endpoint::Stub(1)).expect("valid spec");
    let backend = StubBackend::new(1);
    let templates: Vec<Template> = (0..n_templates)
        .map(|i| {
            let (term, gender) = if i % 2 == 0 {
                ("Kvinnan", Gender::F)
            } else {
                ("Mannen", Gender::M)
            };
            let predicate = format!("är känd som nummer {i}");
            Template {
                template_id: format!("t{i:05}"),
                language: "sv".into(),
                identity_term: term.into(),
                gender,
                grammatical_number: GrammaticalNumber::Singular,
                raw_text: format!("{term} {predicate} [BLANK]"),
                predicate,
            }
        })
        .collect();
    let sets = templates
        .iter()
        .map(|t| query_backend(&backend, &spec, t, k).expect("stub never fails").to_set())
        .collect();
    let entries = stub_words()
        .step_by(lemma_stride.max(1))
        .enumerate()
        .map(|(i, lemma)| LexiconEntry {
            lemma,
            category: Category::ALL[i % Category::ALL.len()],
            level: Level::Conservative,
        });
    Workload {
        templates,
        sets,
        lexicon: Lexicon::from_entries("sv", entries),
    }
}
