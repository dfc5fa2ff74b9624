//! Template corpora and HurtLex-format lexicons.
//!
//! Both formats are plain UTF-8 TSV. Templates carry their own gender and
//! number metadata; nothing is inferred from the identity term.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// The literal slot marker every template sentence must contain exactly once.
pub const BLANK: &str = "[BLANK]";

/// Header row of the template TSV format.
pub const TEMPLATE_HEADER: [&str; 7] = [
    "template_id",
    "language",
    "identity_term",
    "gender",
    "number",
    "predicate",
    "raw_text",
];

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: raw_text has no {BLANK} marker")]
    MissingBlank { line: usize },
    #[error("line {line}: raw_text contains {count} {BLANK} markers, expected exactly one")]
    MultipleBlanks { line: usize, count: usize },
    #[error("line {line}: gender {value:?} is not F or M")]
    BadGender { line: usize, value: String },
    #[error("line {line}: number {value:?} is not singular or plural")]
    BadNumber { line: usize, value: String },
    #[error("line {line}: language {found:?} does not match expected {expected:?}")]
    LanguageMismatch {
        line: usize,
        expected: String,
        found: String,
    },
    #[error("line {line}: duplicate template id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: raw_text {raw_text:?} is not identity term + predicate + {BLANK}")]
    TextMismatch { line: usize, raw_text: String },
    #[error("line {line}: unknown HurtLex category {code:?}")]
    UnknownCategory { line: usize, code: String },
    #[error("line {line}: unknown lexicon level {value:?}")]
    UnknownLevel { line: usize, value: String },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::F, Gender::M];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::F => "F",
            Gender::M => "M",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A value for each gender, serialized as `{"F": .., "M": ..}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerGender<T> {
    #[serde(rename = "F")]
    pub female: T,
    #[serde(rename = "M")]
    pub male: T,
}

impl<T> PerGender<T> {
    pub fn new(female: T, male: T) -> Self {
        PerGender { female, male }
    }

    pub fn get(&self, g: Gender) -> &T {
        match g {
            Gender::F => &self.female,
            Gender::M => &self.male,
        }
    }

    pub fn get_mut(&mut self, g: Gender) -> &mut T {
        match g {
            Gender::F => &mut self.female,
            Gender::M => &mut self.male,
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PerGender<U> {
        PerGender {
            female: f(&self.female),
            male: f(&self.male),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrammaticalNumber {
    Singular,
    Plural,
}

impl GrammaticalNumber {
    pub fn as_str(self) -> &'static str {
        match self {
            GrammaticalNumber::Singular => "singular",
            GrammaticalNumber::Plural => "plural",
        }
    }
}

/// One gendered probe sentence with a single blank slot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub template_id: String,
    pub language: String,
    pub identity_term: String,
    pub gender: Gender,
    pub grammatical_number: GrammaticalNumber,
    pub predicate: String,
    pub raw_text: String,
}

impl Template {
    /// Replaces the blank with `filler`, leaving the rest of the sentence untouched.
    pub fn fill(&self, filler: &str) -> String {
        self.raw_text.replacen(BLANK, filler, 1)
    }
}

/// Returns the template sentence with `[BLANK]` replaced by the model's mask token.
///
/// Panics if `mask_token` is empty; model specs reject empty mask tokens at
/// construction, so reaching this with one is a programming error.
pub fn render_prompt(template: &Template, mask_token: &str) -> String {
    assert!(!mask_token.is_empty(), "mask token must be non-empty");
    template.fill(mask_token)
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses a template TSV file and checks every row against `expected_language`.
pub fn load_templates(path: impl AsRef<Path>, expected_language: &str) -> Result<Vec<Template>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_templates(&text, expected_language)
}

pub fn parse_templates(text: &str, expected_language: &str) -> Result<Vec<Template>> {
    let mut lines = text.lines().enumerate();
    let header = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or(CorpusError::MalformedRow {
            line: 1,
            reason: "missing header row".into(),
        })?;
    let cols: Vec<&str> = header.1.trim_start_matches('\u{feff}').split('\t').collect();
    if cols != TEMPLATE_HEADER {
        return Err(CorpusError::MalformedRow {
            line: header.0 + 1,
            reason: format!("header must be {:?}", TEMPLATE_HEADER.join("\t")),
        });
    }

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let row = raw.strip_suffix('\r').unwrap_or(raw);
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split('\t').collect();
        if fields.len() != TEMPLATE_HEADER.len() {
            return Err(CorpusError::MalformedRow {
                line,
                reason: format!("expected {} columns, found {}", TEMPLATE_HEADER.len(), fields.len()),
            });
        }
        let [id, language, identity_term, gender, number, predicate, raw_text] =
            <[&str; 7]>::try_from(fields).expect("length checked");

        if id.is_empty() {
            return Err(CorpusError::MalformedRow {
                line,
                reason: "empty template_id".into(),
            });
        }
        if language != expected_language {
            return Err(CorpusError::LanguageMismatch {
                line,
                expected: expected_language.to_string(),
                found: language.to_string(),
            });
        }
        let gender = match gender {
            "F" => Gender::F,
            "M" => Gender::M,
            other => {
                return Err(CorpusError::BadGender {
                    line,
                    value: other.to_string(),
                })
            }
        };
        let grammatical_number = match number {
            "singular" => GrammaticalNumber::Singular,
            "plural" => GrammaticalNumber::Plural,
            other => {
                return Err(CorpusError::BadNumber {
                    line,
                    value: other.to_string(),
                })
            }
        };
        match raw_text.matches(BLANK).count() {
            0 => return Err(CorpusError::MissingBlank { line }),
            1 => {}
            count => return Err(CorpusError::MultipleBlanks { line, count }),
        }
        let expected = collapse_ws(&format!("{identity_term} {predicate} {BLANK}"));
        if collapse_ws(raw_text) != expected {
            return Err(CorpusError::TextMismatch {
                line,
                raw_text: raw_text.to_string(),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(CorpusError::DuplicateId {
                line,
                id: id.to_string(),
            });
        }
        out.push(Template {
            template_id: id.to_string(),
            language: language.to_string(),
            identity_term: identity_term.to_string(),
            gender,
            grammatical_number,
            predicate: predicate.to_string(),
            raw_text: raw_text.to_string(),
        });
    }
    Ok(out)
}

/// Serializes templates back into the TSV format accepted by [`parse_templates`].
pub fn write_templates(templates: &[Template]) -> String {
    let mut out = TEMPLATE_HEADER.join("\t");
    out.push('\n');
    for t in templates {
        let row = [
            t.template_id.as_str(),
            t.language.as_str(),
            t.identity_term.as_str(),
            t.gender.as_str(),
            t.grammatical_number.as_str(),
            t.predicate.as_str(),
            t.raw_text.as_str(),
        ];
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

/// The 17 HurtLex category codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    /// ethnic slurs
    PS,
    /// locations and demonyms
    RCI,
    /// professions and occupations
    PA,
    /// physical disabilities and diversity
    DDP,
    /// cognitive disabilities and diversity
    DDF,
    /// moral and behavioral defects
    DMC,
    /// words related to social and economic disadvantage
    IS,
    /// plants
    OR,
    /// animals
    AN,
    /// male genitalia
    ASM,
    /// female genitalia
    ASF,
    /// prostitution
    PR,
    /// homosexuality
    OM,
    /// potential negative connotations
    QAS,
    /// derogatory words
    CDS,
    /// felonies and crime
    RE,
    /// the seven deadly sins
    SVP,
}

impl Category {
    pub const ALL: [Category; 17] = [
        Category::PS,
        Category::RCI,
        Category::PA,
        Category::DDP,
        Category::DDF,
        Category::DMC,
        Category::IS,
        Category::OR,
        Category::AN,
        Category::ASM,
        Category::ASF,
        Category::PR,
        Category::OM,
        Category::QAS,
        Category::CDS,
        Category::RE,
        Category::SVP,
    ];

    /// Categories reported individually in the category × gender heatmap, in table order.
    pub const ANALYSIS: [Category; 12] = [
        Category::AN,
        Category::ASF,
        Category::ASM,
        Category::CDS,
        Category::DMC,
        Category::OM,
        Category::OR,
        Category::PR,
        Category::PS,
        Category::QAS,
        Category::RE,
        Category::SVP,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Category::PS => "PS",
            Category::RCI => "RCI",
            Category::PA => "PA",
            Category::DDP => "DDP",
            Category::DDF => "DDF",
            Category::DMC => "DMC",
            Category::IS => "IS",
            Category::OR => "OR",
            Category::AN => "AN",
            Category::ASM => "ASM",
            Category::ASF => "ASF",
            Category::PR => "PR",
            Category::OM => "OM",
            Category::QAS => "QAS",
            Category::CDS => "CDS",
            Category::RE => "RE",
            Category::SVP => "SVP",
        }
    }

    pub fn is_analysis(self) -> bool {
        Self::ANALYSIS.contains(&self)
    }
}

impl FromStr for Category {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Category::ALL
            .into_iter()
            .find(|c| c.code().eq_ignore_ascii_case(s))
            .ok_or(())
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Conservative,
    Inclusive,
}

impl FromStr for Level {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.to_ascii_lowercase().as_str() {
            "conservative" => Ok(Level::Conservative),
            "inclusive" => Ok(Level::Inclusive),
            _ => Err(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub lemma: String,
    pub category: Category,
    pub level: Level,
}

/// Canonical lemma form: NFC-normalized, trimmed and lowercased.
pub fn canonical_lemma(s: &str) -> String {
    s.trim().nfc().collect::<String>().to_lowercase()
}

/// Offensive-word lexicon indexed by canonical lemma.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    pub language: String,
    entries: Vec<LexiconEntry>,
    index: BTreeMap<String, BTreeSet<Category>>,
}

impl Lexicon {
    pub fn new(language: impl Into<String>) -> Self {
        Lexicon {
            language: language.into(),
            ..Default::default()
        }
    }

    pub fn from_entries(language: impl Into<String>, entries: impl IntoIterator<Item = LexiconEntry>) -> Self {
        let mut lex = Lexicon::new(language);
        for e in entries {
            lex.insert(e);
        }
        lex
    }

    /// Adds an entry, canonicalizing its lemma. Empty lemmas are ignored.
    pub fn insert(&mut self, mut entry: LexiconEntry) {
        entry.lemma = canonical_lemma(&entry.lemma);
        if entry.lemma.is_empty() {
            return;
        }
        self.index
            .entry(entry.lemma.clone())
            .or_default()
            .insert(entry.category);
        self.entries.push(entry);
    }

    /// Categories carried by `lemma`; empty when the lemma is absent.
    pub fn lookup(&self, lemma: &str) -> BTreeSet<Category> {
        self.categories(&canonical_lemma(lemma)).cloned().unwrap_or_default()
    }

    /// Borrowing lookup for an already-canonical lemma.
    pub fn categories(&self, canonical: &str) -> Option<&BTreeSet<Category>> {
        self.index.get(canonical)
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lemma_count(&self) -> usize {
        self.index.len()
    }
}

/// Non-fatal conditions found while loading.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LoadWarning {
    /// No entries survived loading and level filtering. Scoring against the
    /// lexicon is still legal and yields zero everywhere.
    EmptyLexicon,
}

#[derive(Debug)]
pub struct LexiconLoad {
    pub lexicon: Lexicon,
    pub warnings: Vec<LoadWarning>,
}

pub fn load_lexicon(path: impl AsRef<Path>, language: &str, level_filter: Option<Level>) -> Result<LexiconLoad> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_lexicon(&text, language, level_filter)
}

/// Parses `lemma<TAB>category<TAB>level[<TAB>...]` rows. A first row whose
/// category column reads `category` is treated as a header.
pub fn parse_lexicon(text: &str, language: &str, level_filter: Option<Level>) -> Result<LexiconLoad> {
    let mut lexicon = Lexicon::new(language);
    let mut first = true;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let row = raw.strip_suffix('\r').unwrap_or(raw);
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.trim_start_matches('\u{feff}').split('\t').collect();
        if std::mem::take(&mut first) && fields.get(1).is_some_and(|c| c.trim() == "category") {
            continue;
        }
        if fields.len() < 3 {
            return Err(CorpusError::MalformedRow {
                line,
                reason: format!("expected at least 3 columns, found {}", fields.len()),
            });
        }
        let lemma = canonical_lemma(fields[0]);
        if lemma.is_empty() {
            return Err(CorpusError::MalformedRow {
                line,
                reason: "empty lemma".into(),
            });
        }
        let category = fields[1]
            .trim()
            .parse::<Category>()
            .map_err(|()| CorpusError::UnknownCategory {
                line,
                code: fields[1].trim().to_string(),
            })?;
        let level = fields[2]
            .trim()
            .parse::<Level>()
            .map_err(|()| CorpusError::UnknownLevel {
                line,
                value: fields[2].trim().to_string(),
            })?;
        if level_filter.is_some_and(|want| want != level) {
            continue;
        }
        lexicon.insert(LexiconEntry { lemma, category, level });
    }
    let warnings = if lexicon.is_empty() {
        vec![LoadWarning::EmptyLexicon]
    } else {
        Vec::new()
    };
    Ok(LexiconLoad { lexicon, warnings })
}
