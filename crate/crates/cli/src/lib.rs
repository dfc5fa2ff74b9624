//! Pipeline orchestration behind the `honest-audit` binary.
//!
//! Every command validates its whole configuration, loads every corpus and
//! lexicon, and builds every client before it sends a single request.

pub mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use honest_audit::corpus::{load_lexicon, load_templates, Lexicon, LoadWarning, Template};
use honest_audit::honest::{category_gender_matrix, honest_score, HonestError};
use honest_audit::net::RetryPolicy;
use honest_audit::probe::{
    backend_for, run_probe_campaign, store_lookup, CampaignSummary, CompletionSet, CompletionStore, ModelSpec,
    ProbeError,
};
use honest_audit::report::{hash_bytes, render_all, AuditReport, Provenance};
use honest_audit::toxicity::{
    gender_toxicity_summary, score_completion_sets, scorer_for, translator_for, validate_translation, AgreementReport,
    BridgeMode, FixtureRecorder, Recording, SentenceOrigin, SkipRecord, ToxicityError, ToxicityRecord, ToxicityScorer,
    Translator,
};

pub use config::{ConfigError, RunConfig, INFERENCE_API_KEY, TOXICITY_API_KEY, TRANSLATE_API_KEY};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("completion store is locked: {0}")]
    StoreLocked(String),
    #[error("insufficient depth for {} (model, template) pair(s): {}", .missing.len(), summarize_pairs(.missing))]
    InsufficientDepth { k: usize, missing: Vec<(String, String)> },
    #[error("direct scoring unsupported for language {0:?}")]
    DirectScoringUnsupported(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::StoreLocked(_) | CliError::DirectScoringUnsupported(_) => 2,
            CliError::InsufficientDepth { .. } | CliError::Failed(_) => 1,
        }
    }
}

fn summarize_pairs(pairs: &[(String, String)]) -> String {
    let shown: Vec<String> = pairs.iter().take(20).map(|(m, t)| format!("{m}/{t}")).collect();
    let more = pairs.len().saturating_sub(shown.len());
    if more > 0 {
        format!("{} and {more} more", shown.join(", "))
    } else {
        shown.join(", ")
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Flags shared by every command.
#[derive(Clone, Debug, Default)]
pub struct Options {
    pub models: Vec<String>,
    pub k_values: Vec<usize>,
    pub out: Option<PathBuf>,
    pub offline: bool,
    /// Overrides retry backoff; tests use `RetryPolicy::no_backoff`.
    pub retry: Option<RetryPolicy>,
}

impl Options {
    fn apply(&self, config: &mut RunConfig) -> Result<()> {
        if !self.k_values.is_empty() {
            config.k_values = self.k_values.iter().copied().collect();
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        config.validate()?;
        Ok(())
    }

    fn retry(&self) -> RetryPolicy {
        self.retry.unwrap_or_default()
    }
}

/// Outcome of a command that did not hit a hard error.
#[derive(Debug, Default)]
pub struct Outcome {
    /// 0 or 1.
    pub exit_code: u8,
    pub lines: Vec<String>,
}

fn env_key(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

fn config_error(e: impl std::fmt::Display) -> CliError {
    CliError::Config(ConfigError::Invalid(e.to_string()))
}

/// Corpora and lexicons for the languages of the selected models.
struct Inputs {
    templates: BTreeMap<String, Vec<Template>>,
    lexicons: BTreeMap<String, Lexicon>,
    provenance: Provenance,
}

fn load_inputs(config: &RunConfig, models: &[&ModelSpec], need_lexicons: bool) -> Result<Inputs> {
    let languages: BTreeSet<&str> = models.iter().map(|m| m.language.as_str()).collect();
    let mut inputs = Inputs {
        templates: BTreeMap::new(),
        lexicons: BTreeMap::new(),
        provenance: Provenance {
            config_snapshot: serde_json::to_value(&config.snapshot).expect("string map serializes"),
            ..Default::default()
        },
    };
    for lang in languages {
        let corpus = &config.corpora[lang];
        let bytes = std::fs::read(corpus).map_err(|e| config_error(format!("corpus {}: {e}", corpus.display())))?;
        inputs
            .provenance
            .corpus_hashes
            .insert(lang.to_string(), hash_bytes(&bytes));
        let templates = load_templates(corpus, lang).map_err(config_error)?;
        if templates.is_empty() {
            return Err(config_error(format!("corpus {} has no templates", corpus.display())));
        }
        inputs.templates.insert(lang.to_string(), templates);

        if need_lexicons {
            let path = &config.lexicons[lang];
            let bytes = std::fs::read(path).map_err(|e| config_error(format!("lexicon {}: {e}", path.display())))?;
            inputs
                .provenance
                .lexicon_hashes
                .insert(lang.to_string(), hash_bytes(&bytes));
            let load = load_lexicon(path, lang, config.lexicon_level).map_err(config_error)?;
            for w in &load.warnings {
                match w {
                    LoadWarning::EmptyLexicon => {
                        tracing::warn!(language = lang, path = %path.display(), "lexicon is empty; scores will be zero")
                    }
                }
            }
            inputs.lexicons.insert(lang.to_string(), load.lexicon);
        }
    }
    Ok(inputs)
}

fn select<'a>(config: &'a RunConfig, opts: &Options, toxicity: bool) -> Result<Vec<&'a ModelSpec>> {
    let models = config.select_models(&opts.models)?;
    if opts.offline {
        config.check_offline(&models, toxicity)?;
    }
    Ok(models)
}

/// Fills the store for the selected models at depth max(k).
pub fn cmd_probe(config: &RunConfig, opts: &Options) -> Result<(Outcome, Vec<CampaignSummary>)> {
    let mut config = config.clone();
    opts.apply(&mut config)?;
    let models = select(&config, opts, false)?;
    let inputs = load_inputs(&config, &models, true)?;
    let backends = models
        .iter()
        .map(|m| backend_for(m, env_key(INFERENCE_API_KEY), opts.retry()).map_err(config_error))
        .collect::<Result<Vec<_>>>()?;

    let store = CompletionStore::open(&config.store).map_err(|e| match e {
        ProbeError::StoreLocked(p) => CliError::StoreLocked(p),
        other => config_error(other),
    })?;

    let mut outcome = Outcome::default();
    let mut summaries = Vec::new();
    for (spec, backend) in models.iter().zip(&backends) {
        let templates = &inputs.templates[&spec.language];
        match run_probe_campaign(
            backend.as_ref(),
            spec,
            templates,
            &config.k_values,
            &store,
            config.parallelism,
        ) {
            Ok(s) => {
                outcome.lines.push(format!(
                    "{}: k={} fetched={} cached={} failed={}",
                    s.model_id,
                    s.k,
                    s.fetched,
                    s.cached,
                    s.failed.len()
                ));
                summaries.push(s);
            }
            Err(e @ ProbeError::CampaignFailed { .. }) => {
                tracing::error!(error = %e, "campaign failed");
                outcome.lines.push(format!("{}: FAILED ({e})", spec.model_id));
                outcome.exit_code = 1;
            }
            Err(e) => return Err(CliError::Failed(e.to_string())),
        }
    }
    Ok((outcome, summaries))
}

/// Completion sets of depth `k` for every template, or the missing pairs.
fn collect_sets(
    store: &CompletionStore,
    models: &[&ModelSpec],
    inputs: &Inputs,
    k: usize,
) -> Result<BTreeMap<String, Vec<CompletionSet>>> {
    let mut sets = BTreeMap::new();
    let mut missing = Vec::new();
    for m in models {
        let mut row = Vec::new();
        for t in &inputs.templates[&m.language] {
            match store_lookup(store, &m.model_id, &t.template_id, k) {
                Some(s) => row.push(s),
                None => missing.push((m.model_id.clone(), t.template_id.clone())),
            }
        }
        sets.insert(m.model_id.clone(), row);
    }
    if !missing.is_empty() {
        return Err(CliError::InsufficientDepth { k, missing });
    }
    Ok(sets)
}

fn created_at(store: &CompletionStore, models: &[&ModelSpec]) -> u64 {
    let ids: BTreeSet<&str> = models.iter().map(|m| m.model_id.as_str()).collect();
    store
        .records()
        .iter()
        .filter(|r| ids.contains(r.model_id.as_str()))
        .map(|r| r.fetched_at)
        .max()
        .unwrap_or(0)
}

fn toxicity_dir(config: &RunConfig) -> PathBuf {
    config.out_dir.join("toxicity")
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Failed(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).expect("records serialize"));
        text.push('\n');
    }
    write_file(path, &text)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Failed(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))
}

/// Computes every table from the store and writes the report artifacts.
pub fn cmd_score(config: &RunConfig, opts: &Options) -> Result<(Outcome, AuditReport)> {
    let mut config = config.clone();
    opts.apply(&mut config)?;
    let models = select(&config, opts, false)?;
    let inputs = load_inputs(&config, &models, true)?;
    let store = CompletionStore::open_read_only(&config.store).map_err(|e| CliError::Failed(e.to_string()))?;
    let max_k = config.max_k();
    let sets = collect_sets(&store, &models, &inputs, max_k)?;

    let mut report = AuditReport {
        created_at: created_at(&store, &models),
        models: models.iter().map(|m| m.model_id.clone()).collect(),
        provenance: inputs.provenance.clone(),
        ..Default::default()
    };
    let honest_failure = |e: HonestError| CliError::Failed(e.to_string());
    for m in &models {
        let lexicon = &inputs.lexicons[&m.language];
        let templates = &inputs.templates[&m.language];
        let model_sets = &sets[&m.model_id];
        for &k in &config.k_values {
            report
                .honest_table
                .push(honest_score(model_sets, lexicon, k).map_err(honest_failure)?);
        }
        let matrix = category_gender_matrix(model_sets, templates, lexicon, max_k).map_err(honest_failure)?;
        report.category_matrices.insert(m.model_id.clone(), matrix);

        let records_path = toxicity_dir(&config).join(format!("{}.jsonl", m.model_id));
        if records_path.exists() {
            let records: Vec<ToxicityRecord> = read_jsonl(&records_path)?;
            let skips_path = toxicity_dir(&config).join(format!("{}.skipped.jsonl", m.model_id));
            let skipped = if skips_path.exists() {
                read_jsonl::<SkipRecord>(&skips_path)?.len()
            } else {
                0
            };
            let summary =
                gender_toxicity_summary(&records, templates, skipped).map_err(|e| CliError::Failed(e.to_string()))?;
            report.toxicity_table.insert(m.model_id.clone(), summary);
        }
    }
    report.assign_run_id();
    let outcome = write_report(&config.out_dir, &report)?;
    Ok((outcome, report))
}

fn write_report(out_dir: &Path, report: &AuditReport) -> Result<Outcome> {
    let artifacts = render_all(report).map_err(|e| CliError::Failed(e.to_string()))?;
    let mut outcome = Outcome::default();
    for (name, text) in artifacts {
        let path = out_dir.join(name);
        write_file(&path, &text)?;
        outcome.lines.push(format!("wrote {}", path.display()));
    }
    Ok(outcome)
}

/// Re-renders every table from an existing `report.json`.
pub fn cmd_report(config: &RunConfig, opts: &Options) -> Result<Outcome> {
    let out_dir = opts.out.clone().unwrap_or_else(|| config.out_dir.clone());
    let path = out_dir.join("report.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Failed(format!("{}: {e}; run `score` first", path.display())))?;
    let report = AuditReport::from_json(&text).map_err(|e| CliError::Failed(e.to_string()))?;
    write_report(&out_dir, &report)
}

fn toxicity_clients(
    config: &RunConfig,
    opts: &Options,
    need_translator: bool,
) -> Result<(Box<dyn ToxicityScorer>, Box<dyn Translator>)> {
    let endpoint = config
        .toxicity_endpoint
        .as_ref()
        .ok_or_else(|| config_error("toxicity.endpoint is not set"))?;
    let scorer = scorer_for(
        endpoint,
        env_key(TOXICITY_API_KEY),
        config.direct_languages.clone(),
        opts.retry(),
        config.toxicity_rate_limit,
    )
    .map_err(config_error)?;
    let translator: Box<dyn Translator> = match &config.translate_endpoint {
        Some(ep) => translator_for(
            ep,
            env_key(TRANSLATE_API_KEY),
            opts.retry(),
            config.translate_rate_limit,
        )
        .map_err(config_error)?,
        None if need_translator => return Err(config_error("translate.endpoint is not set")),
        None => Box::new(NoTranslator),
    };
    Ok((scorer, translator))
}

struct NoTranslator;

impl Translator for NoTranslator {
    fn translate(&self, _: &str, source: &str, target: &str) -> honest_audit::toxicity::Result<String> {
        Err(ToxicityError::TranslationUnavailable(format!(
            "no translate.endpoint configured ({source} -> {target})"
        )))
    }
}

/// Scores filled sentences for toxicity and writes per-model record files.
///
/// With `record_fixtures`, every request and response is also written as a
/// replay fixture file so later runs can use `replay:` endpoints.
pub fn cmd_score_toxicity(config: &RunConfig, opts: &Options, record_fixtures: Option<&Path>) -> Result<Outcome> {
    let mut config = config.clone();
    opts.apply(&mut config)?;
    let models = select(&config, opts, true)?;
    let inputs = load_inputs(&config, &models, false)?;
    let need_translator = config.toxicity.bridge_mode == BridgeMode::TranslateThenScore;
    let (scorer, translator) = toxicity_clients(&config, opts, need_translator)?;
    let store = CompletionStore::open_read_only(&config.store).map_err(|e| CliError::Failed(e.to_string()))?;
    let k = config.toxicity_depth();
    let sets = collect_sets(&store, &models, &inputs, k)?;

    let recorder = FixtureRecorder::new();
    let rec_scorer = Recording {
        inner: scorer.as_ref(),
        recorder: &recorder,
    };
    let rec_translator = Recording {
        inner: translator.as_ref(),
        recorder: &recorder,
    };
    let (scorer, translator): (&dyn ToxicityScorer, &dyn Translator) = if record_fixtures.is_some() {
        (&rec_scorer, &rec_translator)
    } else {
        (scorer.as_ref(), translator.as_ref())
    };

    let mut outcome = Outcome::default();
    for m in &models {
        let run = score_completion_sets(
            &sets[&m.model_id],
            &inputs.templates[&m.language],
            translator,
            scorer,
            &config.toxicity,
            k,
        )
        .map_err(|e| match e {
            ToxicityError::DirectScoringUnsupported(lang) => CliError::DirectScoringUnsupported(lang),
            other => CliError::Failed(other.to_string()),
        })?;
        let dir = toxicity_dir(&config);
        write_jsonl(&dir.join(format!("{}.jsonl", m.model_id)), &run.records)?;
        write_jsonl(&dir.join(format!("{}.skipped.jsonl", m.model_id)), &run.skipped)?;
        if !run.failed.is_empty() {
            let failed: Vec<serde_json::Value> = run
                .failed
                .iter()
                .map(|(o, e)| serde_json::json!({"origin": o, "error": e}))
                .collect();
            write_jsonl(&dir.join(format!("{}.failed.jsonl", m.model_id)), &failed)?;
            outcome.exit_code = 1;
        }
        let toxic = run.records.iter().filter(|r| r.toxic).count();
        outcome.lines.push(format!(
            "{}: k={k} scored={} toxic={toxic} skipped={} failed={}",
            m.model_id,
            run.records.len(),
            run.skipped.len(),
            run.failed.len()
        ));
    }
    if let Some(path) = record_fixtures {
        recorder.write(path).map_err(|e| CliError::Failed(e.to_string()))?;
        outcome
            .lines
            .push(format!("recorded {} fixture(s) to {}", recorder.len(), path.display()));
    }
    Ok(outcome)
}

/// Scores every filled sentence of `language` directly and through the
/// bridge, and writes the agreement report for each selected model.
pub fn cmd_validate_translation(
    config: &RunConfig,
    opts: &Options,
    language: &str,
) -> Result<(Outcome, BTreeMap<String, AgreementReport>)> {
    let mut config = config.clone();
    opts.apply(&mut config)?;
    let models: Vec<&ModelSpec> = select(&config, opts, true)?
        .into_iter()
        .filter(|m| m.language == language)
        .collect();
    if models.is_empty() {
        return Err(config_error(format!("no selected model uses language {language:?}")));
    }
    let (scorer, translator) = toxicity_clients(&config, opts, true)?;
    if !scorer.supports(language) {
        return Err(CliError::DirectScoringUnsupported(language.to_string()));
    }
    let inputs = load_inputs(&config, &models, false)?;
    let store = CompletionStore::open_read_only(&config.store).map_err(|e| CliError::Failed(e.to_string()))?;
    let k = config.toxicity_depth();
    let sets = collect_sets(&store, &models, &inputs, k)?;

    let mut outcome = Outcome::default();
    let mut reports = BTreeMap::new();
    for m in &models {
        let templates = &inputs.templates[&m.language];
        let by_id: BTreeMap<&str, &Template> = templates.iter().map(|t| (t.template_id.as_str(), t)).collect();
        let sentences: Vec<(SentenceOrigin, String)> = sets[&m.model_id]
            .iter()
            .flat_map(|set| {
                let t = by_id[set.template_id.as_str()];
                set.completions.iter().filter_map(move |c| {
                    honest_audit::toxicity::fill_sentence(t, &c.surface).ok().map(|s| {
                        let origin = SentenceOrigin {
                            template_id: set.template_id.clone(),
                            model_id: set.model_id.clone(),
                            rank: c.rank,
                        };
                        (origin, s)
                    })
                })
            })
            .collect();
        if sentences.is_empty() {
            return Err(CliError::Failed(format!(
                "model {:?} has no word completions to validate",
                m.model_id
            )));
        }
        let run = validate_translation(
            &sentences,
            language,
            translator.as_ref(),
            scorer.as_ref(),
            &config.toxicity,
        )
        .map_err(|e| match e {
            ToxicityError::DirectScoringUnsupported(lang) => CliError::DirectScoringUnsupported(lang),
            other => CliError::Failed(other.to_string()),
        })?;
        let path = config.out_dir.join(format!("agreement_{language}_{}.json", m.model_id));
        let mut text = serde_json::to_string_pretty(&run.report).expect("reports serialize");
        text.push('\n');
        write_file(&path, &text)?;
        if !run.failed.is_empty() {
            outcome.exit_code = 1;
        }
        outcome.lines.push(format!(
            "{}: agreement {}/{} = {:.4} ({} disagreement(s), {} failed) -> {}",
            m.model_id,
            run.report.agree,
            run.report.total,
            run.report.agreement_rate,
            run.report.disagreements.len(),
            run.failed.len(),
            path.display()
        ));
        reports.insert(m.model_id.clone(), run.report);
    }
    Ok((outcome, reports))
}
