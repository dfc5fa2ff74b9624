//! Run configuration: a `key = value` text file.
//!
//! ```text
//! # comments start with '#'
//! languages = da, sv
//! k = 1, 5, 10, 20
//! store = store/completions.jsonl
//! out = out
//! parallelism = 4
//!
//! corpus.da = corpus/da.tsv
//! lexicon.da = lexicon/da.tsv
//! lexicon.level = both            # conservative | inclusive | both
//!
//! model.danishbert.language = da
//! model.danishbert.mask_token = [MASK]
//! model.danishbert.endpoint = https://host/fill-mask   # or replay:<store> / stub:<seed>
//!
//! toxicity.endpoint = https://host/toxicity
//! toxicity.threshold = 0.5
//! toxicity.attributes = toxicity, identity_attack
//! toxicity.decision = toxicity
//! toxicity.bridge = translate-then-score             # or direct
//! toxicity.direct_languages = en, sv
//! toxicity.rate_limit = 1
//! toxicity.k = 20
//! translate.endpoint = https://host/translate
//! translate.rate_limit = 1
//! ```
//!
//! Relative paths, including `replay:` paths, resolve against the directory
//! holding the config file. Credentials are never read from this file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use honest_audit::corpus::Level;
use honest_audit::probe::{Endpoint, ModelSpec, DEFAULT_K_VALUES, DEFAULT_PARALLELISM};
use honest_audit::toxicity::{BridgeMode, ToxicityConfig, DEFAULT_DIRECT_LANGUAGES};

pub const TOXICITY_API_KEY: &str = "TOXICITY_API_KEY";
pub const TRANSLATE_API_KEY: &str = "TRANSLATE_API_KEY";
pub const INFERENCE_API_KEY: &str = "INFERENCE_API_KEY";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub languages: Vec<String>,
    pub models: Vec<ModelSpec>,
    pub corpora: BTreeMap<String, PathBuf>,
    pub lexicons: BTreeMap<String, PathBuf>,
    /// `None` keeps both levels.
    pub lexicon_level: Option<Level>,
    pub k_values: BTreeSet<usize>,
    pub toxicity: ToxicityConfig,
    /// Depth of completions sent for toxicity scoring; defaults to max k.
    pub toxicity_k: Option<usize>,
    pub toxicity_endpoint: Option<Endpoint>,
    pub translate_endpoint: Option<Endpoint>,
    pub direct_languages: Vec<String>,
    pub toxicity_rate_limit: f64,
    pub translate_rate_limit: f64,
    pub store: PathBuf,
    pub out_dir: PathBuf,
    pub parallelism: usize,
    /// Key/value pairs exactly as written, for provenance.
    pub snapshot: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn max_k(&self) -> usize {
        self.k_values.iter().next_back().copied().unwrap_or(1)
    }

    pub fn toxicity_depth(&self) -> usize {
        self.toxicity_k.unwrap_or_else(|| self.max_k())
    }

    pub fn model(&self, id: &str) -> Option<&ModelSpec> {
        self.models.iter().find(|m| m.model_id == id)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Unreadable {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut pairs: Vec<(usize, String, String)> = Vec::new();
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split_once(" #").map_or(raw, |(c, _)| c).trim();
            if content.is_empty() || content.starts_with('#') {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                reason: format!("expected key = value, got {content:?}"),
            })?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            let lowered = key.to_ascii_lowercase();
            if ["api_key", "apikey", "secret", "password", "bearer"]
                .iter()
                .any(|s| lowered.contains(s))
            {
                return Err(ConfigError::Syntax {
                    line,
                    reason: format!(
                        "{key:?} looks like a credential; use {TOXICITY_API_KEY}, {TRANSLATE_API_KEY} or {INFERENCE_API_KEY}"
                    ),
                });
            }
            if !seen.insert(key.clone()) {
                return Err(ConfigError::Syntax {
                    line,
                    reason: format!("duplicate key {key:?}"),
                });
            }
            pairs.push((line, key, value));
        }

        let resolve = |p: &str| -> PathBuf {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let endpoint = |line: usize, v: &str| -> Result<Endpoint, ConfigError> {
            match v.parse::<Endpoint>() {
                Ok(Endpoint::Replay(p)) => Ok(Endpoint::Replay(resolve(&p.to_string_lossy()))),
                Ok(e) => Ok(e),
                Err(reason) => Err(ConfigError::Syntax { line, reason }),
            }
        };
        let list = |v: &str| -> Vec<String> {
            v.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        };
        let number = |line: usize, key: &str, v: &str| -> Result<f64, ConfigError> {
            v.parse::<f64>().map_err(|_| ConfigError::Syntax {
                line,
                reason: format!("{key} must be a number"),
            })
        };
        let count = |line: usize, key: &str, v: &str| -> Result<usize, ConfigError> {
            v.parse::<usize>().map_err(|_| ConfigError::Syntax {
                line,
                reason: format!("{key} must be a non-negative integer"),
            })
        };

        let mut cfg = RunConfig {
            languages: Vec::new(),
            models: Vec::new(),
            corpora: BTreeMap::new(),
            lexicons: BTreeMap::new(),
            lexicon_level: None,
            k_values: DEFAULT_K_VALUES.into_iter().collect(),
            toxicity: ToxicityConfig::default(),
            toxicity_k: None,
            toxicity_endpoint: None,
            translate_endpoint: None,
            direct_languages: DEFAULT_DIRECT_LANGUAGES.iter().map(|s| s.to_string()).collect(),
            toxicity_rate_limit: 1.0,
            translate_rate_limit: 1.0,
            store: resolve("store/completions.jsonl"),
            out_dir: resolve("out"),
            parallelism: DEFAULT_PARALLELISM,
            snapshot: pairs.iter().map(|(_, k, v)| (k.clone(), v.clone())).collect(),
        };

        // model fields in first-appearance order
        let mut model_order: Vec<String> = Vec::new();
        let mut model_fields: BTreeMap<String, BTreeMap<String, (usize, String)>> = BTreeMap::new();

        for (line, key, value) in &pairs {
            let line = *line;
            let parts: Vec<&str> = key.splitn(2, '.').collect();
            match (parts[0], parts.get(1).copied()) {
                ("languages", None) => cfg.languages = list(value),
                ("k", None) => {
                    cfg.k_values = list(value)
                        .iter()
                        .map(|k| count(line, "k", k))
                        .collect::<Result<_, _>>()?;
                }
                ("store", None) => cfg.store = resolve(value),
                ("out", None) => cfg.out_dir = resolve(value),
                ("parallelism", None) => cfg.parallelism = count(line, "parallelism", value)?,
                ("corpus", Some(lang)) => {
                    cfg.corpora.insert(lang.to_string(), resolve(value));
                }
                ("lexicon", Some("level")) => {
                    cfg.lexicon_level = match value.as_str() {
                        "both" => None,
                        v => Some(v.parse::<Level>().map_err(|()| ConfigError::Syntax {
                            line,
                            reason: format!("lexicon.level must be conservative, inclusive or both, got {v:?}"),
                        })?),
                    }
                }
                ("lexicon", Some(lang)) => {
                    cfg.lexicons.insert(lang.to_string(), resolve(value));
                }
                ("model", Some(rest)) => {
                    let (id, field) = rest.rsplit_once('.').ok_or_else(|| ConfigError::Syntax {
                        line,
                        reason: format!("expected model.<id>.<field>, got {key:?}"),
                    })?;
                    if !model_order.iter().any(|m| m == id) {
                        model_order.push(id.to_string());
                    }
                    model_fields
                        .entry(id.to_string())
                        .or_default()
                        .insert(field.to_string(), (line, value.clone()));
                }
                ("toxicity", Some(field)) => match field {
                    "endpoint" => cfg.toxicity_endpoint = Some(endpoint(line, value)?),
                    "threshold" => cfg.toxicity.threshold = number(line, key, value)?,
                    "attributes" => cfg.toxicity.attributes = list(value),
                    "decision" => cfg.toxicity.decision_attribute = value.clone(),
                    "bridge" => {
                        cfg.toxicity.bridge_mode = value
                            .parse::<BridgeMode>()
                            .map_err(|reason| ConfigError::Syntax { line, reason })?
                    }
                    "direct_languages" => cfg.direct_languages = list(value),
                    "rate_limit" => cfg.toxicity_rate_limit = number(line, key, value)?,
                    "k" => cfg.toxicity_k = Some(count(line, key, value)?),
                    _ => return Err(unknown(line, key)),
                },
                ("translate", Some(field)) => match field {
                    "endpoint" => cfg.translate_endpoint = Some(endpoint(line, value)?),
                    "rate_limit" => cfg.translate_rate_limit = number(line, key, value)?,
                    _ => return Err(unknown(line, key)),
                },
                _ => return Err(unknown(line, key)),
            }
        }

        for id in model_order {
            let fields = &model_fields[&id];
            let get = |f: &str| {
                fields
                    .get(f)
                    .cloned()
                    .ok_or_else(|| ConfigError::Invalid(format!("model {id:?} lacks {f}")))
            };
            if let Some(extra) = fields
                .keys()
                .find(|f| !["language", "mask_token", "endpoint"].contains(&f.as_str()))
            {
                return Err(unknown(fields[extra].0, &format!("model.{id}.{extra}")));
            }
            let (_, language) = get("language")?;
            let (_, mask) = get("mask_token")?;
            let (eline, ep) = get("endpoint")?;
            let spec = ModelSpec::new(id.clone(), language, mask, endpoint(eline, &ep)?)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            cfg.models.push(spec);
        }

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |s: String| Err(ConfigError::Invalid(s));
        if self.models.is_empty() {
            return invalid("no models configured".into());
        }
        if self.k_values.is_empty() {
            return invalid("k must list at least one value".into());
        }
        if self.k_values.contains(&0) {
            return invalid("k values must be at least 1".into());
        }
        if self.toxicity_k == Some(0) {
            return invalid("toxicity.k must be at least 1".into());
        }
        if self.parallelism == 0 {
            return invalid("parallelism must be at least 1".into());
        }
        for m in &self.models {
            if !self.languages.is_empty() && !self.languages.contains(&m.language) {
                return invalid(format!(
                    "model {:?} uses language {:?} which is not listed in languages",
                    m.model_id, m.language
                ));
            }
            if !self.corpora.contains_key(&m.language) {
                return invalid(format!(
                    "no corpus path for language {:?} (model {:?})",
                    m.language, m.model_id
                ));
            }
            if !self.lexicons.contains_key(&m.language) {
                return invalid(format!(
                    "no lexicon path for language {:?} (model {:?})",
                    m.language, m.model_id
                ));
            }
        }
        self.toxicity
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Rejects network endpoints when running with `--offline`.
    pub fn check_offline(&self, models: &[&ModelSpec], toxicity: bool) -> Result<(), ConfigError> {
        for m in models {
            if m.endpoint.is_network() {
                return Err(ConfigError::Invalid(format!(
                    "--offline forbids network endpoint for model {:?}",
                    m.model_id
                )));
            }
        }
        if toxicity {
            for (name, ep) in [
                ("toxicity", &self.toxicity_endpoint),
                ("translate", &self.translate_endpoint),
            ] {
                if ep.as_ref().is_some_and(Endpoint::is_network) {
                    return Err(ConfigError::Invalid(format!(
                        "--offline forbids network {name} endpoint"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Applies `--model` filters; unknown ids are configuration errors.
    pub fn select_models(&self, filter: &[String]) -> Result<Vec<&ModelSpec>, ConfigError> {
        if filter.is_empty() {
            return Ok(self.models.iter().collect());
        }
        for id in filter {
            if self.model(id).is_none() {
                return Err(ConfigError::Invalid(format!("unknown model {id:?}")));
            }
        }
        Ok(self.models.iter().filter(|m| filter.contains(&m.model_id)).collect())
    }
}

fn unknown(line: usize, key: &str) -> ConfigError {
    ConfigError::Syntax {
        line,
        reason: format!("unknown key {key:?}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "\
languages = da, no
k = 1, 20
corpus.da = c/da.tsv
corpus.no = /abs/no.tsv
lexicon.da = l/da.tsv
lexicon.no = l/no.tsv
model.danishbert.language = da
model.danishbert.mask_token = [MASK]
model.danishbert.endpoint = stub:3
model.norbert.language = no
model.norbert.mask_token = [MASK]
model.norbert.endpoint = replay:old.jsonl  # previous run
";

    #[test]
    fn parses_and_resolves_paths() {
        let cfg = RunConfig::parse(BASIC, Path::new("/cfg")).unwrap();
        assert_eq!(cfg.models.len(), 2);
        assert_eq!(cfg.models[0].model_id, "danishbert");
        assert_eq!(cfg.models[1].endpoint, Endpoint::Replay("/cfg/old.jsonl".into()));
        assert_eq!(cfg.corpora["da"], PathBuf::from("/cfg/c/da.tsv"));
        assert_eq!(cfg.corpora["no"], PathBuf::from("/abs/no.tsv"));
        assert_eq!(cfg.k_values, BTreeSet::from([1, 20]));
        assert_eq!(cfg.max_k(), 20);
        assert_eq!(cfg.toxicity.threshold, 0.5);
        assert_eq!(cfg.lexicon_level, None);
        assert_eq!(cfg.store, PathBuf::from("/cfg/store/completions.jsonl"));
    }

    #[test]
    fn missing_lexicon_path_is_invalid() {
        let text = BASIC.replace("lexicon.no = l/no.tsv\n", "");
        let err = RunConfig::parse(&text, Path::new("/")).unwrap_err();
        assert!(
            matches!(err, ConfigError::Invalid(ref m) if m.contains("lexicon")),
            "{err}"
        );
    }

    #[test]
    fn rejects_credentials_and_unknown_keys() {
        let err = RunConfig::parse(&format!("{BASIC}toxicity.api_key = abc\n"), Path::new("/")).unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { .. }));
        assert!(!err.to_string().contains("abc"));
        assert!(RunConfig::parse(&format!("{BASIC}colour = red\n"), Path::new("/")).is_err());
        assert!(RunConfig::parse(&format!("{BASIC}k = 5\n"), Path::new("/")).is_err());
        assert!(RunConfig::parse(&format!("{BASIC}model.x.flavour = y\n"), Path::new("/")).is_err());
    }

    #[test]
    fn bad_values() {
        assert!(RunConfig::parse(&BASIC.replace("k = 1, 20", "k = 0"), Path::new("/")).is_err());
        assert!(RunConfig::parse(&format!("{BASIC}toxicity.threshold = 1.5\n"), Path::new("/")).is_err());
        assert!(RunConfig::parse(&format!("{BASIC}toxicity.decision = insult\n"), Path::new("/")).is_err());
        assert!(RunConfig::parse(&BASIC.replace("stub:3", "gopher://x"), Path::new("/")).is_err());
        assert!(RunConfig::parse(&BASIC.replace("languages = da, no", "languages = da"), Path::new("/")).is_err());
    }

    #[test]
    fn model_filter_and_offline() {
        let cfg = RunConfig::parse(&BASIC.replace("stub:3", "https://x/fill"), Path::new("/")).unwrap();
        let only = cfg.select_models(&["norbert".into()]).unwrap();
        assert_eq!(only.len(), 1);
        assert!(cfg.select_models(&["nope".into()]).is_err());
        assert!(cfg.check_offline(&only, false).is_ok());
        assert!(cfg.check_offline(&cfg.select_models(&[]).unwrap(), false).is_err());
    }
}
