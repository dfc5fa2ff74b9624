//! Acceptance checks. Each test prints one `PASS`/`FAIL`/`SKIP` line.
//!
//! Run with `cargo test -p honest-audit-cli --test acceptance -- --nocapture --test-threads=1`
//! to see the lines in order.

#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use honest_audit::corpus::{Category, Gender, GrammaticalNumber, Template};
use honest_audit::honest::{average_of_cells, category_gender_matrix, honest_score};
use honest_audit::net::RetryPolicy;
use honest_audit::probe::{query_backend, stub_words, CompletionStore, Endpoint, ModelSpec, StubBackend};
use honest_audit::report::{emit_toxicity_table, parse_toxicity_csv, AuditReport};
use honest_audit::toxicity::{
    is_toxic, translation_agreement, validate_translation, FixtureRecorder, Recording, ReplayFixtures,
    ReplayToxicityClient, ReplayTranslator, SentenceOrigin, ToxicityConfig, ToxicityScorer, ToxicitySummary,
    Translator, DEFAULT_THRESHOLD,
};
use honest_audit_cli::{cmd_probe, cmd_score, cmd_score_toxicity, Options, RunConfig};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

fn verdict(n: u32, name: &str, ok: bool, detail: &str) {
    println!("criterion {n} [{name}]: {} {detail}", if ok { "PASS" } else { "FAIL" });
}

fn opts() -> Options {
    Options {
        retry: Some(RetryPolicy::no_backoff(1)),
        ..Default::default()
    }
}

#[test]
fn criterion_1_oracle_equivalence() {
    let start = Instant::now();
    let mut mismatches = Vec::new();
    let mut hurtful_seen = 0;
    for seed in 0..200u64 {
        let f = oracle::random_fixture(10_000 + seed, 50, 20, 100);
        let lex = f.lexicon();
        let got = honest_score(&f.sets, &lex, f.k).unwrap();
        let (h, t) = oracle::oracle_honest(&f);
        hurtful_seen += h;
        let want = h as f64 / t as f64;
        if (got.hurtful_count, got.total_count) != (h, t) || (got.score - want).abs() > 1e-12 {
            mismatches.push(format!(
                "seed {seed}: honest {}/{} vs {h}/{t}",
                got.hurtful_count, got.total_count
            ));
        }

        let m = category_gender_matrix(&f.sets, &f.templates, &lex, f.k).unwrap();
        let o = oracle::oracle_matrix(&f);
        let totals = (*m.totals.get(Gender::F), *m.totals.get(Gender::M));
        let other = (*m.other_counts.get(Gender::F), *m.other_counts.get(Gender::M));
        if totals != o.totals || other != o.other {
            mismatches.push(format!("seed {seed}: totals/other differ"));
        }
        for (i, c) in Category::ANALYSIS.iter().enumerate() {
            let (of, om) = o.counts[i];
            if (m.count(*c, Gender::F), m.count(*c, Gender::M)) != (of, om) {
                mismatches.push(format!("seed {seed}: {c} counts differ"));
            }
            for (g, n, d) in [(Gender::F, of, o.totals.0), (Gender::M, om, o.totals.1)] {
                let want = if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };
                if (m.cell(*c, g) - want).abs() > 1e-12 {
                    mismatches.push(format!("seed {seed}: {c}/{g} cell differs"));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let ok = mismatches.is_empty() && hurtful_seen > 0 && elapsed < Duration::from_secs(10);
    verdict(
        1,
        "oracle equivalence",
        ok,
        &format!(
            "200 fixtures, {} mismatch(es), {hurtful_seen} hurtful completions exercised, {:.2}s",
            mismatches.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(ok, "{mismatches:?} elapsed={elapsed:?}");
}

#[test]
fn criterion_2_decomposition() {
    let mut rng = StdRng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut splits = 0;
    let mut seed = 20_000u64;
    while splits < 100 {
        seed += 1;
        let f = oracle::random_fixture(seed, 50, 20, 100);
        if f.sets.len() < 2 {
            continue;
        }
        let lex = f.lexicon();
        let mut sets = f.sets.clone();
        sets.shuffle(&mut rng);
        let cut = rng.gen_range(1..sets.len());
        let (a, b) = sets.split_at(cut);
        let whole = honest_score(&f.sets, &lex, f.k).unwrap().score;
        let sa = honest_score(a, &lex, f.k).unwrap().score;
        let sb = honest_score(b, &lex, f.k).unwrap().score;
        let mean = (a.len() as f64 * sa + b.len() as f64 * sb) / (a.len() + b.len()) as f64;
        worst = worst.max((whole - mean).abs());
        splits += 1;
    }
    let ok = worst <= 1e-12;
    verdict(2, "decomposition", ok, &format!("100 splits, max deviation {worst:e}"));
    assert!(ok);
}

/// NorBERT's printed category cells, F and M, in table order.
const NORBERT_F: [f64; 12] = [6.67, 7.02, 0.35, 12.98, 1.75, 0.0, 1.75, 14.04, 0.0, 0.0, 6.67, 0.0];
const NORBERT_M: [f64; 12] = [6.67, 0.83, 0.56, 18.61, 2.78, 0.0, 3.06, 12.78, 0.0, 0.28, 3.89, 0.0];

/// Printed toxicity table: model, F, M, Total.
const TOXICITY_ROWS: [(&str, f64, f64, f64); 9] = [
    ("NorBERT", 2.77, 1.20, 3.97),
    ("NorBERT2", 2.63, 0.96, 3.60),
    ("NB-BERT", 1.93, 0.51, 2.45),
    ("NB-BERT_Large", 3.07, 0.57, 3.65),
    ("SwedishBERT", 2.21, 0.51, 2.72),
    ("SwedishBERT2", 1.10, 0.05, 1.15),
    ("SwedishMegatron", 2.12, 0.61, 2.73),
    ("DanishBERT", 3.23, 0.74, 3.97),
    ("DanishRoBERTa", 1.88, 0.45, 2.34),
];

fn hundredths(x: f64) -> i64 {
    (x * 100.0).round() as i64
}

#[test]
fn criterion_3_published_aggregates() {
    let avg_f = average_of_cells(&NORBERT_F);
    let avg_m = average_of_cells(&NORBERT_M);
    let f_ok = (avg_f - 4.26).abs() <= 0.01 + 1e-9;
    let m_ok = (avg_m - 4.28).abs() <= 0.01 + 1e-9;

    let mut report = AuditReport::default();
    for (model, f, m, _) in TOXICITY_ROWS {
        report.models.push(model.to_string());
        report
            .toxicity_table
            .insert(model.to_string(), ToxicitySummary::from_percentages(f, m));
    }
    let csv = emit_toxicity_table(&report).unwrap().csv;
    let rendered = parse_toxicity_csv(&csv).unwrap();
    let mut bad_totals = Vec::new();
    for (model, _, _, printed) in TOXICITY_ROWS {
        let row = rendered.iter().find(|r| r.0 == model).unwrap();
        if (hundredths(row.3) - hundredths(printed)).abs() > 1 {
            bad_totals.push(format!("{model}: {} vs {printed}", row.3));
        }
    }
    let totals_ok = bad_totals.is_empty();
    let ok = f_ok && m_ok && totals_ok;
    verdict(
        3,
        "published aggregates",
        ok,
        &format!(
            "NorBERT Avg F {avg_f:.4} vs 4.26 ({}), Avg M {avg_m:.4} vs 4.28 ({}), 9 toxicity totals ({})",
            if f_ok { "ok" } else { "off" },
            if m_ok {
                "ok"
            } else {
                "off: printed M cells sum to 49.46"
            },
            if totals_ok {
                "ok".to_string()
            } else {
                bad_totals.join("; ")
            }
        ),
    );
    assert!(ok, "avg F {avg_f}, avg M {avg_m}, totals {bad_totals:?}");
}

#[test]
fn criterion_4_threshold_boundary() {
    let got: Vec<bool> = [0.4999, 0.5000, 0.5001]
        .iter()
        .map(|s| is_toxic(*s, DEFAULT_THRESHOLD))
        .collect();
    let ok = got == [false, false, true];
    verdict(4, "threshold boundary", ok, &format!("0.4999/0.5000/0.5001 -> {got:?}"));
    assert!(ok);
}

/// Scores each sentence from a fixed table: Swedish text by its own flag,
/// English text by the flag of the sentence it was translated from.
struct TableScorer {
    direct: HashMap<String, f64>,
    bridged: HashMap<String, f64>,
}

impl ToxicityScorer for TableScorer {
    fn supports(&self, language: &str) -> bool {
        language == "sv" || language == "en"
    }

    fn score(
        &self,
        text: &str,
        language: &str,
        attributes: &[String],
    ) -> honest_audit::toxicity::Result<BTreeMap<String, f64>> {
        let table = if language == "en" { &self.bridged } else { &self.direct };
        let s = table[text];
        Ok(attributes.iter().map(|a| (a.clone(), s)).collect())
    }
}

struct TagTranslator;

impl Translator for TagTranslator {
    fn translate(&self, text: &str, _: &str, _: &str) -> honest_audit::toxicity::Result<String> {
        Ok(format!("EN: {text}"))
    }
}

/// Records fixtures for `n` Swedish sentences, `disagree` of which get
/// different flags on the two paths, and replays them.
fn replayed_agreement(n: usize, disagree: usize) -> (f64, usize, usize) {
    let mut direct = HashMap::new();
    let mut bridged = HashMap::new();
    let mut sentences = Vec::new();
    for i in 0..n {
        let text = format!("Kvinnan nummer {i} är en ord{i}");
        let d = if i % 9 == 0 { 0.81 } else { 0.12 };
        let b = if i < disagree { 0.93 - d } else { d };
        bridged.insert(format!("EN: {text}"), b);
        direct.insert(text.clone(), d);
        let origin = SentenceOrigin {
            template_id: format!("sv-{i}"),
            model_id: "swedishbert".into(),
            rank: 1,
        };
        sentences.push((origin, text));
    }
    let recorder = FixtureRecorder::new();
    let scorer = TableScorer { direct, bridged };
    let config = ToxicityConfig::default();
    validate_translation(
        &sentences,
        "sv",
        &Recording {
            inner: &TagTranslator,
            recorder: &recorder,
        },
        &Recording {
            inner: &scorer,
            recorder: &recorder,
        },
        &config,
    )
    .unwrap();

    let fixtures = recorder.to_jsonl();
    let scorer = ReplayToxicityClient::new(
        ReplayFixtures::parse(&fixtures).unwrap(),
        vec!["sv".into(), "en".into()],
    );
    let translator = ReplayTranslator::new(ReplayFixtures::parse(&fixtures).unwrap());
    let run = validate_translation(&sentences, "sv", &translator, &scorer, &config).unwrap();
    assert!(run.failed.is_empty(), "{:?}", run.failed.first());
    (
        run.report.agreement_rate,
        run.report.disagreements.len(),
        run.report.total,
    )
}

#[test]
fn criterion_5_agreement() {
    let pairs = [(true, true), (true, false), (false, false), (false, false)];
    let sentences: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
    let toy = translation_agreement(&pairs, &sentences).unwrap();
    let toy_ok = toy.agreement_rate == 0.75 && toy.disagreements.len() == 1;

    let (rate, disagreements, total) = replayed_agreement(3291, 104);
    let replay_ok = (rate - 0.9684).abs() <= 0.0001 && disagreements == 104 && total == 3291;
    let (identical, _, _) = replayed_agreement(50, 0);
    let identical_ok = identical == 1.0;

    let ok = toy_ok && replay_ok && identical_ok;
    verdict(
        5,
        "agreement",
        ok,
        &format!(
            "toy {:.2} with {} disagreement(s); replay {}/{total} disagree -> {rate:.4}; identical paths -> {identical:.1}",
            toy.agreement_rate,
            toy.disagreements.len(),
            disagreements
        ),
    );
    assert!(ok);
}

const IDENTITIES: [(&str, Gender, GrammaticalNumber); 6] = [
    ("Kvinnan", Gender::F, GrammaticalNumber::Singular),
    ("Mannen", Gender::M, GrammaticalNumber::Singular),
    ("Kvinnorna", Gender::F, GrammaticalNumber::Plural),
    ("Männen", Gender::M, GrammaticalNumber::Plural),
    ("Flickan", Gender::F, GrammaticalNumber::Singular),
    ("Pojken", Gender::M, GrammaticalNumber::Singular),
];

fn write_large_inputs(dir: &Path) {
    let mut corpus = String::from("template_id\tlanguage\tidentity_term\tgender\tnumber\tpredicate\traw_text\n");
    for i in 0..750 {
        let (term, gender, number) = IDENTITIES[i % IDENTITIES.len()];
        let predicate = format!("är känd som nummer {}", i / IDENTITIES.len());
        let template = Template {
            template_id: format!("sv-{i:04}"),
            language: "sv".into(),
            identity_term: term.into(),
            gender,
            grammatical_number: number,
            raw_text: format!("{term} {predicate} [BLANK]"),
            predicate,
        };
        writeln!(
            corpus,
            "{}\tsv\t{}\t{}\t{}\t{}\t{}",
            template.template_id,
            template.identity_term,
            template.gender.as_str(),
            template.grammatical_number.as_str(),
            template.predicate,
            template.raw_text
        )
        .unwrap();
    }
    fs::write(dir.join("templates_sv.tsv"), corpus).unwrap();

    let mut lexicon = String::from("lemma\tcategory\tlevel\n");
    let mut rng = StdRng::seed_from_u64(1000);
    let mut words: Vec<String> = stub_words().collect();
    words.shuffle(&mut rng);
    for (i, w) in words.iter().take(1000).enumerate() {
        let cat = Category::ALL[i % Category::ALL.len()];
        let level = if i % 2 == 0 { "conservative" } else { "inclusive" };
        writeln!(lexicon, "{w}\t{}\t{level}", cat.code()).unwrap();
    }
    fs::write(dir.join("lexicon_sv.tsv"), lexicon).unwrap();
}

fn large_config(dir: &Path, toxicity: &str, translate: &str) -> RunConfig {
    let text = format!(
        "languages = sv\nk = 1, 5, 10, 20\nstore = store.jsonl\nout = out\n\
         corpus.sv = templates_sv.tsv\nlexicon.sv = lexicon_sv.tsv\n\
         model.stub-sv.language = sv\nmodel.stub-sv.mask_token = [MASK]\nmodel.stub-sv.endpoint = stub:2023\n\
         toxicity.endpoint = {toxicity}\ntranslate.endpoint = {translate}\ntoxicity.direct_languages = en\n"
    );
    fs::write(dir.join("audit.conf"), &text).unwrap();
    RunConfig::load(dir.join("audit.conf")).unwrap()
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}

#[test]
fn criterion_6_end_to_end_offline() {
    let root = tempfile::tempdir().unwrap();
    let offline = Options {
        offline: true,
        ..opts()
    };

    // record toxicity fixtures once, from stub clients
    let rec = root.path().join("record");
    fs::create_dir_all(&rec).unwrap();
    write_large_inputs(&rec);
    let cfg = large_config(&rec, "stub:5", "stub:0");
    cmd_probe(&cfg, &offline).unwrap();
    let fixtures = root.path().join("fixtures.jsonl");
    cmd_score_toxicity(&cfg, &offline, Some(&fixtures)).unwrap();
    let replay = format!("replay:{}", fixtures.display());

    let mut runs = Vec::new();
    let mut times = Vec::new();
    for name in ["a", "b"] {
        let dir = root.path().join(name);
        fs::create_dir_all(&dir).unwrap();
        write_large_inputs(&dir);
        let start = Instant::now();
        let cfg = large_config(&dir, &replay, &replay);
        let (probe, _) = cmd_probe(&cfg, &offline).unwrap();
        let tox = cmd_score_toxicity(&cfg, &offline, None).unwrap();
        let (score, report) = cmd_score(&cfg, &offline).unwrap();
        times.push(start.elapsed());
        assert_eq!((probe.exit_code, tox.exit_code, score.exit_code), (0, 0, 0));
        assert_eq!(report.honest_table.len(), 4);
        assert!(report.toxicity_table["stub-sv"].scored > 0);
        runs.push(tree(&dir));
    }
    let identical = runs[0] == runs[1];
    let slowest = times.iter().max().unwrap();
    let ok = identical && *slowest < Duration::from_secs(30);
    verdict(
        6,
        "end-to-end offline",
        ok,
        &format!(
            "750 templates x k=20, 1000 lemmas, replayed toxicity; {} files {}, slowest run {:.2}s",
            runs[0].len(),
            if identical { "byte-identical" } else { "DIFFER" },
            slowest.as_secs_f64()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_7_replay_fidelity_and_prefix_coherence() {
    let root = tempfile::tempdir().unwrap();
    write_large_inputs(root.path());
    let cfg = large_config(root.path(), "stub:5", "stub:0");
    cmd_probe(&cfg, &opts()).unwrap();
    let original = fs::read(&cfg.store).unwrap();

    let mut replay_cfg = cfg.clone();
    replay_cfg.store = root.path().join("replayed.jsonl");
    replay_cfg.models[0].endpoint = Endpoint::Replay(cfg.store.clone());
    cmd_probe(&replay_cfg, &opts()).unwrap();
    let fidelity = fs::read(&replay_cfg.store).unwrap() == original;

    // every shallower query equals the prefix of the stored deep record
    let store = CompletionStore::open_read_only(&cfg.store).unwrap();
    let templates = honest_audit::corpus::load_templates(&cfg.corpora["sv"], "sv").unwrap();
    let spec = ModelSpec::new("stub-sv", "sv", "[MASK]", Endpoint::Stub(2023)).unwrap();
    let backend = StubBackend::new(2023);
    let mut incoherent = 0;
    let mut checked = 0;
    for t in templates.iter().step_by(5) {
        let deep = store.record("stub-sv", &t.template_id).unwrap().to_set();
        for k in 1..20 {
            let shallow = query_backend(&backend, &spec, t, k).unwrap().to_set();
            if Some(&shallow) != deep.prefix(k).as_ref() {
                incoherent += 1;
            }
            checked += 1;
        }
    }
    let ok = fidelity && incoherent == 0;
    verdict(
        7,
        "replay fidelity",
        ok,
        &format!(
            "replayed store {}; prefix coherence {incoherent}/{checked} mismatches",
            if fidelity { "byte-identical" } else { "DIFFERS" }
        ),
    );
    assert!(ok);
}

/// Needs `HONEST_AUDIT_LIVE_CONFIG`: a config whose model (default id
/// `danishbert`, override with `HONEST_AUDIT_LIVE_MODEL`) is the Danish BERT
/// endpoint, with the Danish corpus and lexicon.
#[test]
fn criterion_8_live_danish_spot_check() {
    let Ok(path) = std::env::var("HONEST_AUDIT_LIVE_CONFIG") else {
        println!("criterion 8 [live Danish HONEST@1]: SKIP (HONEST_AUDIT_LIVE_CONFIG not set)");
        return;
    };
    let model = std::env::var("HONEST_AUDIT_LIVE_MODEL").unwrap_or_else(|_| "danishbert".into());
    let cfg = RunConfig::load(&path).unwrap();
    let o = Options {
        models: vec![model.clone()],
        k_values: vec![1],
        ..Default::default()
    };
    cmd_probe(&cfg, &o).unwrap();
    let (_, report) = cmd_score(&cfg, &o).unwrap();
    let score = report.honest(&model, 1).unwrap().score;
    let ok = (score - 0.0495).abs() <= 0.01;
    verdict(
        8,
        "live Danish HONEST@1",
        ok,
        &format!("{score:.4} vs 0.0495 (a miss points to model drift)"),
    );
    assert!(ok);
}
