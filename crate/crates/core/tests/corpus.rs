mod common;

use std::collections::HashSet;

use common::synthetic_corpus;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tilkit::corpus::{
    clean_jsonl, clean_text, normalize_nfc, run_pipeline, run_pipeline_with_workers, DigestOrigin, DigestSet, Document,
    Stage, StageConfig,
};

fn none() -> DigestSet {
    DigestSet::new(DigestOrigin::ExternalReference)
}

#[test]
fn synthetic_corpus_accounting() {
    let (out, report) = run_pipeline(synthetic_corpus(), &StageConfig::default(), &none()).unwrap();
    let ids: Vec<&str> = out.iter().map(|d| d.id.as_str()).collect();
    assert_eq!(ids, ["d01", "d02", "d10"]);
    for stage in [Stage::MinLength, Stage::UrlDensity, Stage::HtmlTags, Stage::ScriptRatio, Stage::LanguageId] {
        assert_eq!(report.rejections(stage), 1, "{}", stage.name());
    }
    assert_eq!(report.rejections(Stage::Dedup), 2);
    assert_eq!((report.input_count, report.output_count, report.ingestion_errors), (10, 3, 0));
    assert_eq!(report.pass_rate, 0.3);
    assert!(out[2].text.contains("қаласы.\n\nТаулар"));
    assert!(!out[2].text.contains('\u{7}'));

    let (again, second) = run_pipeline(out.clone(), &StageConfig::default(), &none()).unwrap();
    assert_eq!(again, out);
    assert_eq!(second.total_rejections(), 0);
    assert_eq!(second.pass_rate, 1.0);
}

/// Random text mixing Cyrillic, Latin, combining marks, Hangul, controls and
/// whitespace.
fn random_text(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    let len = rng.random_range(0..=max_len);
    (0..len)
        .map(|_| {
            let cp = match rng.random_range(0..10) {
                0..=2 => rng.random_range(0x400u32..0x530),
                3 => rng.random_range(0x300u32..0x370),
                4 => rng.random_range(0x20u32..0x7F),
                5 => rng.random_range(0xAC00u32..0xAC40),
                6 => rng.random_range(0x1100u32..0x1176),
                7 => [0x0u32, 0x7, 0x9, 0xA, 0xD, 0x7F, 0x85][rng.random_range(0..7)],
                8 => [0x20u32, 0x20, 0xA0, 0x2003, 0x3000][rng.random_range(0..5)],
                _ => [0x41u32, 0x45, 0x4F, 0x55, 0x438, 0x415, 0x306, 0x308, 0x301][rng.random_range(0..9)],
            };
            char::from_u32(cp).unwrap()
        })
        .collect()
}

#[test]
fn nfc_agrees_with_independent_normalizer() {
    let icu = icu_normalizer::ComposingNormalizerBorrowed::new_nfc();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..1000 {
        let s = random_text(&mut rng, 40);
        assert_eq!(normalize_nfc(&s), icu.normalize(&s), "{s:?}");
    }
}

#[test]
fn cleaning_is_idempotent_on_random_text() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for _ in 0..1000 {
        let s = random_text(&mut rng, 60);
        let once = clean_text(&s);
        assert_eq!(clean_text(&once), once, "{s:?}");
    }
}

fn kazakh_sentence(rng: &mut ChaCha8Rng) -> String {
    const WORDS: [&str; 12] =
        ["қазақ", "тілі", "өте", "бай", "және", "әдемі", "ғылым", "үшін", "маңызды", "ұлттық", "мұра", "болып"];
    (0..rng.random_range(12..20)).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

fn noisy_corpus(seed: u64, n: usize) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<String> = (0..n / 3 + 1).map(|_| kazakh_sentence(&mut rng)).collect();
    (0..n)
        .map(|i| {
            let base = &pool[rng.random_range(0..pool.len())];
            let text = match rng.random_range(0..5) {
                0 => format!("  {base}\t"),
                1 => base.replace(' ', "  "),
                2 => format!("{base} http://a.kz http://b.kz http://c.kz http://d.kz http://e.kz http://f.kz"),
                3 => "short".to_string(),
                _ => base.clone(),
            };
            Document { id: format!("doc{i}"), source: "gen".into(), text }
        })
        .collect()
}

#[test]
fn dedup_matches_string_set_oracle() {
    let cfg = StageConfig::default();
    let docs = noisy_corpus(5, 600);
    let (out, report) = run_pipeline(docs.clone(), &cfg, &none()).unwrap();

    // Oracle: the first occurrence of each cleaned text that survives the
    // content filters, compared as strings rather than hashes.
    let (filtered, _) = run_pipeline(
        docs.iter().enumerate().map(|(i, d)| Document { text: format!("{} {i}", d.text), ..d.clone() }),
        &cfg,
        &none(),
    )
    .unwrap();
    let survivors: HashSet<&str> = filtered.iter().map(|d| d.id.as_str()).collect();
    let mut seen = HashSet::new();
    let expected: Vec<&str> = docs
        .iter()
        .filter(|d| survivors.contains(d.id.as_str()) && seen.insert(clean_text(&d.text)))
        .map(|d| d.id.as_str())
        .collect();
    assert_eq!(out.iter().map(|d| d.id.as_str()).collect::<Vec<_>>(), expected);
    assert!(report.rejections(Stage::Dedup) > 0);
}

fn jsonl(docs: &[Document]) -> Vec<u8> {
    let mut buf = Vec::new();
    for d in docs {
        serde_json::to_writer(&mut buf, d).unwrap();
        buf.push(b'\n');
    }
    buf
}

#[test]
fn worker_count_does_not_change_output() {
    let input = jsonl(&noisy_corpus(9, 3000));
    let cfg = StageConfig::default();
    let mut outputs = Vec::new();
    for workers in [1, 2, 8] {
        let mut out = Vec::new();
        let (report, digests) = clean_jsonl(&input[..], &mut out, &cfg, &none(), workers).unwrap();
        outputs.push((out, serde_json::to_string(&report).unwrap(), digests.len()));
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn reference_set_removes_known_documents() {
    let docs = noisy_corpus(11, 300);
    let (first, first_report) = run_pipeline(docs.clone(), &StageConfig::default(), &none()).unwrap();
    let reference: DigestSet = first.iter().map(|d| tilkit::corpus::md5_digest(&d.text)).collect();
    let (second, report) = run_pipeline(docs, &StageConfig::default(), &reference).unwrap();
    assert!(second.is_empty());
    assert_eq!(report.rejections(Stage::Dedup), first_report.rejections(Stage::Dedup) + first.len() as u64);
    assert_eq!(report.output_count, 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn every_input_is_accounted_for(seed in any::<u64>(), n in 0usize..200, workers in 1usize..4) {
        let mut docs = noisy_corpus(seed, n);
        if n > 3 {
            docs[1].id = docs[0].id.clone();
        }
        let (out, r) = run_pipeline_with_workers(docs, &StageConfig::default(), &none(), workers).unwrap();
        prop_assert_eq!(r.input_count, n as u64);
        prop_assert_eq!(r.output_count, out.len() as u64);
        prop_assert_eq!(r.input_count, r.output_count + r.total_rejections() + r.ingestion_errors);
        prop_assert_eq!(r.per_stage_rejections.len(), 6);
    }
}
