mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use msba_harness::arena::{trim_errors, TrimConfig};
use msba_harness::codefab::derive_dependencies;
use msba_harness::complexity::{dependency_count, word_count, DependencyManifest};
use msba_harness::prompt_forge::{
    build_generation_prompt, build_judge_prompt, build_reflection_prompt, build_regeneration_prompt, PromptBundle,
    ShotMode,
};
use msba_harness::spec_model::{parse_spec, render_prompt_text, to_document};

use common::corpus;

fn prose() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 ,.;:'()\\-/]{0,80}"
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn spec_document_round_trips(app in prop::sample::select(vec!["library", "restaurant"]),
                                 index in 0usize..4, text in prose(), details in prose()) {
        let mut spec = corpus().load_spec(app).unwrap();
        let i = index % spec.services.len();
        spec.services[i].description = text;
        spec.services[i].additional_details = details;
        let once = parse_spec(&to_document(&spec)).unwrap();
        prop_assert_eq!(&once, &spec);
        let twice = parse_spec(&to_document(&once)).unwrap();
        prop_assert_eq!(&twice, &once);
        prop_assert_eq!(render_prompt_text(&twice), render_prompt_text(&spec));
    }

    #[test]
    fn word_count_is_additive(a in "\\PC{0,200}", b in "\\PC{0,200}") {
        prop_assert_eq!(word_count(&format!("{a} {b}")), word_count(&a) + word_count(&b));
    }

    #[test]
    fn dependency_total_ignores_order_and_duplicates(
        app in prop::sample::select(vec!["library", "restaurant"]),
        seed in any::<u64>(),
        copies in proptest::collection::vec(0usize..3, 16),
    ) {
        let c = corpus();
        let spec = c.load_spec(app).unwrap();
        let manifest = c.load_manifest(app).unwrap();
        let base = dependency_count(&spec, &manifest, None).unwrap();

        let mut deps = Vec::new();
        for (i, d) in manifest.dependencies.iter().enumerate() {
            for _ in 0..=copies[i % copies.len()] {
                deps.push(d.clone());
            }
        }
        let mut order: Vec<usize> = (0..deps.len()).collect();
        let mut state = seed;
        for i in (1..order.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let shuffled = DependencyManifest {
            app: manifest.app.clone(),
            dependencies: order.into_iter().map(|i| deps[i].clone()).collect(),
        };
        let again = dependency_count(&spec, &shuffled, None).unwrap();
        prop_assert_eq!(again.total, base.total);
        prop_assert_eq!(again.per_service, base.per_service);
    }

    #[test]
    fn derivation_is_idempotent_and_order_insensitive(
        modules in proptest::collection::vec(
            prop::sample::select(vec!["flask", "pymongo", "jwt", "bson", "os", "json", "uuid", "datetime",
                                      "requests", "yaml", "re", "flask_jwt_extended", "dateutil", "typing"]),
            0..20),
        seed in any::<u64>(),
    ) {
        let profile = corpus().profile("python-flask").unwrap();
        let source: String = modules.iter().map(|m| format!("import {m}\n")).collect();
        let once = derive_dependencies(&source, &profile);
        prop_assert_eq!(derive_dependencies(&source, &profile), once.clone());

        let mut shuffled = modules.clone();
        let mut state = seed;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            shuffled.swap(i, (state >> 33) as usize % (i + 1));
        }
        let other: String = shuffled.iter().map(|m| format!("from {m} import x\n")).collect();
        let a: BTreeSet<String> = once.iter().cloned().collect();
        let b: BTreeSet<String> = derive_dependencies(&other, &profile).into_iter().collect();
        prop_assert_eq!(a, b);
        for key in profile.remap.keys() {
            prop_assert!(!once.contains(key));
            if modules.iter().any(|m| m == key) {
                prop_assert!(once.contains(&profile.remap[key]));
            }
        }
    }

    #[test]
    fn trimmed_report_never_exceeds_cap(
        lines in proptest::collection::vec(
            prop_oneof![
                "\\PC{0,300}",
                "[A-Z][a-z]{1,12}(Error|Exception): \\PC{0,400}",
                Just("Traceback (most recent call last):".to_string()),
                "  File \"app.py\", line [0-9]{1,4}, in [a-z_]{1,10}",
            ],
            0..200),
        cap in 0usize..20_000,
        frames in 0usize..8,
    ) {
        let logs = BTreeMap::from([("Books".to_string(), lines.join("\n"))]);
        let notes = vec!["Books did not answer on /books within 60s".to_string()];
        let out = trim_errors(&logs, None, &notes, &TrimConfig { byte_cap: cap, frames });
        prop_assert!(out.len() <= cap, "{} > {cap}", out.len());
    }

    #[test]
    fn prompt_builders_are_pure(errors in "\\PC{1,300}", code in "\\PC{1,300}", reflection in "\\PC{1,300}") {
        prop_assume!(!errors.trim().is_empty() && !code.trim().is_empty() && !reflection.trim().is_empty());
        prop_assert_eq!(build_reflection_prompt(&errors), build_reflection_prompt(&errors));
        prop_assert_eq!(build_regeneration_prompt(&code, &reflection), build_regeneration_prompt(&code, &reflection));
        prop_assert_eq!(build_judge_prompt(&code), build_judge_prompt(&code));
    }
}

#[test]
fn generation_prompt_is_deterministic() {
    let c = corpus();
    let spec = c.load_spec("library").unwrap();
    let profile = c.profile("python-flask").unwrap();
    for mode in [ShotMode::ZeroShot, ShotMode::OneShot] {
        for s in &spec.services {
            let a = build_generation_prompt(&PromptBundle::new(&spec, &profile, &s.name, mode).unwrap()).unwrap();
            let b = build_generation_prompt(&PromptBundle::new(&spec, &profile, &s.name, mode).unwrap()).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn remap_keys_are_not_standard_modules() {
    let profile = corpus().profile("python-flask").unwrap();
    for key in profile.remap.keys() {
        assert!(!profile.standard_modules.contains(key), "{key}");
    }
}
