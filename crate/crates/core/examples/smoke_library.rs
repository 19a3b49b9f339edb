//! Runs every library suite against the ground-truth composition.

use std::sync::Arc;

use msba_harness::arena::{smoke, LocalRuntime, LocalSettings, TrimConfig};
use msba_harness::reference_services::StaticLookup;
use msba_harness::Corpus;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let corpus = Corpus::bundled();
    let spec = corpus.load_spec("library")?;
    let mut suites = Vec::new();
    for s in &spec.services {
        suites.push((corpus.load_suite("library", &s.name)?, corpus.load_fixture("library", &s.name)?));
    }
    let lookup = Arc::new(StaticLookup::load(&corpus.books_lookup_path())?);
    let runtime = LocalRuntime::new(LocalSettings::for_profile(&corpus.profile("python-flask")?, lookup));
    for outcome in smoke(&runtime, &spec, &suites, &TrimConfig::default()).await? {
        if let Some(v) = &outcome.verdict {
            println!("{}: {}/{}", v.service, v.passed(), v.total());
            for line in v.failure_lines() {
                println!("  {line}");
            }
        }
    }
    Ok(())
}
