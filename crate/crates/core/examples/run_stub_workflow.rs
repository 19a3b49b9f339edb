//! Generate, test, reflect and regenerate with canned model replies.

use msba_harness::ledger::{self, ExperimentConfig, GatewayKind};
use msba_harness::Corpus;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let corpus = Corpus::bundled();
    let mut config = ExperimentConfig::new("library", "canned-example");
    config.services = vec!["Logs".into()];
    config.max_gen = 2;
    config.gateway.kind = GatewayKind::Stub;
    config.gateway.stub_file = Some(corpus.app_dir("library").join("stubs/logs_fail_then_fix.json"));

    let runs = tempfile_dir()?;
    let ctx = ledger::ExperimentContext::from_config(&config, corpus, &runs)?;
    let out = ledger::run_experiment(&config, &ctx).await?;
    for r in &out.records {
        let tags: Vec<_> = r.failure_tags.iter().map(|t| t.category.as_str()).collect();
        println!("{} {:?}: {}/{} {tags:?}", r.service, r.version, r.tests_passed, r.tests_total);
    }
    print!("{}", std::fs::read_to_string(out.batch_dir.join("report.md"))?);
    println!("artifacts under {}", out.batch_dir.display());
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join("msba-example-runs");
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
