//! Size, dependency and package figures for every bundled application.

use msba_harness::{complexity, Corpus};

fn main() -> anyhow::Result<()> {
    let corpus = Corpus::bundled();
    let profile = corpus.profile("python-flask")?;
    for app in corpus.apps() {
        let report = complexity::measure(&corpus, &app, &profile)?;
        print!("{}", report.to_markdown());
        for (service, deps) in &report.per_service_dependencies {
            println!("  {service}: {deps} dependencies");
        }
        println!();
    }
    Ok(())
}
