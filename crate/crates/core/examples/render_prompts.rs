//! Prints the generation prompt for one service, zero-shot or one-shot.
//!
//! cargo run --example render_prompts -- library Borrows one-shot

use msba_harness::prompt_forge::{build_generation_prompt, PromptBundle, ShotMode};
use msba_harness::Corpus;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let app = args.next().unwrap_or_else(|| "library".into());
    let service = args.next().unwrap_or_else(|| "Cardholders".into());
    let mode = match args.next().as_deref() {
        Some("one-shot") => ShotMode::OneShot,
        _ => ShotMode::ZeroShot,
    };
    let corpus = Corpus::bundled();
    let spec = corpus.load_spec(&app)?;
    let profile = corpus.profile("python-flask")?;
    let bundle = PromptBundle::new(&spec, &profile, &service, mode)?;
    println!("{}", build_generation_prompt(&bundle)?);
    Ok(())
}
