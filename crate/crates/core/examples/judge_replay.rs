//! Difficulty score from recorded judge replies.

use msba_harness::complexity::llm_difficulty;
use msba_harness::prompt_forge::{ReplayGateway, TranscriptStore};
use msba_harness::spec_model::render_prompt_text;
use msba_harness::Corpus;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let corpus = Corpus::bundled();
    let out = std::env::temp_dir().join("msba-judge-example.transcripts.jsonl");
    let _ = std::fs::remove_file(&out);
    let store = TranscriptStore::new(&out);
    for app in corpus.apps() {
        let gateway = ReplayGateway::load(&[corpus.recordings_dir(&app)])?;
        let text = render_prompt_text(&corpus.load_spec(&app)?);
        let verdict = llm_difficulty(&text, &gateway, &store, "judge-fixture").await?;
        println!("{app}: {}", verdict.score);
    }
    Ok(())
}
