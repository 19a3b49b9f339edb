//! Extracts code from a model reply and derives its requirements list.

use msba_harness::codefab::{derive_dependencies, extract_source};
use msba_harness::Corpus;

fn main() -> anyhow::Result<()> {
    let profile = Corpus::bundled().profile("python-flask")?;
    let reply = std::fs::read_to_string(Corpus::bundled().app_dir("library").join("stubs/logs_correct.md"))?;
    let extraction = extract_source(&reply)?;
    println!("{} lines of source", extraction.source.lines().count());
    let deps = derive_dependencies(&extraction.source, &profile);
    println!("requirements: {deps:?}");

    let sample = "import jwt\nfrom bson import ObjectId\nimport os, json\nfrom flask import Flask\n";
    println!("sample requirements: {:?}", derive_dependencies(sample, &profile));
    Ok(())
}
