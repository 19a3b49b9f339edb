//! Prompt assembly and model access.

mod gateway;
mod transcript;

pub use gateway::{
    complete, CompletionRequest, Gateway, GatewayError, GatewayReply, LiveGateway, ReplayGateway,
    prompt_sha256, RetryPolicy, StubGateway, StubRule,
};
pub use transcript::{exchange_key, LlmExchange, TranscriptStore};

use serde::{Deserialize, Serialize};

use crate::codefab::GenerationProfile;
use crate::spec_model::{render_prompt_text, AppSpec};

const GENERATION: &str = include_str!("../../assets/prompts/generation.txt");
const REFLECTION: &str = include_str!("../../assets/prompts/reflection.txt");
const REGENERATION: &str = include_str!("../../assets/prompts/regeneration.txt");
const JUDGE: &str = include_str!("../../assets/prompts/judge.txt");

/// Largest error block accepted by [`build_reflection_prompt`].
pub const DEFAULT_REFLECTION_CAP: usize = 16 * 1024;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("service `{0}` is not part of the application")]
    UnknownService(String),
    #[error("one-shot prompts need an example")]
    MissingExample,
    #[error("zero-shot prompts must not carry an example")]
    UnexpectedExample,
    #[error("error block is empty")]
    EmptyErrors,
    #[error("error block is {len} bytes, above the {cap} byte cap")]
    ErrorsTooLarge { len: usize, cap: usize },
    #[error("reflection is empty")]
    EmptyReflection,
    #[error("original code is empty")]
    EmptyCode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShotMode {
    #[default]
    ZeroShot,
    OneShot,
}

impl ShotMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ShotMode::ZeroShot => "zero_shot",
            ShotMode::OneShot => "one_shot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub mode: ShotMode,
    pub guidelines: String,
    pub example: Option<String>,
    pub app_title: String,
    pub app_text: String,
    pub target_service: String,
    pub services: Vec<String>,
}

impl PromptBundle {
    pub fn new(
        spec: &AppSpec,
        profile: &GenerationProfile,
        target_service: &str,
        mode: ShotMode,
    ) -> Result<Self, PromptError> {
        let service = spec
            .service(target_service)
            .ok_or_else(|| PromptError::UnknownService(target_service.to_string()))?;
        Ok(Self {
            mode,
            guidelines: profile.guidelines.clone(),
            example: match mode {
                ShotMode::OneShot => Some(profile.one_shot_example.clone()),
                ShotMode::ZeroShot => None,
            },
            app_title: spec.title.clone(),
            app_text: render_prompt_text(spec),
            target_service: service.name.clone(),
            services: spec.services.iter().map(|s| s.name.clone()).collect(),
        })
    }
}

/// Replaces `{key}` markers in one pass. Substituted text is never
/// scanned again and unknown markers are left as they are.
pub fn fill_template(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let hit = after.find('}').and_then(|close| {
            let key = &after[..close];
            values
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| (close, *v))
        });
        match hit {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn build_generation_prompt(bundle: &PromptBundle) -> Result<String, PromptError> {
    if !bundle.services.iter().any(|s| s == &bundle.target_service) {
        return Err(PromptError::UnknownService(bundle.target_service.clone()));
    }
    let example = match (bundle.mode, &bundle.example) {
        (ShotMode::OneShot, Some(e)) => Some(e),
        (ShotMode::OneShot, None) => return Err(PromptError::MissingExample),
        (ShotMode::ZeroShot, Some(_)) => return Err(PromptError::UnexpectedExample),
        (ShotMode::ZeroShot, None) => None,
    };
    let mut prompt = fill_template(
        GENERATION,
        &[
            ("app_title", &bundle.app_title),
            ("service", &bundle.target_service),
            ("app_spec", &bundle.app_text),
            ("guidelines", bundle.guidelines.trim_end()),
        ],
    );
    if let Some(example) = example {
        if !prompt.ends_with('\n') {
            prompt.push('\n');
        }
        prompt.push_str(example.trim_end());
        prompt.push('\n');
    }
    Ok(prompt)
}

pub fn build_reflection_prompt(trimmed_errors: &str) -> Result<String, PromptError> {
    build_reflection_prompt_capped(trimmed_errors, DEFAULT_REFLECTION_CAP)
}

pub fn build_reflection_prompt_capped(trimmed_errors: &str, cap: usize) -> Result<String, PromptError> {
    if trimmed_errors.trim().is_empty() {
        return Err(PromptError::EmptyErrors);
    }
    if trimmed_errors.len() > cap {
        return Err(PromptError::ErrorsTooLarge {
            len: trimmed_errors.len(),
            cap,
        });
    }
    Ok(format!("{}\n\n{}", trimmed_errors.trim_end(), REFLECTION))
}

pub fn build_regeneration_prompt(original_code: &str, reflection: &str) -> Result<String, PromptError> {
    if original_code.trim().is_empty() {
        return Err(PromptError::EmptyCode);
    }
    if reflection.trim().is_empty() {
        return Err(PromptError::EmptyReflection);
    }
    let tail = fill_template(REGENERATION, &[("reflection", reflection.trim_end())]);
    let fence = if original_code.ends_with('\n') { "```" } else { "\n```" };
    Ok(format!("```\n{original_code}{fence}\n\n{tail}"))
}

pub fn build_judge_prompt(spec_text: &str) -> String {
    fill_template(JUDGE, &[("spec", spec_text)])
}
