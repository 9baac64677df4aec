//! Prompt templates for the judge roles.
//!
//! Templates are data, not code: they live under `prompts/` at the repo
//! root and are embedded at compile time. `{{name}}` markers are replaced
//! verbatim; unknown markers are left in place so a missing variable is
//! visible in the rendered prompt.

use crate::judge::JudgeRole;

pub fn template_for(role: JudgeRole) -> &'static str {
    match role {
        JudgeRole::EdgeJudge => include_str!("../../../prompts/edge_judge.txt"),
        JudgeRole::ServerScreen => include_str!("../../../prompts/server_screen.txt"),
        // The explorer has two phases; `explorer_step` is the default,
        // round 0 uses [`EXPLORER_START`].
        JudgeRole::ExplorerAgent => include_str!("../../../prompts/explorer_step.txt"),
        JudgeRole::TaskSynthesizer => include_str!("../../../prompts/task_synthesizer.txt"),
        JudgeRole::TaskValidator => include_str!("../../../prompts/task_validator.txt"),
        JudgeRole::FuzzyGenerator => include_str!("../../../prompts/fuzzy_generator.txt"),
        JudgeRole::AnswerJudge => include_str!("../../../prompts/answer_judge.txt"),
    }
}

pub const EXPLORER_START: &str = include_str!("../../../prompts/explorer_start.txt");

/// Replace `{{key}}` markers with the given values.
pub fn render(template: &str, vars: &[(&str, String)]) -> String {
    let mut out = template.to_owned();
    for (key, value) in vars {
        out = out.replace(&format!("{{{{{key}}}}}"), value);
    }
    out
}
