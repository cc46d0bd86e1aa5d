//! Prompt templates as directories of plain-text files.
//!
//! A prompt set holds `system.txt`, `user.txt`, `question.txt`,
//! `generation_prefix.txt` and `response.txt`; a judge set holds
//! `label_system.txt`, `label.txt`, `readability_system.txt` and
//! `readability.txt`. Placeholders are written `{name}`. One trailing
//! newline per file is ignored.

use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use dualhead_core::textproto::{JudgeTemplates, PromptTemplates};

use crate::io::write_atomic;

const PROMPT_FILES: [&str; 5] = ["system", "user", "question", "generation_prefix", "response"];
const JUDGE_FILES: [&str; 4] = ["label_system", "label", "readability_system", "readability"];

fn read_part(dir: &Path, name: &str) -> Result<String> {
    let p = dir.join(format!("{name}.txt"));
    let s = fs::read_to_string(&p).with_context(|| format!("reading template {}", p.display()))?;
    Ok(s.strip_suffix('\n').unwrap_or(&s).to_string())
}

fn write_parts(dir: &Path, parts: &[(&str, &str)]) -> Result<()> {
    for (name, text) in parts {
        write_atomic(&dir.join(format!("{name}.txt")), format!("{text}\n").as_bytes())?;
    }
    Ok(())
}

pub fn load_prompt_templates(dir: &Path) -> Result<PromptTemplates> {
    let [system, user, question, generation_prefix, response] = PROMPT_FILES.map(|n| read_part(dir, n));
    let t = PromptTemplates {
        system: system?,
        user: user?,
        question: question?,
        generation_prefix: generation_prefix?,
        response: response?,
    };
    ensure!(
        t.user.contains("{document}"),
        "{}: user.txt must contain the {{document}} placeholder",
        dir.display()
    );
    Ok(t)
}

pub fn write_prompt_templates(dir: &Path, t: &PromptTemplates) -> Result<()> {
    write_parts(
        dir,
        &[
            ("system", &t.system),
            ("user", &t.user),
            ("question", &t.question),
            ("generation_prefix", &t.generation_prefix),
            ("response", &t.response),
        ],
    )
}

pub fn load_judge_templates(dir: &Path) -> Result<JudgeTemplates> {
    let [label_system, label, readability_system, readability] = JUDGE_FILES.map(|n| read_part(dir, n));
    let t = JudgeTemplates {
        label_system: label_system?,
        label_template: label?,
        readability_system: readability_system?,
        readability_template: readability?,
    };
    ensure!(
        t.label_template.contains("{explanation}") && t.readability_template.contains("{text}"),
        "{}: judge templates need {{explanation}} and {{text}} placeholders",
        dir.display()
    );
    Ok(t)
}

pub fn write_judge_templates(dir: &Path, t: &JudgeTemplates) -> Result<()> {
    write_parts(
        dir,
        &[
            ("label_system", &t.label_system),
            ("label", &t.label_template),
            ("readability_system", &t.readability_system),
            ("readability", &t.readability_template),
        ],
    )
}

/// Writes every built-in template set under `root`.
pub fn export_builtin(root: &Path) -> Result<()> {
    write_prompt_templates(&root.join("synth"), &PromptTemplates::synth())?;
    write_prompt_templates(&root.join("synth-probability"), &PromptTemplates::synth_probability())?;
    write_prompt_templates(&root.join("clinical"), &PromptTemplates::clinical())?;
    write_prompt_templates(&root.join("clinical-probability"), &PromptTemplates::clinical_probability())?;
    write_judge_templates(&root.join("judge"), &JudgeTemplates::default())?;
    write_judge_templates(&root.join("judge-claim"), &JudgeTemplates::claim())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_sets_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        export_builtin(dir.path()).unwrap();
        assert_eq!(load_prompt_templates(&dir.path().join("synth")).unwrap(), PromptTemplates::synth());
        assert_eq!(
            load_prompt_templates(&dir.path().join("clinical-probability")).unwrap(),
            PromptTemplates::clinical_probability()
        );
        assert_eq!(load_judge_templates(&dir.path().join("judge")).unwrap(), JudgeTemplates::default());
        assert_eq!(load_judge_templates(&dir.path().join("judge-claim")).unwrap(), JudgeTemplates::claim());
    }

    #[test]
    fn bundled_files_match_builtins() {
        let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("templates");
        assert_eq!(load_prompt_templates(&root.join("synth")).unwrap(), PromptTemplates::synth());
        assert_eq!(
            load_prompt_templates(&root.join("synth-probability")).unwrap(),
            PromptTemplates::synth_probability()
        );
        assert_eq!(load_prompt_templates(&root.join("clinical")).unwrap(), PromptTemplates::clinical());
        assert_eq!(load_judge_templates(&root.join("judge")).unwrap(), JudgeTemplates::default());
    }

    #[test]
    fn missing_placeholder_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = PromptTemplates::synth();
        t.user = "record:".into();
        write_prompt_templates(dir.path(), &t).unwrap();
        assert!(load_prompt_templates(dir.path()).is_err());
    }
}
