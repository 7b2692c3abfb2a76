use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Result;

const DEFAULT_TEMPLATE: &str = "\
You are a professional data analyst. Your task is to analyze a user's interaction history to infer their preferences.

- User ID: {user_id}
- Interaction History:
{history}

Please conduct a structured reasoning by two steps:
- Identify Common Attributes Across Items: find the attributes shared by the items above.
- Summarize Preferences Across Multiple Dimensions: describe the user's preferences along each dimension you found.

Output Format:
<think> reasoning process here </think>
<answer> answer here </answer>
";

/// Plain-text prompt with `{user_id}` and `{history}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            text: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into() }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(fs::read_to_string(path)?))
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub user_id: usize,
    pub prompt_text: String,
    /// Filled by [`super::fetch_user_preference`].
    pub answer_text: String,
    /// Set when the model response lacked `<answer>` tags and the full text
    /// was kept instead.
    #[serde(default)]
    pub unstructured_answer: bool,
}

/// Renders the template for one user; history lines keep the given order.
pub fn build_user_prompt(
    user_id: usize,
    history: &[(usize, String)],
    template: &PromptTemplate,
) -> PromptRecord {
    let mut rendered_history = String::new();
    for (item, description) in history {
        writeln!(rendered_history, "  - Item {item}: {description}").unwrap();
    }
    let prompt_text = template
        .text
        .replace("{user_id}", &user_id.to_string())
        .replace("{history}", rendered_history.trim_end_matches('\n'));
    PromptRecord {
        user_id,
        prompt_text,
        answer_text: String::new(),
        unstructured_answer: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_item_history() {
        let p = build_user_prompt(7, &[(42, "red stroller".into())], &PromptTemplate::default());
        assert_eq!(p.prompt_text.matches("- Item ").count(), 1);
        assert!(p.prompt_text.contains("Item 42: red stroller"));
        assert!(p.prompt_text.contains("User ID: 7"));
        assert!(p.answer_text.is_empty());
    }

    #[test]
    fn template_sections_present_in_order() {
        let p = build_user_prompt(1, &[(3, "bottle".into())], &PromptTemplate::default());
        let t = &p.prompt_text;
        let anchors = [
            "You are a professional data analyst.",
            "User ID: 1",
            "Interaction History",
            "Identify Common Attributes Across Items",
            "Summarize Preferences Across Multiple Dimensions",
            "Output Format",
            "<think> reasoning process here </think>",
            "<answer> answer here </answer>",
        ];
        let positions: Vec<usize> = anchors.iter().map(|a| t.find(a).expect(a)).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn long_history_keeps_order() {
        let history: Vec<(usize, String)> =
            (0..50).map(|k| (1000 + 17 * k, format!("desc {k}"))).collect();
        let p = build_user_prompt(5, &history, &PromptTemplate::default());
        let mut last = 0;
        for (id, desc) in &history {
            let needle = format!("Item {id}: {desc}\n");
            let pos = p.prompt_text.find(&needle).expect("item missing");
            assert!(pos >= last);
            last = pos;
        }
    }

    #[test]
    fn custom_template_and_empty_description() {
        let t = PromptTemplate::new("u={user_id}\n{history}\nend");
        let p = build_user_prompt(2, &[(9, String::new())], &t);
        assert_eq!(p.prompt_text, "u=2\n  - Item 9: \nend");
    }
}
