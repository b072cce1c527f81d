use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

/// A prompt with `{name}` placeholders. Substitution is single pass, so braces
/// inside substituted values are left alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub text: &'static str,
}

pub const FEWSHOT: Template = Template {
    name: "fewshot_v1",
    text: include_str!("../../templates/fewshot_v1.txt"),
};

pub const EXAMPLE_BLOCK: Template = Template {
    name: "example_block_v1",
    text: include_str!("../../templates/example_block_v1.txt"),
};

pub const GENERATE: Template = Template {
    name: "generate_v1",
    text: include_str!("../../templates/generate_v1.txt"),
};

pub const LABEL: Template = Template {
    name: "label_v1",
    text: include_str!("../../templates/label_v1.txt"),
};

pub const PARAPHRASE: Template = Template {
    name: "paraphrase_v1",
    text: include_str!("../../templates/paraphrase_v1.txt"),
};

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("static regex"))
}

impl Template {
    pub fn placeholders(&self) -> Vec<&'static str> {
        let mut seen = std::collections::HashSet::new();
        placeholder()
            .captures_iter(self.text)
            .map(|c| c.get(1).expect("group").as_str())
            .filter(|p| seen.insert(*p))
            .collect()
    }

    pub fn render(&self, values: &[(&str, &str)]) -> Result<String> {
        let mut out = String::with_capacity(self.text.len());
        let mut last = 0;
        for cap in placeholder().captures_iter(self.text) {
            let whole = cap.get(0).expect("match");
            let key = &cap[1];
            let value = values
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::Template {
                    template: self.name.to_string(),
                    placeholder: key.to_string(),
                })?;
            out.push_str(&self.text[last..whole.start()]);
            out.push_str(value);
            last = whole.end();
        }
        out.push_str(&self.text[last..]);
        Ok(out)
    }
}
