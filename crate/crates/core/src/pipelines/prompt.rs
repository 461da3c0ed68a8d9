//! Prompt templates shipped in `prompts/`, with `{{name}}` placeholders.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    System,
    Stage1,
    FileAnalysis,
    CommitIdentifier,
    Simple,
}

impl Template {
    pub fn source(self) -> &'static str {
        match self {
            Template::System => include_str!("../../prompts/system.txt"),
            Template::Stage1 => include_str!("../../prompts/stage1.txt"),
            Template::FileAnalysis => include_str!("../../prompts/file_analysis.txt"),
            Template::CommitIdentifier => include_str!("../../prompts/commit_identifier.txt"),
            Template::Simple => include_str!("../../prompts/simple.txt"),
        }
    }

    pub fn render(self, vars: &[(&str, &str)]) -> String {
        render_template(self.source(), vars)
    }
}

/// Substitutes `{{name}}` in one left-to-right pass, so substituted values are
/// never expanded again. Unknown placeholders are left as they are.
pub fn render_template(src: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(src.len());
    let mut rest = src;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let name = after[..end].trim();
                match vars.iter().find(|(k, _)| *k == name) {
                    Some((_, v)) => out.push_str(v),
                    None => out.push_str(&rest[start..start + 2 + end + 2]),
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}
