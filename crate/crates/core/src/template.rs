//! Prompt templates with `{{placeholder}}` substitution.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ASSESS: &str = "assess";
pub const REPAIR: &str = "repair";
pub const REFLECT_USER: &str = "reflect_user";
pub const REFLECT_ITEM: &str = "reflect_item";

pub const ASSESSMENT_SCHEMA: &str = r#"{"scores": {"<item_id>": <number in [0,1]>, ...one entry per item}, "compatibility": <number in [0,1]>, "rationale": "<one sentence>"}"#;
pub const PROFILE_SCHEMA: &str = "plain text: the complete rewritten user profile";
pub const DESCRIPTION_SCHEMA: &str = "plain text: the complete rewritten item description";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {template}: placeholder {{{{{placeholder}}}}} was not supplied")]
    MissingPlaceholder { template: String, placeholder: String },

    #[error("template {template}: unterminated placeholder")]
    Unterminated { template: String },

    #[error("cannot read template {path}: {message}")]
    Load { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
    pub output_schema: String,
}

enum Segment<'a> {
    Text(&'a str),
    Placeholder(&'a str),
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>, output_schema: impl Into<String>) -> Self {
        Self { name: name.into(), body: body.into(), output_schema: output_schema.into() }
    }

    fn segments(&self) -> Result<Vec<Segment<'_>>, TemplateError> {
        let mut out = Vec::new();
        let mut rest = self.body.as_str();
        while let Some(open) = rest.find("{{") {
            out.push(Segment::Text(&rest[..open]));
            let after = &rest[open + 2..];
            let close = after.find("}}").ok_or_else(|| TemplateError::Unterminated { template: self.name.clone() })?;
            out.push(Segment::Placeholder(after[..close].trim()));
            rest = &after[close + 2..];
        }
        out.push(Segment::Text(rest));
        Ok(out)
    }

    pub fn placeholders(&self) -> Result<BTreeSet<String>, TemplateError> {
        Ok(self
            .segments()?
            .into_iter()
            .filter_map(|s| match s {
                Segment::Placeholder(name) => Some(name.to_string()),
                Segment::Text(_) => None,
            })
            .collect())
    }

    /// Substitutes every placeholder. Values are inserted verbatim and are
    /// not rescanned for placeholders.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len());
        for segment in self.segments()? {
            match segment {
                Segment::Text(text) => out.push_str(text),
                Segment::Placeholder(name) => {
                    let value = values.get(name).ok_or_else(|| TemplateError::MissingPlaceholder {
                        template: self.name.clone(),
                        placeholder: name.to_string(),
                    })?;
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}

/// The four templates one run uses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub assess: PromptTemplate,
    pub repair: PromptTemplate,
    pub reflect_user: PromptTemplate,
    pub reflect_item: PromptTemplate,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            assess: PromptTemplate::new(ASSESS, include_str!("../templates/assess.tmpl"), ASSESSMENT_SCHEMA),
            repair: PromptTemplate::new(REPAIR, include_str!("../templates/repair.tmpl"), ASSESSMENT_SCHEMA),
            reflect_user: PromptTemplate::new(
                REFLECT_USER,
                include_str!("../templates/reflect_user.tmpl"),
                PROFILE_SCHEMA,
            ),
            reflect_item: PromptTemplate::new(
                REFLECT_ITEM,
                include_str!("../templates/reflect_item.tmpl"),
                DESCRIPTION_SCHEMA,
            ),
        }
    }
}

impl TemplateSet {
    /// Loads `<name>.tmpl` files from `dir`; any template without a file keeps
    /// the shipped default.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::default();
        for template in [&mut set.assess, &mut set.repair, &mut set.reflect_user, &mut set.reflect_item] {
            let path = dir.join(format!("{}.tmpl", template.name));
            match std::fs::read_to_string(&path) {
                Ok(body) => template.body = body,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(TemplateError::Load { path: path.display().to_string(), message: e.to_string() }),
            }
        }
        Ok(set)
    }

    /// Writes the templates as `<name>.tmpl` files.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for template in [&self.assess, &self.repair, &self.reflect_user, &self.reflect_item] {
            std::fs::write(dir.join(format!("{}.tmpl", template.name)), &template.body)?;
        }
        Ok(())
    }
}
