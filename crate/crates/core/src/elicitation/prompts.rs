use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four elicitation tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    FeatureGeneration,
    FeatureVerification,
    Triplet,
    Pairwise,
}

impl Task {
    pub const ALL: [Task; 4] = [
        Task::FeatureGeneration,
        Task::FeatureVerification,
        Task::Triplet,
        Task::Pairwise,
    ];

    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            Task::FeatureGeneration => &["concept1"],
            Task::FeatureVerification => &["concept1", "property1"],
            Task::Triplet => &["concept1", "concept2", "anchor"],
            Task::Pairwise => &["concept1", "concept2"],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::FeatureGeneration => "feature_generation",
            Task::FeatureVerification => "feature_verification",
            Task::Triplet => "triplet",
            Task::Pairwise => "pairwise",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "feature_generation" | "features" => Ok(Task::FeatureGeneration),
            "feature_verification" | "verification" => Ok(Task::FeatureVerification),
            "triplet" | "triplets" => Ok(Task::Triplet),
            "pairwise" => Ok(Task::Pairwise),
            other => Err(Error::Parse(format!("unknown task `{other}`"))),
        }
    }
}

pub const FEATURE_GENERATION: &str = "List all the properties of {concept1}";
/// Wording used in the prose description of the feature-listing simulation.
pub const FEATURE_GENERATION_ALT: &str = "List the features of a {concept1}";
pub const FEATURE_VERIFICATION: &str = "In one word, Yes/No: Are {concept1} {property1}?";
/// "Do ... have ..." form for possession features ("has claws").
pub const FEATURE_VERIFICATION_ALT: &str = "In one word, Yes/No: Do {concept1} have {property1}?";
pub const TRIPLET: &str = "Answer using only one word - {concept1} or {concept2} and not {anchor}. \
                           Which is more similar in meaning to {anchor}?";
pub const PAIRWISE: &str = "Answer with only one number from 1 to 7, considering 1 as 'extremely dissimilar', \
                            2 as 'very dissimilar', 3 as 'likely dissimilar', 4 as 'neutral', \
                            5 as 'likely similar', 6 as 'very similar', and 7 as 'extremely similar': \
                            How similar is {concept1} and {concept2}?";

/// A prompt with `{name}` placeholders, checked against its task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    task: Task,
    template: String,
}

impl PromptTemplate {
    pub fn new(task: Task, template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        let present = placeholders(&template)?;
        for p in task.required_placeholders() {
            if !present.iter().any(|x| x == p) {
                return Err(Error::Invariant(format!(
                    "{task} template lacks the {{{p}}} placeholder"
                )));
            }
        }
        Ok(Self { task, template })
    }

    pub fn default_for(task: Task) -> Self {
        let text = match task {
            Task::FeatureGeneration => FEATURE_GENERATION,
            Task::FeatureVerification => FEATURE_VERIFICATION,
            Task::Triplet => TRIPLET,
            Task::Pairwise => PAIRWISE,
        };
        Self::new(task, text).expect("built-in templates are valid")
    }

    /// Looks up a built-in template by name: `default` or `alternate`.
    pub fn named(task: Task, name: &str) -> Result<Self> {
        match (task, name) {
            (_, "default") => Ok(Self::default_for(task)),
            (Task::FeatureGeneration, "alternate") => Self::new(task, FEATURE_GENERATION_ALT),
            (Task::FeatureVerification, "alternate") => Self::new(task, FEATURE_VERIFICATION_ALT),
            _ => Err(Error::Parse(format!("no template named `{name}` for {task}"))),
        }
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    /// Substitutes every placeholder; each one must have a binding.
    pub fn render(&self, bindings: &BTreeMap<&str, &str>) -> Result<String> {
        let mut out = String::with_capacity(self.template.len() + 32);
        let mut rest = self.template.as_str();
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let close = rest[open..]
                .find('}')
                .map(|c| open + c)
                .expect("validated at construction");
            let name = &rest[open + 1..close];
            let value = bindings
                .get(name)
                .ok_or_else(|| Error::MissingBinding(name.to_string()))?;
            out.push_str(value);
            rest = &rest[close + 1..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

fn placeholders(template: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let close = rest[open..]
            .find('}')
            .ok_or_else(|| Error::Parse(format!("unclosed placeholder in {template:?}")))?;
        out.push(rest[open + 1..open + close].to_string());
        rest = &rest[open + close + 1..];
    }
    Ok(out)
}

/// Renders the default template for `task`.
pub fn render_prompt(task: Task, bindings: &BTreeMap<&str, &str>) -> Result<String> {
    PromptTemplate::default_for(task).render(bindings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b<'a>(pairs: &[(&'a str, &'a str)]) -> BTreeMap<&'a str, &'a str> {
        pairs.iter().copied().collect()
    }

    #[test]
    fn feature_generation() {
        let s = render_prompt(Task::FeatureGeneration, &b(&[("concept1", "Alligator")])).unwrap();
        assert_eq!(s, "List all the properties of Alligator");
        let alt = PromptTemplate::named(Task::FeatureGeneration, "alternate").unwrap();
        assert_eq!(alt.render(&b(&[("concept1", "tiger")])).unwrap(), "List the features of a tiger");
    }

    #[test]
    fn verification() {
        let s = render_prompt(
            Task::FeatureVerification,
            &b(&[("concept1", "alligators"), ("property1", "ectothermic")]),
        )
        .unwrap();
        assert_eq!(s, "In one word, Yes/No: Are alligators ectothermic?");
    }

    #[test]
    fn triplet() {
        let s = render_prompt(
            Task::Triplet,
            &b(&[("anchor", "Shovel"), ("concept1", "Alligator"), ("concept2", "Spanner")]),
        )
        .unwrap();
        assert_eq!(
            s,
            "Answer using only one word - Alligator or Spanner and not Shovel. \
             Which is more similar in meaning to Shovel?"
        );
    }

    #[test]
    fn missing_binding() {
        let err = render_prompt(Task::Triplet, &b(&[("concept1", "a"), ("concept2", "b")])).unwrap_err();
        assert!(matches!(err, Error::MissingBinding(p) if p == "anchor"));
    }

    #[test]
    fn templates_must_carry_their_placeholders() {
        assert!(PromptTemplate::new(Task::Pairwise, "How similar is {concept1}?").is_err());
        assert!(PromptTemplate::new(Task::Pairwise, "{concept2} vs {concept1}").is_ok());
        assert!(PromptTemplate::new(Task::Pairwise, "{concept2} vs {concept1").is_err());
        for task in Task::ALL {
            PromptTemplate::default_for(task);
        }
    }

    #[test]
    fn task_names_parse() {
        for task in Task::ALL {
            assert_eq!(task.as_str().parse::<Task>().unwrap(), task);
        }
        assert_eq!("feature-verification".parse::<Task>().unwrap(), Task::FeatureVerification);
    }
}
