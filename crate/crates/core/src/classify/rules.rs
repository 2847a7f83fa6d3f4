use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Classifier, ClassifyError};

/// One pattern rule. `segment` restricts the match to one input segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub pattern: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<usize>,
    pub class: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RulesSpec {
    pub task: String,
    pub labels: Vec<String>,
    pub rules: Vec<RuleSpec>,
    /// Class assigned when no rule fires; uniform distribution when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<String>,
}

/// First-match-wins pattern table. A hit puts probability 1 on its class.
#[derive(Debug, Clone)]
pub struct RuleTable {
    spec: RulesSpec,
    compiled: Vec<(Regex, Option<usize>, usize)>,
    default: Option<usize>,
}

impl RuleTable {
    pub fn new(spec: RulesSpec) -> Result<Self, ClassifyError> {
        let class_of = |name: &str| {
            spec.labels
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| ClassifyError::MissingLabel {
                    task: spec.task.clone(),
                    label: name.to_string(),
                })
        };
        let mut compiled = Vec::with_capacity(spec.rules.len());
        for r in &spec.rules {
            let re = Regex::new(&r.pattern)
                .map_err(|e| ClassifyError::InvalidModel(format!("bad pattern {:?}: {e}", r.pattern)))?;
            compiled.push((re, r.segment, class_of(&r.class)?));
        }
        let default = spec.default.as_deref().map(class_of).transpose()?;
        Ok(RuleTable {
            spec,
            compiled,
            default,
        })
    }

    pub fn spec(&self) -> &RulesSpec {
        &self.spec
    }

    fn one_hot(&self, class: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.spec.labels.len()];
        p[class] = 1.0;
        p
    }
}

impl Classifier for RuleTable {
    fn task(&self) -> &str {
        &self.spec.task
    }

    fn labels(&self) -> &[String] {
        &self.spec.labels
    }

    fn predict(&self, segments: &[String]) -> Result<Vec<f64>, ClassifyError> {
        for (re, seg, class) in &self.compiled {
            let hit = match seg {
                Some(i) => segments.get(*i).is_some_and(|s| re.is_match(s)),
                None => segments.iter().any(|s| re.is_match(s)),
            };
            if hit {
                return Ok(self.one_hot(*class));
            }
        }
        Ok(match self.default {
            Some(c) => self.one_hot(c),
            None => {
                let k = self.spec.labels.len();
                vec![1.0 / k as f64; k]
            }
        })
    }
}
