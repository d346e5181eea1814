//! Document grammar: which categories may nest inside which.
//!
//! The default rule table ships as `grammar.toml` next to this file and can be
//! replaced at runtime with [`Grammar::from_toml_str`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::Deserialize;
use thiserror::Error;

use crate::model::{Category, DocStructure, RelationType};

const DEFAULT_GRAMMAR: &str = include_str!("grammar.toml");

#[derive(Debug, Error)]
pub enum GrammarError {
    #[error("invalid grammar file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("duplicate rule for `{0}`")]
    DuplicateRule(Category),
    #[error("meta category `{0}` cannot have children")]
    MetaWithChildren(Category),
    #[error("max count for `{child}` under `{parent}` but the edge is not allowed")]
    CountWithoutEdge { parent: Category, child: Category },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrammarRule {
    pub parent: Category,
    pub allowed_children: BTreeSet<Category>,
    /// Subset of `allowed_children` that was inferred rather than listed.
    pub inferred_children: BTreeSet<Category>,
    pub is_float: bool,
    pub is_meta: bool,
    pub max_counts: BTreeMap<Category, usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleConfig {
    parent: Category,
    #[serde(default)]
    children: Vec<Category>,
    #[serde(default)]
    inferred: Vec<Category>,
    #[serde(default)]
    inferred_any_non_meta: bool,
    #[serde(default)]
    float: bool,
    #[serde(default)]
    meta: bool,
    #[serde(default)]
    max_counts: BTreeMap<Category, usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GrammarConfig {
    #[serde(default)]
    rule: Vec<RuleConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grammar {
    rules: BTreeMap<Category, GrammarRule>,
}

impl Default for Grammar {
    fn default() -> Self {
        Self::from_toml_str(DEFAULT_GRAMMAR).expect("bundled grammar is valid")
    }
}

impl Grammar {
    pub fn default_toml() -> &'static str {
        DEFAULT_GRAMMAR
    }

    pub fn from_toml_str(s: &str) -> Result<Self, GrammarError> {
        let config: GrammarConfig = toml::from_str(s)?;
        let mut rules = BTreeMap::new();
        for rc in config.rule {
            let mut inferred: BTreeSet<Category> = rc.inferred.into_iter().collect();
            if rc.inferred_any_non_meta {
                inferred.extend(Category::ALL.iter().copied().filter(|c| !c.is_meta()));
            }
            let listed: BTreeSet<Category> = rc.children.into_iter().collect();
            inferred.retain(|c| !listed.contains(c));
            let allowed: BTreeSet<Category> = listed.union(&inferred).copied().collect();
            if rc.meta && !allowed.is_empty() {
                return Err(GrammarError::MetaWithChildren(rc.parent));
            }
            if let Some(child) = rc.max_counts.keys().find(|c| !allowed.contains(c)) {
                return Err(GrammarError::CountWithoutEdge {
                    parent: rc.parent,
                    child: *child,
                });
            }
            let rule = GrammarRule {
                parent: rc.parent,
                allowed_children: allowed,
                inferred_children: inferred,
                is_float: rc.float,
                is_meta: rc.meta,
                max_counts: rc.max_counts,
            };
            if rules.insert(rc.parent, rule).is_some() {
                return Err(GrammarError::DuplicateRule(rc.parent));
            }
        }
        Ok(Self { rules })
    }

    pub fn rule(&self, c: Category) -> Option<&GrammarRule> {
        self.rules.get(&c)
    }

    pub fn rules(&self) -> impl Iterator<Item = &GrammarRule> {
        self.rules.values()
    }

    pub fn allowed_child(&self, parent: Category, child: Category) -> bool {
        self.rules
            .get(&parent)
            .is_some_and(|r| r.allowed_children.contains(&child))
    }

    pub fn is_meta(&self, c: Category) -> bool {
        self.rules.get(&c).is_some_and(|r| r.is_meta)
    }

    pub fn is_float(&self, c: Category) -> bool {
        self.rules.get(&c).is_some_and(|r| r.is_float)
    }

    pub fn max_count(&self, parent: Category, child: Category) -> Option<usize> {
        self.rules
            .get(&parent)
            .and_then(|r| r.max_counts.get(&child).copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GrammarViolation {
    DisallowedEdge {
        parent: String,
        child: String,
        parent_category: Category,
        child_category: Category,
    },
    MaxCountExceeded {
        parent: String,
        child_category: Category,
        count: usize,
        max: usize,
    },
}

impl GrammarViolation {
    pub fn subject(&self) -> &str {
        match self {
            GrammarViolation::DisallowedEdge { parent, .. } => parent,
            GrammarViolation::MaxCountExceeded { parent, .. } => parent,
        }
    }
}

impl fmt::Display for GrammarViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrammarViolation::DisallowedEdge {
                parent,
                child,
                parent_category,
                child_category,
            } => write!(
                f,
                "`{parent}` ({parent_category}) may not parent `{child}` ({child_category})"
            ),
            GrammarViolation::MaxCountExceeded {
                parent,
                child_category,
                count,
                max,
            } => write!(
                f,
                "`{parent}` has {count} {child_category} children (at most {max})"
            ),
        }
    }
}

/// Grammar violations of a structure, sorted by subject id.
pub fn check_conformance(s: &DocStructure, grammar: &Grammar) -> Vec<GrammarViolation> {
    let cats: HashMap<&str, Category> = s
        .entities
        .iter()
        .map(|e| (e.id.as_str(), e.category))
        .collect();
    let mut out = Vec::new();
    let mut counts: BTreeMap<(&str, Category), usize> = BTreeMap::new();
    for r in s.relations_of(RelationType::ParentOf) {
        let (Some(&pc), Some(&cc)) = (cats.get(r.subject.as_str()), cats.get(r.object.as_str()))
        else {
            continue;
        };
        if !grammar.allowed_child(pc, cc) {
            out.push(GrammarViolation::DisallowedEdge {
                parent: r.subject.clone(),
                child: r.object.clone(),
                parent_category: pc,
                child_category: cc,
            });
        }
        *counts.entry((r.subject.as_str(), cc)).or_default() += 1;
    }
    for ((parent, child_cat), count) in counts {
        if let Some(max) = grammar.max_count(cats[parent], child_cat) {
            if count > max {
                out.push(GrammarViolation::MaxCountExceeded {
                    parent: parent.to_string(),
                    child_category: child_cat,
                    count,
                    max,
                });
            }
        }
    }
    out.sort_by(|a, b| a.subject().cmp(b.subject()));
    out
}
