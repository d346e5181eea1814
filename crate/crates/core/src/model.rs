//! Entities, relations and page structures shared by every stage.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;

/// Entity categories. The first 23 variants are the detector categories;
/// the remaining ones only appear in weak labels and nested text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    ContentBlock,
    Table,
    TableRow,
    TableColumn,
    TableCell,
    Tabular,
    Figure,
    Heading,
    Abstract,
    Equation,
    Itemize,
    Item,
    BibliographyBlock,
    TableCaption,
    FigureGraphic,
    FigureCaption,
    Header,
    Footer,
    PageNumber,
    Date,
    Keywords,
    Author,
    Affiliation,
    ContentLine,
    Section,
    Bibliography,
    EquationFormula,
    EquationLabel,
}

impl Category {
    pub const ALL: [Category; 28] = [
        Category::ContentBlock,
        Category::Table,
        Category::TableRow,
        Category::TableColumn,
        Category::TableCell,
        Category::Tabular,
        Category::Figure,
        Category::Heading,
        Category::Abstract,
        Category::Equation,
        Category::Itemize,
        Category::Item,
        Category::BibliographyBlock,
        Category::TableCaption,
        Category::FigureGraphic,
        Category::FigureCaption,
        Category::Header,
        Category::Footer,
        Category::PageNumber,
        Category::Date,
        Category::Keywords,
        Category::Author,
        Category::Affiliation,
        Category::ContentLine,
        Category::Section,
        Category::Bibliography,
        Category::EquationFormula,
        Category::EquationLabel,
    ];

    /// The 23 categories an entity detector emits.
    pub const DETECTOR: [Category; 23] = {
        let mut out = [Category::ContentBlock; 23];
        let mut i = 0;
        while i < 23 {
            out[i] = Category::ALL[i];
            i += 1;
        }
        out
    };

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::ContentBlock => "content_block",
            Category::Table => "table",
            Category::TableRow => "table_row",
            Category::TableColumn => "table_column",
            Category::TableCell => "table_cell",
            Category::Tabular => "tabular",
            Category::Figure => "figure",
            Category::Heading => "heading",
            Category::Abstract => "abstract",
            Category::Equation => "equation",
            Category::Itemize => "itemize",
            Category::Item => "item",
            Category::BibliographyBlock => "bibliography_block",
            Category::TableCaption => "table_caption",
            Category::FigureGraphic => "figure_graphic",
            Category::FigureCaption => "figure_caption",
            Category::Header => "header",
            Category::Footer => "footer",
            Category::PageNumber => "page_number",
            Category::Date => "date",
            Category::Keywords => "keywords",
            Category::Author => "author",
            Category::Affiliation => "affiliation",
            Category::ContentLine => "content_line",
            Category::Section => "section",
            Category::Bibliography => "bibliography",
            Category::EquationFormula => "equation_formula",
            Category::EquationLabel => "equation_label",
        }
    }

    /// Page furniture without a designated order or parent.
    pub fn is_meta(&self) -> bool {
        matches!(
            self,
            Category::Header
                | Category::Footer
                | Category::PageNumber
                | Category::Date
                | Category::Keywords
        )
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown category `{0}`")]
pub struct UnknownCategory(pub String);

impl FromStr for Category {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

/// Inclusive row/column span of a table cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellRange {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

impl CellRange {
    pub fn single(row: usize, col: usize) -> Self {
        Self {
            row_start: row,
            row_end: row,
            col_start: col,
            col_end: col,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.row_start <= self.row_end && self.col_start <= self.col_end
    }

    pub fn is_spanning(&self) -> bool {
        self.row_start != self.row_end || self.col_start != self.col_end
    }

    pub fn covers(&self, row: usize, col: usize) -> bool {
        (self.row_start..=self.row_end).contains(&row)
            && (self.col_start..=self.col_end).contains(&col)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub category: Category,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_range: Option<CellRange>,
}

impl Entity {
    pub fn new(id: impl Into<String>, category: Category, bbox: BBox) -> Self {
        Self {
            id: id.into(),
            category,
            bbox,
            confidence: None,
            cell_range: None,
        }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = Some(confidence);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationType {
    ParentOf,
    FollowedBy,
    Null,
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationType::ParentOf => "parent_of",
            RelationType::FollowedBy => "followed_by",
            RelationType::Null => "null",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub subject: String,
    pub object: String,
    #[serde(rename = "type")]
    pub rel_type: RelationType,
}

impl Relation {
    pub fn new(subject: impl Into<String>, object: impl Into<String>, rel_type: RelationType) -> Self {
        Self {
            subject: subject.into(),
            object: object.into(),
            rel_type,
        }
    }

    pub fn parent_of(subject: impl Into<String>, object: impl Into<String>) -> Self {
        Self::new(subject, object, RelationType::ParentOf)
    }

    pub fn followed_by(subject: impl Into<String>, object: impl Into<String>) -> Self {
        Self::new(subject, object, RelationType::FollowedBy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub width: f64,
    pub height: f64,
}

impl Page {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(0.0, 0.0, self.width.max(0.0), self.height.max(0.0))
            .expect("page dimensions are finite")
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown entity id `{0}`")]
    UnknownEntity(String),
    #[error("invalid structure file: {0}")]
    Json(#[from] serde_json::Error),
}

/// One page: entities plus the relations between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocStructure {
    pub page: Page,
    #[serde(default)]
    pub entities: Vec<Entity>,
    #[serde(default)]
    pub relations: Vec<Relation>,
}

impl DocStructure {
    pub fn new(page: Page) -> Self {
        Self {
            page,
            entities: Vec::new(),
            relations: Vec::new(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("structure serializes")
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn relations_of(&self, rel_type: RelationType) -> impl Iterator<Item = &Relation> {
        self.relations.iter().filter(move |r| r.rel_type == rel_type)
    }

    /// `(parent, child)` pairs.
    pub fn parent_pairs(&self) -> BTreeSet<(String, String)> {
        self.relations_of(RelationType::ParentOf)
            .map(|r| (r.subject.clone(), r.object.clone()))
            .collect()
    }

    /// Maps child id to parent id (first parent wins on malformed input).
    pub fn parent_map(&self) -> HashMap<&str, &str> {
        let mut out = HashMap::new();
        for r in self.relations_of(RelationType::ParentOf) {
            out.entry(r.object.as_str()).or_insert(r.subject.as_str());
        }
        out
    }

    /// Ordered child lists keyed by parent id; `None` holds the roots.
    pub fn sibling_chains(&self) -> BTreeMap<Option<String>, Vec<String>> {
        let parents = self.parent_map();
        let mut out = BTreeMap::new();
        let mut keys: BTreeSet<Option<&str>> = BTreeSet::new();
        for e in &self.entities {
            if e.category.is_meta() {
                continue;
            }
            keys.insert(parents.get(e.id.as_str()).copied());
        }
        for key in keys {
            let ids = match key {
                Some(p) => children(self, p).expect("parent resolves"),
                None => roots(self),
            };
            out.insert(key.map(str::to_string), ids);
        }
        out
    }

    /// Sorts relations into a canonical order.
    pub fn canonicalize(&mut self) {
        self.relations.sort_by(|a, b| {
            (a.rel_type, &a.subject, &a.object).cmp(&(b.rel_type, &b.subject, &b.object))
        });
        self.relations.dedup();
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        let mut out = self.clone();
        for e in &mut out.entities {
            e.bbox = e.bbox.translate(dx, dy);
        }
        out
    }
}

fn sort_key(e: &Entity) -> (f64, f64, &str) {
    (e.bbox.y0(), e.bbox.x0(), e.id.as_str())
}

fn cmp_position(a: &Entity, b: &Entity) -> std::cmp::Ordering {
    let (ay, ax, ai) = sort_key(a);
    let (by, bx, bi) = sort_key(b);
    ay.total_cmp(&by)
        .then(ax.total_cmp(&bx))
        .then_with(|| ai.cmp(bi))
}

/// Orders `members` by followed_by chains; leftovers follow in (y, x) order.
fn order_by_chains(s: &DocStructure, members: Vec<&Entity>) -> Vec<String> {
    let member_ids: HashSet<&str> = members.iter().map(|e| e.id.as_str()).collect();
    let mut next: HashMap<&str, &str> = HashMap::new();
    let mut has_prev: HashSet<&str> = HashSet::new();
    for r in s.relations_of(RelationType::FollowedBy) {
        let (a, b) = (r.subject.as_str(), r.object.as_str());
        if member_ids.contains(a) && member_ids.contains(b) && !next.contains_key(a) {
            next.insert(a, b);
            has_prev.insert(b);
        }
    }
    let mut heads: Vec<&Entity> = members
        .iter()
        .copied()
        .filter(|e| next.contains_key(e.id.as_str()) && !has_prev.contains(e.id.as_str()))
        .collect();
    heads.sort_by(|a, b| cmp_position(a, b));

    let mut out = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for head in heads {
        let mut cur = Some(head.id.as_str());
        while let Some(id) = cur {
            if !seen.insert(id) {
                break;
            }
            out.push(id.to_string());
            cur = next.get(id).copied();
        }
    }
    let mut rest: Vec<&Entity> = members
        .into_iter()
        .filter(|e| !seen.contains(e.id.as_str()))
        .collect();
    rest.sort_by(|a, b| cmp_position(a, b));
    out.extend(rest.into_iter().map(|e| e.id.clone()));
    out
}

/// Direct children of `id` in reading order.
pub fn children(s: &DocStructure, id: &str) -> Result<Vec<String>, ModelError> {
    if s.entity(id).is_none() {
        return Err(ModelError::UnknownEntity(id.to_string()));
    }
    let child_ids: HashSet<&str> = s
        .relations_of(RelationType::ParentOf)
        .filter(|r| r.subject == id)
        .map(|r| r.object.as_str())
        .collect();
    let members = s
        .entities
        .iter()
        .filter(|e| child_ids.contains(e.id.as_str()))
        .collect();
    Ok(order_by_chains(s, members))
}

/// Parentless, non-meta entities in reading order.
pub fn roots(s: &DocStructure) -> Vec<String> {
    let parents = s.parent_map();
    let members = s
        .entities
        .iter()
        .filter(|e| !e.category.is_meta() && !parents.contains_key(e.id.as_str()))
        .collect();
    order_by_chains(s, members)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateId { id: String },
    UnknownEntity { relation: usize, id: String },
    SelfRelation { id: String, rel_type: RelationType },
    MultipleParents { entity: String, parents: Vec<String> },
    ParentCycle { entity: String },
    CrossParentOrdering { subject: String, object: String },
    MultipleSuccessors { entity: String },
    MultiplePredecessors { entity: String },
    OrderingCycle { entity: String },
    MetaRelation { entity: String },
    NullRelation { subject: String, object: String },
    InvalidCellRange { entity: String },
    InvalidConfidence { entity: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { id } => write!(f, "duplicate entity id `{id}`"),
            Violation::UnknownEntity { relation, id } => {
                write!(f, "relation #{relation} references unknown entity `{id}`")
            }
            Violation::SelfRelation { id, rel_type } => {
                write!(f, "`{id}` {rel_type} itself")
            }
            Violation::MultipleParents { entity, parents } => {
                write!(f, "multiple parents for `{entity}`: {}", parents.join(", "))
            }
            Violation::ParentCycle { entity } => write!(f, "parent_of cycle through `{entity}`"),
            Violation::CrossParentOrdering { subject, object } => {
                write!(f, "cross-parent ordering `{subject}` followed_by `{object}`")
            }
            Violation::MultipleSuccessors { entity } => {
                write!(f, "`{entity}` has more than one followed_by successor")
            }
            Violation::MultiplePredecessors { entity } => {
                write!(f, "`{entity}` has more than one followed_by predecessor")
            }
            Violation::OrderingCycle { entity } => {
                write!(f, "followed_by cycle through `{entity}`")
            }
            Violation::MetaRelation { entity } => {
                write!(f, "meta entity `{entity}` carries a non-null relation")
            }
            Violation::NullRelation { subject, object } => {
                write!(f, "null relation between non-meta `{subject}` and `{object}`")
            }
            Violation::InvalidCellRange { entity } => write!(f, "invalid cell range on `{entity}`"),
            Violation::InvalidConfidence { entity } => {
                write!(f, "confidence outside [0, 1] on `{entity}`")
            }
        }
    }
}

/// Checks the forest and sibling-chain invariants. An empty result means valid.
pub fn validate_structure(s: &DocStructure) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut by_id: HashMap<&str, &Entity> = HashMap::new();
    for e in &s.entities {
        if by_id.insert(e.id.as_str(), e).is_some() {
            out.push(Violation::DuplicateId { id: e.id.clone() });
        }
        match e.cell_range {
            Some(r) if e.category != Category::TableCell || !r.is_well_formed() => {
                out.push(Violation::InvalidCellRange { entity: e.id.clone() });
            }
            _ => {}
        }
        if let Some(c) = e.confidence {
            if !(0.0..=1.0).contains(&c) {
                out.push(Violation::InvalidConfidence { entity: e.id.clone() });
            }
        }
    }

    let mut parents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut successors: BTreeMap<&str, usize> = BTreeMap::new();
    let mut predecessors: BTreeMap<&str, usize> = BTreeMap::new();
    let mut ordering: Vec<(&str, &str)> = Vec::new();
    let mut meta_flagged: BTreeSet<&str> = BTreeSet::new();

    for (i, r) in s.relations.iter().enumerate() {
        let mut resolved = true;
        for id in [&r.subject, &r.object] {
            if !by_id.contains_key(id.as_str()) {
                out.push(Violation::UnknownEntity {
                    relation: i,
                    id: id.clone(),
                });
                resolved = false;
            }
        }
        if !resolved {
            continue;
        }
        if r.subject == r.object {
            out.push(Violation::SelfRelation {
                id: r.subject.clone(),
                rel_type: r.rel_type,
            });
            continue;
        }
        let subj_meta = by_id[r.subject.as_str()].category.is_meta();
        let obj_meta = by_id[r.object.as_str()].category.is_meta();
        match r.rel_type {
            RelationType::Null => {
                if !subj_meta || !obj_meta {
                    out.push(Violation::NullRelation {
                        subject: r.subject.clone(),
                        object: r.object.clone(),
                    });
                }
                continue;
            }
            _ => {
                for (id, meta) in [(&r.subject, subj_meta), (&r.object, obj_meta)] {
                    if meta && meta_flagged.insert(id.as_str()) {
                        out.push(Violation::MetaRelation { entity: id.clone() });
                    }
                }
            }
        }
        match r.rel_type {
            RelationType::ParentOf => parents
                .entry(r.object.as_str())
                .or_default()
                .push(r.subject.as_str()),
            RelationType::FollowedBy => {
                *successors.entry(r.subject.as_str()).or_default() += 1;
                *predecessors.entry(r.object.as_str()).or_default() += 1;
                ordering.push((r.subject.as_str(), r.object.as_str()));
            }
            RelationType::Null => unreachable!(),
        }
    }

    for (child, ps) in &parents {
        let distinct: BTreeSet<&str> = ps.iter().copied().collect();
        if distinct.len() > 1 {
            out.push(Violation::MultipleParents {
                entity: child.to_string(),
                parents: distinct.into_iter().map(str::to_string).collect(),
            });
        }
    }

    // parent_of cycles, following the first parent of each node
    let first_parent: BTreeMap<&str, &str> =
        parents.iter().map(|(c, ps)| (*c, ps[0])).collect();
    out.extend(
        cycle_members(&first_parent)
            .into_iter()
            .map(|entity| Violation::ParentCycle { entity }),
    );

    for (id, n) in &successors {
        if *n > 1 {
            out.push(Violation::MultipleSuccessors { entity: id.to_string() });
        }
    }
    for (id, n) in &predecessors {
        if *n > 1 {
            out.push(Violation::MultiplePredecessors { entity: id.to_string() });
        }
    }
    let mut next: BTreeMap<&str, &str> = BTreeMap::new();
    for (a, b) in &ordering {
        next.entry(a).or_insert(b);
        let pa = first_parent.get(a);
        let pb = first_parent.get(b);
        if pa != pb {
            out.push(Violation::CrossParentOrdering {
                subject: a.to_string(),
                object: b.to_string(),
            });
        }
    }
    out.extend(
        cycle_members(&next)
            .into_iter()
            .map(|entity| Violation::OrderingCycle { entity }),
    );
    out
}

/// For a functional graph `node -> succ`, one representative (smallest id) per cycle.
fn cycle_members(succ: &BTreeMap<&str, &str>) -> Vec<String> {
    let mut state: HashMap<&str, u8> = HashMap::new();
    let mut reps = BTreeSet::new();
    for &start in succ.keys() {
        if state.contains_key(start) {
            continue;
        }
        let mut path = Vec::new();
        let mut cur = Some(start);
        while let Some(node) = cur {
            match state.get(node) {
                Some(1) => {
                    let pos = path.iter().position(|n: &&str| *n == node).unwrap();
                    let rep = path[pos..].iter().min().unwrap();
                    reps.insert(rep.to_string());
                    break;
                }
                Some(_) => break,
                None => {
                    state.insert(node, 1);
                    path.push(node);
                    cur = succ.get(node).copied();
                }
            }
        }
        for n in path {
            state.insert(n, 2);
        }
    }
    reps.into_iter().collect()
}
