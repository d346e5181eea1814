//! Structure-based refinement.
//!
//! Repeatedly classifies relations and applies four repair steps in order:
//! grow parents over their children, merge duplicate nestings, wrap siblings
//! that exceed a grammar count, adopt child-only orphans. Any change restarts
//! the loop; it ends on a clean pass or after `max_iterations` rounds.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::grammar::Grammar;
use crate::model::{Category, DocStructure, Entity, Page, Relation};
use crate::relations::{classify_relations, RelationConfig};

pub const DEFAULT_MAX_ITERATIONS: usize = 30;

/// Categories that should never stand alone at the top level.
pub const CHILD_ONLY: [Category; 11] = [
    Category::FigureGraphic,
    Category::FigureCaption,
    Category::TableCaption,
    Category::Tabular,
    Category::Item,
    Category::TableCell,
    Category::TableRow,
    Category::TableColumn,
    Category::EquationFormula,
    Category::EquationLabel,
    Category::BibliographyBlock,
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("max_iterations must be at least 1")]
pub struct InvalidIterations;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefinementConfig {
    pub max_iterations: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

impl RefinementConfig {
    pub fn new(max_iterations: usize) -> Result<Self, InvalidIterations> {
        if max_iterations == 0 {
            return Err(InvalidIterations);
        }
        Ok(Self { max_iterations })
    }
}

/// Editable view of a valid structure: entities plus ordered child lists.
/// The `None` key holds the top-level (non-meta) entities.
#[derive(Debug, Clone)]
struct Tree {
    page: Page,
    entities: Vec<Entity>,
    kids: BTreeMap<Option<String>, Vec<String>>,
}

impl Tree {
    fn from_structure(s: &DocStructure) -> Self {
        Self {
            page: s.page,
            entities: s.entities.clone(),
            kids: s.sibling_chains(),
        }
    }

    fn into_structure(self) -> DocStructure {
        let mut relations = Vec::new();
        for (parent, list) in &self.kids {
            if let Some(p) = parent {
                relations.extend(list.iter().map(|c| Relation::parent_of(p, c)));
            }
            relations.extend(list.windows(2).map(|w| Relation::followed_by(&w[0], &w[1])));
        }
        let mut s = DocStructure {
            page: self.page,
            entities: self.entities,
            relations,
        };
        s.canonicalize();
        s
    }

    fn index(&self) -> HashMap<String, usize> {
        self.entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.clone(), i))
            .collect()
    }

    fn children_of(&self, id: &str) -> &[String] {
        self.kids
            .get(&Some(id.to_string()))
            .map_or(&[], Vec::as_slice)
    }

    fn parents(&self) -> impl Iterator<Item = &String> {
        self.kids.iter().filter_map(|(p, l)| p.as_ref().filter(|_| !l.is_empty()))
    }

    fn unique_id(&self, base: &str) -> String {
        let taken: HashSet<&str> = self.entities.iter().map(|e| e.id.as_str()).collect();
        let mut candidate = format!("{base}~wrap");
        let mut n = 1;
        while taken.contains(candidate.as_str()) {
            n += 1;
            candidate = format!("{base}~wrap{n}");
        }
        candidate
    }

    /// Step (1). Parents are visited bottom-up, so one pass suffices.
    fn expand_parents(&mut self) -> bool {
        let idx = self.index();
        let mut changed = false;
        let roots = self.kids.get(&None).cloned().unwrap_or_default();
        let mut stack: Vec<(String, bool)> = roots.into_iter().rev().map(|r| (r, false)).collect();
        while let Some((id, expanded)) = stack.pop() {
            let kids = self.children_of(&id).to_vec();
            if !expanded {
                stack.push((id, true));
                stack.extend(kids.into_iter().rev().map(|k| (k, false)));
                continue;
            }
            if kids.is_empty() {
                continue;
            }
            let mut bbox = self.entities[idx[&id]].bbox;
            for k in &kids {
                bbox = bbox.union(&self.entities[idx[k]].bbox);
            }
            if bbox != self.entities[idx[&id]].bbox {
                self.entities[idx[&id]].bbox = bbox;
                changed = true;
            }
        }
        changed
    }

    /// Removes `child` and splices its own children into its slot.
    fn dissolve_into_parent(&mut self, parent: &str, child: &str) {
        let grandkids = self.kids.remove(&Some(child.to_string())).unwrap_or_default();
        if let Some(list) = self.kids.get_mut(&Some(parent.to_string())) {
            if let Some(pos) = list.iter().position(|c| c == child) {
                list.splice(pos..=pos, grandkids);
            }
        }
        self.entities.retain(|e| e.id != child);
    }

    /// Step (2).
    fn merge_singletons(&mut self, grammar: &Grammar) -> bool {
        let idx = self.index();
        let mut merges = Vec::new();
        for p in self.parents() {
            let pcat = self.entities[idx[p]].category;
            let kids = self.children_of(p);
            let same: Vec<&String> = kids
                .iter()
                .filter(|k| self.entities[idx[*k]].category == pcat)
                .collect();
            if same.len() == 1 {
                merges.push((p.clone(), same[0].clone()));
            } else if kids.len() == 1 && !grammar.allowed_child(pcat, self.entities[idx[&kids[0]]].category) {
                merges.push((p.clone(), kids[0].clone()));
            }
        }
        let mut removed: HashSet<String> = HashSet::new();
        let mut changed = false;
        for (p, c) in merges {
            if removed.contains(&p) || removed.contains(&c) {
                continue;
            }
            let idx = self.index();
            let child_box = self.entities[idx[&c]].bbox;
            let parent = &mut self.entities[idx[&p]];
            parent.bbox = parent.bbox.union(&child_box);
            self.dissolve_into_parent(&p, &c);
            removed.insert(c);
            changed = true;
        }
        changed
    }

    /// Step (3).
    fn wrap_excess(&mut self, grammar: &Grammar) -> bool {
        let idx = self.index();
        let mut wraps: Vec<(String, String)> = Vec::new();
        for p in self.parents() {
            let pcat = self.entities[idx[p]].category;
            if !grammar.allowed_child(pcat, pcat) {
                continue;
            }
            let mut counts: BTreeMap<Category, Vec<&String>> = BTreeMap::new();
            for k in self.children_of(p) {
                counts.entry(self.entities[idx[k]].category).or_default().push(k);
            }
            for (cat, members) in counts {
                match grammar.max_count(pcat, cat) {
                    Some(max) if members.len() > max && grammar.allowed_child(pcat, cat) => {
                        wraps.extend(members.into_iter().map(|m| (p.clone(), m.clone())));
                    }
                    _ => {}
                }
            }
        }
        let changed = !wraps.is_empty();
        for (p, child) in wraps {
            let idx = self.index();
            let pcat = self.entities[idx[&p]].category;
            let inner = &self.entities[idx[&child]];
            let wrapper = Entity {
                id: self.unique_id(&child),
                category: pcat,
                bbox: inner.bbox,
                confidence: inner.confidence,
                cell_range: None,
            };
            let wid = wrapper.id.clone();
            self.entities.push(wrapper);
            if let Some(list) = self.kids.get_mut(&Some(p)) {
                if let Some(pos) = list.iter().position(|c| *c == child) {
                    list[pos] = wid.clone();
                }
            }
            self.kids.insert(Some(wid), vec![child]);
        }
        changed
    }

    /// Step (4).
    fn adopt_orphans(&mut self, grammar: &Grammar) -> bool {
        let mut changed = false;
        let mut i = 0;
        loop {
            let roots = self.kids.get(&None).cloned().unwrap_or_default();
            if i >= roots.len() {
                break;
            }
            let idx = self.index();
            let orphan = &self.entities[idx[&roots[i]]];
            if !CHILD_ONLY.contains(&orphan.category) {
                i += 1;
                continue;
            }
            let neighbours = [i.checked_sub(1), Some(i + 1)];
            let candidates: Vec<&String> = neighbours
                .into_iter()
                .flatten()
                .filter_map(|j| roots.get(j))
                .filter(|c| {
                    let cand = &self.entities[idx[*c]];
                    grammar.allowed_child(cand.category, orphan.category)
                        && cand.bbox.intersection(&orphan.bbox).is_some()
                })
                .collect();
            if candidates.len() != 1 {
                i += 1;
                continue;
            }
            let parent_id = candidates[0].clone();
            let orphan = orphan.clone();
            let parent = &mut self.entities[idx[&parent_id]];
            parent.bbox = parent.bbox.union(&orphan.bbox);
            self.kids
                .get_mut(&None)
                .expect("roots present")
                .remove(i);
            let key = reading_key(&orphan.bbox);
            let entities = &self.entities;
            let list = self.kids.entry(Some(parent_id)).or_default();
            let pos = list
                .iter()
                .position(|k| {
                    let e = &entities[idx[k]];
                    reading_key(&e.bbox) > key || (reading_key(&e.bbox) == key && e.id > orphan.id)
                })
                .unwrap_or(list.len());
            list.insert(pos, orphan.id.clone());
            changed = true;
        }
        changed
    }
}

fn reading_key(b: &BBox) -> (OrderedF64, OrderedF64) {
    (OrderedF64(b.y0()), OrderedF64(b.x0()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrderedF64(f64);

impl PartialOrd for OrderedF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.0.total_cmp(&other.0))
    }
}

/// Grows every parent box over its direct children.
pub fn expand_parents(s: &DocStructure) -> (DocStructure, bool) {
    let mut t = Tree::from_structure(s);
    let changed = t.expand_parents();
    (t.into_structure(), changed)
}

/// Folds a parent's only same-category child (or its only, grammar-illegal
/// child) into the parent.
pub fn merge_same_category_singletons(s: &DocStructure, grammar: &Grammar) -> (DocStructure, bool) {
    let mut t = Tree::from_structure(s);
    let changed = t.merge_singletons(grammar);
    (t.into_structure(), changed)
}

/// Wraps every child of a category that exceeds its grammar count in a new
/// entity of the parent's category.
pub fn wrap_conflicting_siblings(s: &DocStructure, grammar: &Grammar) -> (DocStructure, bool) {
    let mut t = Tree::from_structure(s);
    let changed = t.wrap_excess(grammar);
    (t.into_structure(), changed)
}

/// Attaches parentless child-only entities to their single overlapping,
/// grammar-compatible reading-order neighbour.
pub fn adopt_orphans(s: &DocStructure, grammar: &Grammar) -> (DocStructure, bool) {
    let mut t = Tree::from_structure(s);
    let changed = t.adopt_orphans(grammar);
    (t.into_structure(), changed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub structure: DocStructure,
    pub iterations: usize,
    pub converged: bool,
    pub warnings: Vec<String>,
}

pub fn refine(
    entities: &[Entity],
    grammar: &Grammar,
    relation_config: &RelationConfig,
    page: Page,
    config: &RefinementConfig,
) -> Refined {
    let mut entities = entities.to_vec();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iterations.max(1) {
        iterations += 1;
        let classified = classify_relations(&entities, grammar, relation_config, page).structure;
        let mut tree = Tree::from_structure(&classified);
        let changed = tree.expand_parents()
            || tree.merge_singletons(grammar)
            || tree.wrap_excess(grammar)
            || tree.adopt_orphans(grammar);
        if !changed {
            converged = true;
            break;
        }
        entities = tree.entities;
    }
    let final_pass = classify_relations(&entities, grammar, relation_config, page);
    let mut warnings = final_pass.warnings;
    if !converged {
        warnings.push(format!(
            "refinement stopped after {} iterations without reaching a fixpoint",
            config.max_iterations
        ));
    }
    Refined {
        structure: final_pass.structure,
        iterations,
        converged,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_structure;

    fn ent(id: &str, cat: Category, x0: f64, y0: f64, x1: f64, y1: f64) -> Entity {
        Entity::new(id, cat, BBox::new(x0, y0, x1, y1).unwrap())
    }

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn structure(entities: Vec<Entity>, relations: Vec<Relation>) -> DocStructure {
        let mut s = DocStructure {
            page: Page::new(1000.0, 1000.0),
            entities,
            relations,
        };
        s.canonicalize();
        s
    }

    #[test]
    fn config_rejects_zero() {
        assert_eq!(RefinementConfig::new(0), Err(InvalidIterations));
        assert_eq!(RefinementConfig::default().max_iterations, 30);
    }

    #[test]
    fn expand_examples() {
        let inside = structure(
            vec![
                ent("p", Category::ContentBlock, 0.0, 0.0, 100.0, 100.0),
                ent("c", Category::ContentLine, 10.0, 10.0, 90.0, 20.0),
            ],
            vec![Relation::parent_of("p", "c")],
        );
        let (out, changed) = expand_parents(&inside);
        assert!(!changed);
        assert_eq!(out, inside);

        let protruding = structure(
            vec![
                ent("p", Category::ContentBlock, 0.0, 0.0, 100.0, 100.0),
                ent("c", Category::ContentLine, 10.0, 10.0, 110.0, 20.0),
            ],
            vec![Relation::parent_of("p", "c")],
        );
        let (out, changed) = expand_parents(&protruding);
        assert!(changed);
        assert_eq!(out.entity("p").unwrap().bbox, bb(0.0, 0.0, 110.0, 100.0));

        let chain = structure(
            vec![
                ent("g", Category::Figure, 0.0, 0.0, 100.0, 100.0),
                ent("p", Category::Figure, 10.0, 10.0, 90.0, 90.0),
                ent("c", Category::FigureGraphic, 20.0, 20.0, 120.0, 80.0),
            ],
            vec![Relation::parent_of("g", "p"), Relation::parent_of("p", "c")],
        );
        let (out, _) = expand_parents(&chain);
        assert_eq!(out.entity("p").unwrap().bbox, bb(10.0, 10.0, 120.0, 90.0));
        assert_eq!(out.entity("g").unwrap().bbox, bb(0.0, 0.0, 120.0, 100.0));
    }

    #[test]
    fn merge_examples() {
        let g = Grammar::default();
        let headings = structure(
            vec![
                ent("h1", Category::Heading, 0.0, 0.0, 100.0, 20.0),
                ent("h2", Category::Heading, 5.0, 5.0, 120.0, 15.0),
            ],
            vec![Relation::parent_of("h1", "h2")],
        );
        let (out, changed) = merge_same_category_singletons(&headings, &g);
        assert!(changed);
        assert_eq!(out.entities.len(), 1);
        assert_eq!(out.entities[0].bbox, bb(0.0, 0.0, 120.0, 20.0));
        assert!(out.relations.is_empty());

        let figure = structure(
            vec![
                ent("f", Category::Figure, 0.0, 0.0, 100.0, 100.0),
                ent("g", Category::FigureGraphic, 10.0, 10.0, 90.0, 90.0),
            ],
            vec![Relation::parent_of("f", "g")],
        );
        assert!(!merge_same_category_singletons(&figure, &g).1);

        let two = structure(
            vec![
                ent("f", Category::Figure, 0.0, 0.0, 100.0, 100.0),
                ent("a", Category::Figure, 10.0, 10.0, 40.0, 90.0),
                ent("b", Category::Figure, 50.0, 10.0, 90.0, 90.0),
            ],
            vec![
                Relation::parent_of("f", "a"),
                Relation::parent_of("f", "b"),
                Relation::followed_by("a", "b"),
            ],
        );
        assert!(!merge_same_category_singletons(&two, &g).1);
    }

    #[test]
    fn merge_dismisses_illegal_single_child() {
        let g = Grammar::default();
        let s = structure(
            vec![
                ent("f", Category::Figure, 0.0, 0.0, 100.0, 100.0),
                ent("t", Category::Tabular, 10.0, 10.0, 90.0, 90.0),
            ],
            vec![Relation::parent_of("f", "t")],
        );
        let (out, changed) = merge_same_category_singletons(&s, &g);
        assert!(changed);
        assert_eq!(out.entities.len(), 1);
        assert_eq!(out.entities[0].id, "f");
    }

    #[test]
    fn merge_splices_grandchildren() {
        let g = Grammar::default();
        let s = structure(
            vec![
                ent("f", Category::Figure, 0.0, 0.0, 100.0, 100.0),
                ent("inner", Category::Figure, 5.0, 5.0, 95.0, 95.0),
                ent("g", Category::FigureGraphic, 10.0, 10.0, 90.0, 50.0),
                ent("c", Category::FigureCaption, 10.0, 60.0, 90.0, 90.0),
            ],
            vec![
                Relation::parent_of("f", "inner"),
                Relation::parent_of("inner", "g"),
                Relation::parent_of("inner", "c"),
                Relation::followed_by("g", "c"),
            ],
        );
        let (out, changed) = merge_same_category_singletons(&s, &g);
        assert!(changed);
        assert!(validate_structure(&out).is_empty());
        assert_eq!(crate::model::children(&out, "f").unwrap(), vec!["g", "c"]);
    }

    fn two_graphic_figure(with_caption: bool) -> DocStructure {
        let mut es = vec![
            ent("f", Category::Figure, 0.0, 0.0, 200.0, 120.0),
            ent("g1", Category::FigureGraphic, 10.0, 10.0, 90.0, 80.0),
            ent("g2", Category::FigureGraphic, 110.0, 10.0, 190.0, 80.0),
        ];
        let mut rels = vec![
            Relation::parent_of("f", "g1"),
            Relation::parent_of("f", "g2"),
            Relation::followed_by("g1", "g2"),
        ];
        if with_caption {
            es.push(ent("cap", Category::FigureCaption, 10.0, 90.0, 190.0, 110.0));
            rels.push(Relation::parent_of("f", "cap"));
            rels.push(Relation::followed_by("g2", "cap"));
        }
        structure(es, rels)
    }

    #[test]
    fn wrap_examples() {
        let g = Grammar::default();
        let (out, changed) = wrap_conflicting_siblings(&two_graphic_figure(false), &g);
        assert!(changed);
        assert!(validate_structure(&out).is_empty());
        assert!(crate::grammar::check_conformance(&out, &g).is_empty());
        let kids = crate::model::children(&out, "f").unwrap();
        assert_eq!(kids, vec!["g1~wrap", "g2~wrap"]);
        for (k, inner) in kids.iter().zip(["g1", "g2"]) {
            let w = out.entity(k).unwrap();
            assert_eq!(w.category, Category::Figure);
            assert_eq!(w.bbox, out.entity(inner).unwrap().bbox);
            assert_eq!(crate::model::children(&out, k).unwrap(), vec![inner]);
        }

        let single = structure(
            vec![
                ent("f", Category::Figure, 0.0, 0.0, 100.0, 100.0),
                ent("g", Category::FigureGraphic, 10.0, 10.0, 90.0, 90.0),
            ],
            vec![Relation::parent_of("f", "g")],
        );
        assert!(!wrap_conflicting_siblings(&single, &g).1);

        let (out, _) = wrap_conflicting_siblings(&two_graphic_figure(true), &g);
        assert_eq!(
            crate::model::children(&out, "f").unwrap(),
            vec!["g1~wrap", "g2~wrap", "cap"]
        );
    }

    #[test]
    fn wrapped_figures_inherit_confidence() {
        let g = Grammar::default();
        let mut s = two_graphic_figure(false);
        for e in &mut s.entities {
            e.confidence = Some(if e.id == "g1" { 0.75 } else { 0.9 });
        }
        let (out, _) = wrap_conflicting_siblings(&s, &g);
        assert_eq!(out.entity("g1~wrap").unwrap().confidence, Some(0.75));
    }

    #[test]
    fn adopt_examples() {
        let g = Grammar::default();
        let s = structure(
            vec![
                ent("fig", Category::Figure, 0.0, 0.0, 200.0, 100.0),
                ent("cap", Category::FigureCaption, 10.0, 95.0, 190.0, 130.0),
            ],
            vec![Relation::followed_by("fig", "cap")],
        );
        let (out, changed) = adopt_orphans(&s, &g);
        assert!(changed);
        assert_eq!(out.entity("fig").unwrap().bbox, bb(0.0, 0.0, 200.0, 130.0));
        assert_eq!(out.parent_pairs().len(), 1);
        assert!(validate_structure(&out).is_empty());

        let lonely = structure(
            vec![
                ent("fig", Category::Figure, 0.0, 0.0, 200.0, 100.0),
                ent("cap", Category::FigureCaption, 10.0, 300.0, 190.0, 330.0),
            ],
            vec![Relation::followed_by("fig", "cap")],
        );
        assert!(!adopt_orphans(&lonely, &g).1);

        let ambiguous = structure(
            vec![
                ent("f1", Category::Figure, 0.0, 0.0, 200.0, 100.0),
                ent("cap", Category::FigureCaption, 10.0, 95.0, 190.0, 130.0),
                ent("f2", Category::Figure, 0.0, 125.0, 200.0, 300.0),
            ],
            vec![
                Relation::followed_by("f1", "cap"),
                Relation::followed_by("cap", "f2"),
            ],
        );
        assert!(!adopt_orphans(&ambiguous, &g).1);
    }

    fn figure_entities() -> Vec<Entity> {
        vec![
            ent("fig", Category::Figure, 100.0, 100.0, 500.0, 500.0),
            ent("gr", Category::FigureGraphic, 110.0, 110.0, 490.0, 400.0),
            ent("cap", Category::FigureCaption, 110.0, 420.0, 490.0, 490.0),
            ent("blk", Category::ContentBlock, 100.0, 550.0, 900.0, 700.0),
        ]
    }

    #[test]
    fn refine_consistent_input_is_one_pass() {
        let g = Grammar::default();
        let rc = RelationConfig::default();
        let page = Page::new(1000.0, 1000.0);
        let out = refine(&figure_entities(), &g, &rc, page, &RefinementConfig::default());
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
        let plain = classify_relations(&figure_entities(), &g, &rc, page).structure;
        assert_eq!(out.structure, plain);
    }

    #[test]
    fn refine_repairs_and_is_idempotent() {
        let g = Grammar::default();
        let rc = RelationConfig::default();
        let page = Page::new(1000.0, 1000.0);
        let mut es = figure_entities();
        // graphic sticks out of the figure; second graphic; orphan caption overlap
        es[1].bbox = bb(110.0, 90.0, 300.0, 400.0);
        es.push(ent("gr2", Category::FigureGraphic, 310.0, 110.0, 490.0, 400.0));
        let once = refine(&es, &g, &rc, page, &RefinementConfig::default());
        assert!(once.converged);
        assert!(validate_structure(&once.structure).is_empty());
        assert!(crate::grammar::check_conformance(&once.structure, &g).is_empty());
        assert_eq!(once.structure.entity("fig").unwrap().bbox.y0(), 90.0);
        let twice = refine(&once.structure.entities, &g, &rc, page, &RefinementConfig::default());
        assert_eq!(twice.structure, once.structure);
        for r in [10, 20] {
            let other = refine(&es, &g, &rc, page, &RefinementConfig::new(r).unwrap());
            assert_eq!(other.structure, once.structure);
        }
    }

    #[test]
    fn budget_exhaustion_warns() {
        let g = Grammar::default();
        let rc = RelationConfig::default();
        let page = Page::new(1000.0, 1000.0);
        let mut es = figure_entities();
        es[1].bbox = bb(110.0, 90.0, 490.0, 400.0);
        let out = refine(&es, &g, &rc, page, &RefinementConfig::new(1).unwrap());
        assert!(!out.converged);
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn child_entity_count_bounded() {
        let g = Grammar::default();
        let rc = RelationConfig::default();
        let page = Page::new(1000.0, 1000.0);
        let es = vec![
            ent("f", Category::Figure, 0.0, 0.0, 400.0, 200.0),
            ent("g1", Category::FigureGraphic, 10.0, 10.0, 120.0, 150.0),
            ent("g2", Category::FigureGraphic, 140.0, 10.0, 250.0, 150.0),
            ent("g3", Category::FigureGraphic, 270.0, 10.0, 390.0, 150.0),
        ];
        let out = refine(&es, &g, &rc, page, &RefinementConfig::default());
        assert_eq!(out.structure.entities.len(), es.len() + 3);
        let map: HashMap<_, _> = out
            .structure
            .parent_pairs()
            .into_iter()
            .map(|(p, c)| (c, p))
            .collect();
        for gid in ["g1", "g2", "g3"] {
            assert_eq!(map[gid], format!("{gid}~wrap"));
            assert_eq!(map[&format!("{gid}~wrap")], "f");
        }
    }
}
