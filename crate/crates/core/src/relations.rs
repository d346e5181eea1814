//! Relation classification: turns a flat entity list into a page structure.
//!
//! Nesting is derived in four passes over candidate `(subject, object)`
//! pairs: box overlap, grammar filtering, reduction to direct children, and
//! unique-parent selection. Ordering groups siblings by page side and then
//! sorts them top-to-bottom, left-to-right.
//!
//! Candidate pairs are indices into the entity slice they were computed from.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, BBox};
use crate::grammar::Grammar;
use crate::model::{DocStructure, Entity, Page, Relation};

pub const DEFAULT_THETA1: f64 = 0.45;
pub const DEFAULT_THETA2: f64 = 1.2;
pub const DEFAULT_TAU_OVLP: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("theta1 must lie in (0, 1], got {0}")]
    Theta1(f64),
    #[error("theta2 must exceed 1, got {0}")]
    Theta2(f64),
    #[error("tau_ovlp must lie in [0, 1], got {0}")]
    TauOvlp(f64),
}

/// Overlap fraction and size ratio for the partial-overlap nesting rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NestingThresholds {
    pub theta1: f64,
    pub theta2: f64,
}

impl Default for NestingThresholds {
    fn default() -> Self {
        Self {
            theta1: DEFAULT_THETA1,
            theta2: DEFAULT_THETA2,
        }
    }
}

impl NestingThresholds {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.theta1 > 0.0 && self.theta1 <= 1.0) {
            return Err(ConfigError::Theta1(self.theta1));
        }
        if self.theta2.is_nan() || self.theta2 <= 1.0 {
            return Err(ConfigError::Theta2(self.theta2));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelationConfig {
    pub nesting: NestingThresholds,
    pub tau_ovlp: f64,
}

impl Default for RelationConfig {
    fn default() -> Self {
        Self {
            nesting: NestingThresholds::default(),
            tau_ovlp: DEFAULT_TAU_OVLP,
        }
    }
}

impl RelationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.nesting.validate()?;
        if !(0.0..=1.0).contains(&self.tau_ovlp) {
            return Err(ConfigError::TauOvlp(self.tau_ovlp));
        }
        Ok(())
    }
}

/// `(subject, object)` indices into an entity slice.
pub type Candidate = (usize, usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NestingCandidates {
    pub pairs: Vec<Candidate>,
    pub warnings: Vec<String>,
}

/// All pairs where the object lies inside the subject, or is covered by at
/// least `theta1` of its area by a subject more than `theta2` times larger.
pub fn nesting_candidates(entities: &[Entity], t: &NestingThresholds) -> NestingCandidates {
    let mut out = NestingCandidates::default();
    for (o, obj) in entities.iter().enumerate() {
        let obj_area = obj.bbox.area();
        if obj_area <= 0.0 {
            out.warnings.push(format!(
                "skipping nesting for zero-area entity `{}`",
                obj.id
            ));
            continue;
        }
        for (s, subj) in entities.iter().enumerate() {
            if s == o {
                continue;
            }
            let hit = geometry::contains(&subj.bbox, &obj.bbox) || {
                let frac = geometry::overlap_fraction(&subj.bbox, &obj.bbox).unwrap_or(0.0);
                frac >= t.theta1 && subj.bbox.area() / obj_area > t.theta2
            };
            if hit {
                out.pairs.push((s, o));
            }
        }
    }
    out.pairs.sort_unstable();
    out
}

/// Drops pairs the grammar does not allow.
pub fn grammar_filter(entities: &[Entity], candidates: &[Candidate], grammar: &Grammar) -> Vec<Candidate> {
    candidates
        .iter()
        .copied()
        .filter(|&(s, o)| grammar.allowed_child(entities[s].category, entities[o].category))
        .collect()
}

/// Resolves mutual pairs (near-identical boxes): the larger box stays the
/// subject, equal areas fall to the smaller id.
pub fn break_mutual_pairs(entities: &[Entity], candidates: &[Candidate]) -> Vec<Candidate> {
    let set: HashSet<Candidate> = candidates.iter().copied().collect();
    candidates
        .iter()
        .copied()
        .filter(|&(s, o)| {
            if !set.contains(&(o, s)) {
                return true;
            }
            let (sa, oa) = (entities[s].bbox.area(), entities[o].bbox.area());
            match sa.total_cmp(&oa) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => entities[s].id < entities[o].id,
            }
        })
        .collect()
}

/// Transitive reduction: removes `(a, c)` whenever `c` is reachable from `a`
/// through another candidate child of `a`.
pub fn prune_to_direct_children(n: usize, candidates: &[Candidate]) -> Vec<Candidate> {
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(s, o) in candidates {
        if !succ[s].contains(&o) {
            succ[s].push(o);
        }
    }
    let reach = reachability(&succ);
    candidates
        .iter()
        .copied()
        .filter(|&(a, c)| !succ[a].iter().any(|&b| b != c && reach[b].get(c)))
        .collect()
}

#[derive(Clone)]
struct BitSet(Vec<u64>);

impl BitSet {
    fn new(n: usize) -> Self {
        Self(vec![0; n.div_ceil(64)])
    }
    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }
    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }
    fn union_with(&mut self, other: &BitSet) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a |= b;
        }
    }
}

/// Nodes reachable via one or more edges, per node.
fn reachability(succ: &[Vec<usize>]) -> Vec<BitSet> {
    let n = succ.len();
    let mut indeg = vec![0usize; n];
    for targets in succ {
        for &t in targets {
            indeg[t] += 1;
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut stack: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    while let Some(v) = stack.pop() {
        order.push(v);
        for &t in &succ[v] {
            indeg[t] -= 1;
            if indeg[t] == 0 {
                stack.push(t);
            }
        }
    }
    let mut reach = vec![BitSet::new(n); n];
    if order.len() == n {
        for &v in order.iter().rev() {
            let mut acc = BitSet::new(n);
            for &t in &succ[v] {
                acc.set(t);
                acc.union_with(&reach[t]);
            }
            reach[v] = acc;
        }
    } else {
        // cyclic input: plain search from every node
        for (v, slot) in reach.iter_mut().enumerate() {
            let mut stack = succ[v].clone();
            while let Some(u) = stack.pop() {
                if !slot.get(u) {
                    slot.set(u);
                    stack.extend(&succ[u]);
                }
            }
        }
    }
    reach
}

fn cmp_confidence(a: Option<f64>, b: Option<f64>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Greater,
        (None, Some(_)) => Ordering::Less,
        (None, None) => Ordering::Equal,
    }
}

/// Keeps one parent per object: highest IoU with the object, then higher
/// confidence, then larger area, then smaller id.
pub fn resolve_unique_parents(entities: &[Entity], candidates: &[Candidate]) -> Vec<Candidate> {
    let mut by_object: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(s, o) in candidates {
        by_object.entry(o).or_default().push(s);
    }
    let mut out: Vec<Candidate> = by_object
        .into_iter()
        .map(|(o, parents)| {
            let obj = &entities[o].bbox;
            let best = parents
                .into_iter()
                .max_by(|&a, &b| {
                    let (ea, eb) = (&entities[a], &entities[b]);
                    let ia = geometry::iou(&ea.bbox, obj).unwrap_or(0.0);
                    let ib = geometry::iou(&eb.bbox, obj).unwrap_or(0.0);
                    ia.total_cmp(&ib)
                        .then_with(|| cmp_confidence(ea.confidence, eb.confidence))
                        .then_with(|| ea.bbox.area().total_cmp(&eb.bbox.area()))
                        .then_with(|| eb.id.cmp(&ea.id))
                })
                .expect("non-empty parent list");
            (best, o)
        })
        .collect();
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Center,
    Right,
}

/// Side of the page a box belongs to: left or right when more than `tau` of
/// its width lies in that half, center otherwise.
pub fn layout_side(b: &BBox, page_width: f64, tau: f64) -> Side {
    let half = page_width / 2.0;
    let width = b.width();
    if width <= 0.0 {
        return match b.x0().total_cmp(&half) {
            Ordering::Less => Side::Left,
            Ordering::Greater => Side::Right,
            Ordering::Equal => Side::Center,
        };
    }
    let left = (b.x1().min(half) - b.x0().max(0.0)).max(0.0) / width;
    let right = (b.x1().min(page_width) - b.x0().max(half)).max(0.0) / width;
    if left > tau {
        Side::Left
    } else if right > tau {
        Side::Right
    } else {
        Side::Center
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayoutGroups {
    pub left: Vec<String>,
    pub center: Vec<String>,
    pub right: Vec<String>,
    pub tau_ovlp: f64,
}

pub fn assign_layout_groups(entities: &[Entity], page_width: f64, tau_ovlp: f64) -> LayoutGroups {
    let mut groups = LayoutGroups {
        tau_ovlp,
        ..Default::default()
    };
    for e in entities {
        let slot = match layout_side(&e.bbox, page_width, tau_ovlp) {
            Side::Left => &mut groups.left,
            Side::Center => &mut groups.center,
            Side::Right => &mut groups.right,
        };
        slot.push(e.id.clone());
    }
    groups
}

fn cmp_reading(a: &Entity, b: &Entity) -> Ordering {
    a.bbox
        .y0()
        .total_cmp(&b.bbox.y0())
        .then(a.bbox.x0().total_cmp(&b.bbox.x0()))
        .then_with(|| a.id.cmp(&b.id))
}

/// Top-to-bottom, then left-to-right by top-left corner; ties by id.
pub fn reading_order(entities: &[Entity]) -> Vec<String> {
    let mut refs: Vec<&Entity> = entities.iter().collect();
    refs.sort_by(|a, b| cmp_reading(a, b));
    refs.into_iter().map(|e| e.id.clone()).collect()
}

fn sort_reading(entities: &[Entity], idx: &mut [usize]) {
    idx.sort_by(|&a, &b| cmp_reading(&entities[a], &entities[b]));
}

/// Column-aware order of one sibling group.
///
/// Without center entities the left side is read before the right side.
/// Otherwise the center entities cut the page into horizontal bands: each
/// side entity falls in the gap before the first center entity whose
/// vertical midpoint is not above its own, and every gap is read left side
/// first, then right side, followed by the center entity closing it.
pub fn layout_order(entities: &[Entity], members: &[usize], page_width: f64, tau: f64) -> Vec<usize> {
    let mut left = Vec::new();
    let mut center = Vec::new();
    let mut right = Vec::new();
    for &i in members {
        match layout_side(&entities[i].bbox, page_width, tau) {
            Side::Left => left.push(i),
            Side::Center => center.push(i),
            Side::Right => right.push(i),
        }
    }
    sort_reading(entities, &mut left);
    sort_reading(entities, &mut right);
    if center.is_empty() {
        left.extend(right);
        return left;
    }
    sort_reading(entities, &mut center);
    let mid = |i: usize| {
        let b = &entities[i].bbox;
        (b.y0() + b.y1()) / 2.0
    };
    let mids: Vec<f64> = center.iter().map(|&c| mid(c)).collect();
    let gap = |i: usize| {
        let m = mid(i);
        mids.iter().take_while(|&&cm| cm < m).count()
    };
    let mut bands: Vec<Vec<usize>> = vec![Vec::new(); center.len() + 1];
    for &i in left.iter().chain(&right) {
        bands[gap(i)].push(i);
    }
    let mut out = Vec::with_capacity(members.len());
    for (g, band) in bands.into_iter().enumerate() {
        // left entries precede right ones since both were pushed in that order
        out.extend(band);
        if let Some(&c) = center.get(g) {
            out.push(c);
        }
    }
    out
}

/// followed_by chains for every sibling group of a nesting.
///
/// `parent_of` pairs index into `entities`. Meta entities are skipped.
/// Children of floats (and anything nested below a float) are ordered by
/// reading order alone; all other groups use [`layout_order`].
pub fn order_entities(
    entities: &[Entity],
    parent_of: &[Candidate],
    grammar: &Grammar,
    page_width: f64,
    tau_ovlp: f64,
) -> Vec<Relation> {
    let n = entities.len();
    let mut parent: Vec<Option<usize>> = vec![None; n];
    for &(p, c) in parent_of {
        parent[c] = Some(p);
    }
    let in_float = |mut p: Option<usize>| {
        let mut steps = 0;
        while let Some(i) = p {
            if grammar.is_float(entities[i].category) {
                return true;
            }
            p = parent[i];
            steps += 1;
            if steps > n {
                break;
            }
        }
        false
    };
    let mut groups: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, e) in entities.iter().enumerate() {
        if !grammar.is_meta(e.category) {
            groups.entry(parent[i]).or_default().push(i);
        }
    }
    let mut out = Vec::new();
    for (p, members) in groups {
        let ordered = if in_float(p) {
            let mut m = members;
            sort_reading(entities, &mut m);
            m
        } else {
            layout_order(entities, &members, page_width, tau_ovlp)
        };
        out.extend(
            ordered
                .windows(2)
                .map(|w| Relation::followed_by(&entities[w[0]].id, &entities[w[1]].id)),
        );
    }
    out
}

/// Parent indices after the four nesting passes, with warnings.
pub fn nest(entities: &[Entity], grammar: &Grammar, thresholds: &NestingThresholds) -> (Vec<Candidate>, Vec<String>) {
    let active: Vec<usize> = (0..entities.len())
        .filter(|&i| !grammar.is_meta(entities[i].category))
        .collect();
    let subset: Vec<Entity> = active.iter().map(|&i| entities[i].clone()).collect();
    let NestingCandidates { pairs, warnings } = nesting_candidates(&subset, thresholds);
    let legal = grammar_filter(&subset, &pairs, grammar);
    let acyclic = break_mutual_pairs(&subset, &legal);
    let direct = prune_to_direct_children(subset.len(), &acyclic);
    let unique = resolve_unique_parents(&subset, &direct);
    let mut pairs: Vec<Candidate> = unique
        .into_iter()
        .map(|(s, o)| (active[s], active[o]))
        .collect();
    pairs.sort_unstable();
    (pairs, warnings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub structure: DocStructure,
    pub warnings: Vec<String>,
}

/// Nesting then ordering over `entities`, which must carry unique ids.
pub fn classify_relations(
    entities: &[Entity],
    grammar: &Grammar,
    config: &RelationConfig,
    page: Page,
) -> Classification {
    let (parents, warnings) = nest(entities, grammar, &config.nesting);
    let mut relations: Vec<Relation> = parents
        .iter()
        .map(|&(p, c)| Relation::parent_of(&entities[p].id, &entities[c].id))
        .collect();
    relations.extend(order_entities(
        entities,
        &parents,
        grammar,
        page.width,
        config.tau_ovlp,
    ));
    let mut structure = DocStructure {
        page,
        entities: entities.to_vec(),
        relations,
    };
    structure.canonicalize();
    Classification {
        structure,
        warnings,
    }
}
