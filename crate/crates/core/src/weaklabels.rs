//! Weak labels from reverse-render records.
//!
//! A record stream (one JSON object per line) describes the boxes that the
//! renderer produced for text tokens, commands and environment boundaries.
//! The stream is mapped into a forest of [`WeakNode`]s, enriched with
//! equations, content blocks and table structure, cleaned, and finally
//! flattened into a [`DocStructure`] marked as noisy.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{union_bbox, BBox};
use crate::model::{Category, DocStructure, Entity, Page, Relation};
use crate::relations::{layout_order, layout_side, Side, DEFAULT_TAU_OVLP};
use crate::tablestruct::{rows_cols_from_cells, DEFAULT_CENTROID_GAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    TextToken,
    EnvironmentBegin,
    EnvironmentEnd,
    Command,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderRecord {
    /// Optional on environment markers, required otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    #[serde(default)]
    pub page: u32,
    pub token_kind: TokenKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command_name: Option<String>,
    /// Environments open when the record was emitted, outermost first.
    /// Checked against the reconstructed stack when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nesting_stack: Option<Vec<String>>,
}

impl RenderRecord {
    fn bare(token_kind: TokenKind) -> Self {
        Self {
            bbox: None,
            page: 0,
            token_kind,
            env_name: None,
            command_name: None,
            nesting_stack: None,
        }
    }

    pub fn text(bbox: BBox) -> Self {
        Self {
            bbox: Some(bbox),
            ..Self::bare(TokenKind::TextToken)
        }
    }

    pub fn begin(env: &str) -> Self {
        Self {
            env_name: Some(env.to_string()),
            ..Self::bare(TokenKind::EnvironmentBegin)
        }
    }

    pub fn end(env: &str) -> Self {
        Self {
            env_name: Some(env.to_string()),
            ..Self::bare(TokenKind::EnvironmentEnd)
        }
    }

    pub fn command(name: &str, bbox: Option<BBox>) -> Self {
        Self {
            bbox,
            command_name: Some(name.to_string()),
            ..Self::bare(TokenKind::Command)
        }
    }
}

#[derive(Debug, Error)]
pub enum WeakLabelError {
    #[error("record line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("record {index}: missing bounding box")]
    MissingBBox { index: usize },
    #[error("record {index}: missing environment or command name")]
    MissingName { index: usize },
    #[error("record {index}: `end{{{found}}}` does not close the open environment {expected:?}")]
    Unbalanced {
        index: usize,
        expected: Option<String>,
        found: String,
    },
    #[error("environment `{0}` is never closed")]
    Unclosed(String),
    #[error("record {index}: nesting stack {given:?} differs from reconstructed {rebuilt:?}")]
    StackMismatch {
        index: usize,
        given: Vec<String>,
        rebuilt: Vec<String>,
    },
    #[error("records span several pages ({0:?}); select one")]
    MixedPages(Vec<u32>),
}

/// Parses a line-delimited record stream. Blank lines are skipped.
pub fn read_records(text: &str) -> Result<Vec<RenderRecord>, WeakLabelError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| WeakLabelError::Json { line: i + 1, source }))
        .collect()
}

pub fn write_records(records: &[RenderRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeakLabelConfig {
    /// Share of the tabular width from which a child counts as a full row.
    pub row_width_ratio: f64,
    /// Lines narrower than this share of the column's median width may be formulas.
    pub equation_width_ratio: f64,
    /// Minimum indent, as a share of the column width, for a formula line.
    pub equation_indent_ratio: f64,
    /// Offset from the column's left edge, as a share of its width, beyond
    /// which a narrow box is an equation label.
    pub label_offset_ratio: f64,
    /// Vertical gap, in units of the smaller line height, that splits blocks.
    pub block_gap_factor: f64,
    /// Float descendants at or below this width or height are dropped.
    pub min_float_child_size: f64,
    pub centroid_gap: f64,
    pub tau_ovlp: f64,
}

impl Default for WeakLabelConfig {
    fn default() -> Self {
        Self {
            row_width_ratio: 0.95,
            equation_width_ratio: 0.7,
            equation_indent_ratio: 0.05,
            label_offset_ratio: 0.85,
            block_gap_factor: 1.0,
            min_float_child_size: 2.0,
            centroid_gap: DEFAULT_CENTROID_GAP,
            tau_ovlp: DEFAULT_TAU_OVLP,
        }
    }
}

/// A node of the weak-label forest. Its box is the union of its own leaf
/// boxes and those of its descendants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakNode {
    pub category: Category,
    pub leaves: Vec<BBox>,
    pub children: Vec<WeakNode>,
}

impl WeakNode {
    pub fn leaf(category: Category, bbox: BBox) -> Self {
        Self {
            category,
            leaves: vec![bbox],
            children: Vec::new(),
        }
    }

    pub fn branch(category: Category, children: Vec<WeakNode>) -> Self {
        Self {
            category,
            leaves: Vec::new(),
            children,
        }
    }

    pub fn bbox(&self) -> Option<BBox> {
        let own = union_bbox(&self.leaves).ok();
        self.children
            .iter()
            .filter_map(WeakNode::bbox)
            .chain(own)
            .reduce(|a, b| a.union(&b))
    }

    pub fn has_leaf(&self) -> bool {
        !self.leaves.is_empty() || self.children.iter().any(WeakNode::has_leaf)
    }

    pub fn count(&self) -> usize {
        1 + self.children.iter().map(WeakNode::count).sum::<usize>()
    }

    fn is_line(&self) -> bool {
        self.category == Category::ContentLine && self.children.is_empty() && !self.leaves.is_empty()
    }
}

pub fn forest_size(forest: &[WeakNode]) -> usize {
    forest.iter().map(WeakNode::count).sum()
}

fn environment_category(name: &str) -> Option<Category> {
    Some(match name {
        "figure" | "figure*" | "subfigure" => Category::Figure,
        "table" | "table*" => Category::Table,
        "tabular" | "tabular*" | "tabularx" => Category::Tabular,
        "itemize" | "enumerate" | "description" => Category::Itemize,
        "abstract" => Category::Abstract,
        "thebibliography" | "bibliography" => Category::Bibliography,
        _ => return None,
    })
}

fn section_level(name: &str) -> Option<u8> {
    match name.trim_end_matches('*') {
        "section" => Some(1),
        "subsection" => Some(2),
        "subsubsection" => Some(3),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ScopeKind {
    Env(String),
    Item,
    Caption,
    Section(u8),
}

#[derive(Debug)]
struct Scope {
    kind: ScopeKind,
    /// `None` for environments without a category: their content goes to
    /// the nearest enclosing node.
    node: Option<WeakNode>,
}

struct Mapper {
    stack: Vec<Scope>,
    roots: Vec<WeakNode>,
    last_heading: Option<String>,
}

impl Mapper {
    fn add(&mut self, node: WeakNode) {
        match self.stack.iter_mut().rev().find_map(|s| s.node.as_mut()) {
            Some(parent) => parent.children.push(node),
            None => self.roots.push(node),
        }
    }

    fn pop(&mut self) -> Option<ScopeKind> {
        let scope = self.stack.pop()?;
        if let Some(node) = scope.node {
            self.add(node);
        }
        Some(scope.kind)
    }

    fn env_stack(&self) -> Vec<String> {
        self.stack
            .iter()
            .filter_map(|s| match &s.kind {
                ScopeKind::Env(n) => Some(n.clone()),
                _ => None,
            })
            .collect()
    }

    fn close_while(&mut self, pred: impl Fn(&ScopeKind) -> bool) {
        while self.stack.last().is_some_and(|s| pred(&s.kind)) {
            self.pop();
        }
    }

    fn close_caption(&mut self) {
        self.close_while(|k| *k == ScopeKind::Caption);
    }

    fn enclosing_float(&self) -> Option<Category> {
        self.stack.iter().rev().find_map(|s| {
            s.node
                .as_ref()
                .map(|n| n.category)
                .filter(|c| matches!(c, Category::Figure | Category::Table))
        })
    }

    fn push(&mut self, kind: ScopeKind, node: Option<WeakNode>) {
        self.stack.push(Scope { kind, node });
    }
}

/// Builds the raw node forest from a record stream: text tokens and unknown
/// commands become content lines, known environments and commands open
/// scopes whose content nests inside them.
pub fn map_records(records: &[RenderRecord]) -> Result<Vec<WeakNode>, WeakLabelError> {
    let mut m = Mapper {
        stack: Vec::new(),
        roots: Vec::new(),
        last_heading: None,
    };
    for (index, r) in records.iter().enumerate() {
        if let Some(given) = &r.nesting_stack {
            let rebuilt = m.env_stack();
            if *given != rebuilt {
                return Err(WeakLabelError::StackMismatch {
                    index,
                    given: given.clone(),
                    rebuilt,
                });
            }
        }
        let heading_run = m.last_heading.take();
        match r.token_kind {
            TokenKind::TextToken => {
                let bbox = r.bbox.ok_or(WeakLabelError::MissingBBox { index })?;
                m.add(WeakNode::leaf(Category::ContentLine, bbox));
            }
            TokenKind::EnvironmentBegin => {
                let name = r.env_name.clone().ok_or(WeakLabelError::MissingName { index })?;
                m.close_caption();
                let node = environment_category(&name).map(|c| WeakNode::branch(c, Vec::new()));
                m.push(ScopeKind::Env(name), node);
            }
            TokenKind::EnvironmentEnd => {
                let name = r.env_name.clone().ok_or(WeakLabelError::MissingName { index })?;
                m.close_while(|k| !matches!(k, ScopeKind::Env(_)));
                match m.stack.last().map(|s| &s.kind) {
                    Some(ScopeKind::Env(open)) if *open == name => {
                        m.pop();
                    }
                    other => {
                        let expected = match other {
                            Some(ScopeKind::Env(open)) => Some(open.clone()),
                            _ => None,
                        };
                        return Err(WeakLabelError::Unbalanced {
                            index,
                            expected,
                            found: name,
                        });
                    }
                }
            }
            TokenKind::Command => {
                let name = r.command_name.clone().ok_or(WeakLabelError::MissingName { index })?;
                map_command(&mut m, &name, r.bbox, heading_run, index)?;
            }
        }
    }
    m.close_while(|k| !matches!(k, ScopeKind::Env(_)));
    if let Some(Scope {
        kind: ScopeKind::Env(name),
        ..
    }) = m.stack.last()
    {
        return Err(WeakLabelError::Unclosed(name.clone()));
    }
    Ok(m.roots)
}

fn map_command(
    m: &mut Mapper,
    name: &str,
    bbox: Option<BBox>,
    heading_run: Option<String>,
    index: usize,
) -> Result<(), WeakLabelError> {
    if let Some(level) = section_level(name) {
        m.close_caption();
        if heading_run.as_deref() == Some(name) {
            // continuation of a title that wrapped over several boxes
            if let (Some(b), Some(heading)) = (
                bbox,
                m.stack
                    .last_mut()
                    .and_then(|s| s.node.as_mut())
                    .and_then(|n| n.children.last_mut()),
            ) {
                heading.leaves.push(b);
            }
            m.last_heading = Some(name.to_string());
            return Ok(());
        }
        m.close_while(|k| match k {
            ScopeKind::Section(l) => *l >= level,
            ScopeKind::Item | ScopeKind::Caption => true,
            ScopeKind::Env(_) => false,
        });
        let mut section = WeakNode::branch(Category::Section, Vec::new());
        section.children.push(WeakNode {
            category: Category::Heading,
            leaves: bbox.into_iter().collect(),
            children: Vec::new(),
        });
        m.push(ScopeKind::Section(level), Some(section));
        m.last_heading = Some(name.to_string());
        return Ok(());
    }
    match name {
        "includegraphics" => {
            m.close_caption();
            let b = bbox.ok_or(WeakLabelError::MissingBBox { index })?;
            m.add(WeakNode::leaf(Category::FigureGraphic, b));
        }
        "item" | "bibitem" => {
            m.close_caption();
            m.close_while(|k| *k == ScopeKind::Item);
            let category = if name == "item" {
                Category::Item
            } else {
                Category::BibliographyBlock
            };
            let node = WeakNode {
                category,
                leaves: bbox.into_iter().collect(),
                children: Vec::new(),
            };
            m.push(ScopeKind::Item, Some(node));
        }
        "caption" => {
            m.close_caption();
            let node = m.enclosing_float().map(|f| WeakNode {
                category: if f == Category::Figure {
                    Category::FigureCaption
                } else {
                    Category::TableCaption
                },
                leaves: bbox.into_iter().collect(),
                children: Vec::new(),
            });
            match node {
                Some(n) => m.push(ScopeKind::Caption, Some(n)),
                None => {
                    if let Some(b) = bbox {
                        m.add(WeakNode::leaf(Category::ContentLine, b));
                    }
                }
            }
        }
        _ => {
            if let Some(b) = bbox {
                m.add(WeakNode::leaf(Category::ContentLine, b));
            }
        }
    }
    Ok(())
}

fn is_float(c: Category) -> bool {
    matches!(c, Category::Figure | Category::Table)
}

fn sort_key_entities(nodes: &[WeakNode]) -> (Vec<Entity>, Vec<usize>, Vec<usize>) {
    let mut entities = Vec::new();
    let mut with_box = Vec::new();
    let mut without = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        match n.bbox() {
            Some(b) => {
                with_box.push(entities.len());
                entities.push(Entity::new(format!("{i:08}"), n.category, b));
            }
            None => without.push(i),
        }
    }
    (entities, with_box, without)
}

/// Sorts one sibling list: reading order inside floats, column-aware layout
/// order elsewhere. Nodes without a box keep their relative order at the end.
fn sort_siblings(nodes: &mut Vec<WeakNode>, in_float: bool, page: Page, tau: f64) {
    let (entities, members, without) = sort_key_entities(nodes);
    let order: Vec<usize> = if in_float {
        let mut m = members.clone();
        m.sort_by(|&a, &b| {
            let (ea, eb) = (&entities[a], &entities[b]);
            ea.bbox
                .y0()
                .total_cmp(&eb.bbox.y0())
                .then(ea.bbox.x0().total_cmp(&eb.bbox.x0()))
                .then(ea.id.cmp(&eb.id))
        });
        m
    } else {
        layout_order(&entities, &members, page.width, tau)
    };
    let original: Vec<usize> = order
        .into_iter()
        .map(|k| entities[k].id.parse::<usize>().expect("numeric key"))
        .chain(without)
        .collect();
    let mut taken: Vec<Option<WeakNode>> = std::mem::take(nodes).into_iter().map(Some).collect();
    *nodes = original
        .into_iter()
        .map(|i| taken[i].take().expect("each index once"))
        .collect();
}

fn sort_forest(nodes: &mut Vec<WeakNode>, in_float: bool, page: Page, tau: f64) {
    sort_siblings(nodes, in_float, page, tau);
    for n in nodes.iter_mut() {
        let inner = in_float || is_float(n.category);
        sort_forest(&mut n.children, inner, page, tau);
    }
}

#[derive(Debug, Clone, Copy)]
struct ColumnStats {
    median_width: f64,
    left: f64,
    width: f64,
    lines: usize,
}

impl ColumnStats {
    fn holds(&self, b: &BBox) -> bool {
        let tol = 0.05 * self.width;
        b.x0() >= self.left - tol && b.x1() <= self.left + self.width + tol
    }
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

fn side_slot(s: Side) -> usize {
    match s {
        Side::Left => 0,
        Side::Center => 1,
        Side::Right => 2,
    }
}

fn collect_lines(nodes: &[WeakNode], page: Page, tau: f64, out: &mut [Vec<BBox>; 3]) {
    for n in nodes {
        if is_float(n.category) || n.category == Category::Tabular {
            continue;
        }
        if n.is_line() {
            let b = n.bbox().expect("line has a leaf");
            out[side_slot(layout_side(&b, page.width, tau))].push(b);
        }
        collect_lines(&n.children, page, tau, out);
    }
}

fn column_stats(forest: &[WeakNode], page: Page, tau: f64) -> [Option<ColumnStats>; 3] {
    let mut lines: [Vec<BBox>; 3] = Default::default();
    collect_lines(forest, page, tau, &mut lines);
    lines.map(|ls| {
        let median_width = median(ls.iter().map(BBox::width).collect())?;
        let left = median(ls.iter().map(BBox::x0).collect())?;
        let right = median(ls.iter().map(BBox::x1).collect())?;
        Some(ColumnStats {
            median_width,
            left,
            width: (right - left).max(0.0),
            lines: ls.len(),
        })
    })
}

/// The most populated column whose typical extent holds the box, falling
/// back to the column of the page half the box lies in.
fn column_for(b: &BBox, stats: &[Option<ColumnStats>; 3], page: Page, tau: f64) -> Option<ColumnStats> {
    stats
        .iter()
        .flatten()
        .filter(|s| s.holds(b))
        .max_by_key(|s| s.lines)
        .copied()
        .or(stats[side_slot(layout_side(b, page.width, tau))])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EqRole {
    Formula,
    Label,
}

fn equation_role(n: &WeakNode, stats: &[Option<ColumnStats>; 3], page: Page, cfg: &WeakLabelConfig) -> Option<EqRole> {
    if !n.is_line() {
        return None;
    }
    let b = n.bbox()?;
    let s = column_for(&b, stats, page, cfg.tau_ovlp)?;
    if s.width <= 0.0 || b.width() >= cfg.equation_width_ratio * s.median_width {
        return None;
    }
    if b.x0() >= s.left + cfg.label_offset_ratio * s.width {
        Some(EqRole::Label)
    } else if b.x0() > s.left + cfg.equation_indent_ratio * s.width {
        Some(EqRole::Formula)
    } else {
        None
    }
}

fn wrap_equations(nodes: &mut Vec<WeakNode>, stats: &[Option<ColumnStats>; 3], page: Page, cfg: &WeakLabelConfig) {
    let roles: Vec<Option<EqRole>> = nodes.iter().map(|n| equation_role(n, stats, page, cfg)).collect();
    let old = std::mem::take(nodes);
    let mut run: Vec<(WeakNode, EqRole)> = Vec::new();
    let flush = |run: &mut Vec<(WeakNode, EqRole)>, out: &mut Vec<WeakNode>| {
        if run.iter().any(|(_, r)| *r == EqRole::Formula) {
            let children = run
                .drain(..)
                .map(|(mut n, r)| {
                    n.category = match r {
                        EqRole::Formula => Category::EquationFormula,
                        EqRole::Label => Category::EquationLabel,
                    };
                    n
                })
                .collect();
            out.push(WeakNode::branch(Category::Equation, children));
        } else {
            out.extend(run.drain(..).map(|(n, _)| n));
        }
    };
    for (n, role) in old.into_iter().zip(roles) {
        match role {
            Some(r) => run.push((n, r)),
            None => {
                flush(&mut run, nodes);
                nodes.push(n);
            }
        }
    }
    flush(&mut run, nodes);
    for n in nodes.iter_mut() {
        if !is_float(n.category) && n.category != Category::Tabular && n.category != Category::Equation {
            wrap_equations(&mut n.children, stats, page, cfg);
        }
    }
}

/// Wraps runs of narrow, indented lines into equations. Narrow boxes near
/// the column's right edge inside such a run become equation labels.
/// Floats are left alone.
pub fn detect_equations(forest: &mut Vec<WeakNode>, page: Page, cfg: &WeakLabelConfig) {
    let stats = column_stats(forest, page, cfg.tau_ovlp);
    wrap_equations(forest, &stats, page, cfg);
}

fn group_lines(nodes: &mut Vec<WeakNode>, block: Category, page: Page, cfg: &WeakLabelConfig) {
    let old = std::mem::take(nodes);
    let mut group: Vec<WeakNode> = Vec::new();
    let mut last: Option<(BBox, Side)> = None;
    let flush = |group: &mut Vec<WeakNode>, out: &mut Vec<WeakNode>| {
        if !group.is_empty() {
            out.push(WeakNode::branch(block, std::mem::take(group)));
        }
    };
    for n in old {
        if !n.is_line() {
            flush(&mut group, nodes);
            last = None;
            nodes.push(n);
            continue;
        }
        let b = n.bbox().expect("line has a leaf");
        let side = layout_side(&b, page.width, cfg.tau_ovlp);
        if let Some((prev, prev_side)) = last {
            let gap = b.y0() - prev.y1();
            let limit = cfg.block_gap_factor * prev.height().min(b.height());
            let tol = prev.height().max(b.height());
            let same_column = prev_side == side || (b.x0() >= prev.x0() - tol && b.x1() <= prev.x1() + tol);
            if !same_column || gap > limit || gap < -tol {
                flush(&mut group, nodes);
            }
        }
        last = Some((b, side));
        group.push(n);
    }
    flush(&mut group, nodes);
}

fn build_blocks_in(nodes: &mut Vec<WeakNode>, owner: Option<Category>, page: Page, cfg: &WeakLabelConfig) {
    match owner {
        None | Some(Category::Section) | Some(Category::Abstract) => {
            group_lines(nodes, Category::ContentBlock, page, cfg)
        }
        Some(Category::Bibliography) => group_lines(nodes, Category::BibliographyBlock, page, cfg),
        _ => {}
    }
    for n in nodes.iter_mut() {
        build_blocks_in(&mut n.children, Some(n.category), page, cfg);
    }
}

/// Sorts siblings into reading order and merges consecutive content lines
/// of one column into content blocks (bibliography blocks inside a
/// bibliography).
pub fn build_sections_and_blocks(forest: &mut Vec<WeakNode>, page: Page, cfg: &WeakLabelConfig) {
    sort_forest(forest, false, page, cfg.tau_ovlp);
    build_blocks_in(forest, None, page, cfg);
}

/// Labels the non-caption children of a tabular: full-width ones become
/// table rows, the others table cells.
pub fn classify_table_children(children: &mut [WeakNode], tabular: &BBox, row_width_ratio: f64) {
    for c in children.iter_mut() {
        if matches!(c.category, Category::TableCaption | Category::FigureCaption) {
            continue;
        }
        let Some(b) = c.bbox() else { continue };
        c.category = if b.width() >= row_width_ratio * tabular.width() {
            Category::TableRow
        } else {
            Category::TableCell
        };
    }
}

/// Row and column nodes grouped from cell centroids.
pub fn synthesize_rows_cols(cells: &[BBox], gap: f64) -> Vec<WeakNode> {
    let (rows, cols) = rows_cols_from_cells(cells, gap);
    rows.into_iter()
        .map(|b| WeakNode::leaf(Category::TableRow, b))
        .chain(cols.into_iter().map(|b| WeakNode::leaf(Category::TableColumn, b)))
        .collect()
}

fn build_tables(nodes: &mut [WeakNode], cfg: &WeakLabelConfig) {
    for n in nodes.iter_mut() {
        if n.category == Category::Tabular {
            if let Some(tab) = n.bbox() {
                classify_table_children(&mut n.children, &tab, cfg.row_width_ratio);
                let cells: Vec<BBox> = n
                    .children
                    .iter()
                    .filter(|c| c.category == Category::TableCell)
                    .filter_map(WeakNode::bbox)
                    .collect();
                n.children.extend(synthesize_rows_cols(&cells, cfg.centroid_gap));
            }
            continue;
        }
        build_tables(&mut n.children, cfg);
    }
}

const WHITELIST: [Category; 8] = [
    Category::Itemize,
    Category::Figure,
    Category::Table,
    Category::Equation,
    Category::Heading,
    Category::ContentBlock,
    Category::Bibliography,
    Category::Abstract,
];

fn is_caption(c: Category) -> bool {
    matches!(c, Category::FigureCaption | Category::TableCaption)
}

fn too_small(n: &WeakNode, min: f64) -> bool {
    n.bbox().is_some_and(|b| b.width() <= min || b.height() <= min)
}

fn clean_float_children(nodes: &mut Vec<WeakNode>, in_float: bool, min: f64) {
    if in_float {
        nodes.retain(|n| !too_small(n, min));
        let boxes: Vec<(Category, Option<BBox>)> = nodes.iter().map(|n| (n.category, n.bbox())).collect();
        let mut i = 0;
        nodes.retain(|n| {
            let me = i;
            i += 1;
            if !is_caption(n.category) {
                return true;
            }
            let Some(cap) = boxes[me].1 else { return true };
            !boxes.iter().enumerate().any(|(j, (c, b))| {
                j != me && !is_caption(*c) && b.is_some_and(|b| cap.contains(&b))
            })
        });
    }
    for n in nodes.iter_mut() {
        let inner = in_float || is_float(n.category);
        clean_float_children(&mut n.children, inner, min);
    }
}

fn single_leaf(nodes: &mut [WeakNode]) {
    for n in nodes.iter_mut() {
        if (!n.children.is_empty() && !n.leaves.is_empty()) || n.leaves.len() > 1 {
            let extra: Vec<WeakNode> = n
                .leaves
                .drain(..)
                .map(|b| WeakNode::leaf(Category::ContentLine, b))
                .collect();
            n.children.splice(0..0, extra);
        }
        single_leaf(&mut n.children);
    }
}

fn dedupe(nodes: &mut Vec<WeakNode>, seen: &mut HashSet<(Category, [u64; 4])>) {
    let old = std::mem::take(nodes);
    let mut queue: std::collections::VecDeque<WeakNode> = old.into();
    while let Some(mut n) = queue.pop_front() {
        let key = n.bbox().map(|b| {
            let a: [f64; 4] = b.into();
            (n.category, a.map(f64::to_bits))
        });
        if let Some(k) = key {
            if !seen.insert(k) {
                for (i, c) in n.children.into_iter().enumerate() {
                    queue.insert(i, c);
                }
                continue;
            }
        }
        dedupe(&mut n.children, seen);
        nodes.push(n);
    }
}

fn drop_leafless(nodes: &mut Vec<WeakNode>) {
    nodes.retain(WeakNode::has_leaf);
    for n in nodes.iter_mut() {
        drop_leafless(&mut n.children);
    }
}

fn keep_whitelisted_roots(nodes: &mut Vec<WeakNode>) {
    let mut queue: std::collections::VecDeque<WeakNode> = std::mem::take(nodes).into();
    while let Some(n) = queue.pop_front() {
        if WHITELIST.contains(&n.category) {
            nodes.push(n);
        } else {
            for (i, c) in n.children.into_iter().enumerate() {
                queue.insert(i, c);
            }
        }
    }
}

fn dismiss_bad_leaves(nodes: &mut [WeakNode], page: &BBox) {
    for n in nodes.iter_mut() {
        n.leaves.retain(|b| b.area() > 0.0 && page.contains(b));
        dismiss_bad_leaves(&mut n.children, page);
    }
}

fn clean_pass(forest: &mut Vec<WeakNode>, page: Page, cfg: &WeakLabelConfig) {
    clean_float_children(forest, false, cfg.min_float_child_size);
    single_leaf(forest);
    dismiss_bad_leaves(forest, &page.bbox());
    let mut seen = HashSet::new();
    dedupe(forest, &mut seen);
    drop_leafless(forest);
    keep_whitelisted_roots(forest);
    sort_forest(forest, false, page, cfg.tau_ovlp);
}

/// Cleaning rules: tiny float descendants and captions swallowing their
/// siblings are dropped, nodes keep at most one leaf, boxes off the page or
/// without area are dismissed, duplicates (category and box) and leafless
/// subtrees are removed, and only whitelisted categories remain as roots.
/// Repeats until nothing changes, so cleaning is idempotent.
pub fn clean_labels(forest: &[WeakNode], page: Page, cfg: &WeakLabelConfig) -> Vec<WeakNode> {
    let mut current = forest.to_vec();
    loop {
        let before = current.clone();
        clean_pass(&mut current, page, cfg);
        if current == before {
            return current;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakLabel {
    pub entity: Entity,
    pub noisy: bool,
}

/// Structure file written for weak labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyStructure {
    pub noisy: bool,
    #[serde(flatten)]
    pub structure: DocStructure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakLabels {
    pub labels: Vec<WeakLabel>,
    pub structure: DocStructure,
}

impl WeakLabels {
    pub fn to_file(&self) -> NoisyStructure {
        NoisyStructure {
            noisy: true,
            structure: self.structure.clone(),
        }
    }
}

fn flatten(nodes: &[WeakNode], parent: Option<&str>, entities: &mut Vec<Entity>, relations: &mut Vec<Relation>) {
    let mut prev: Option<String> = None;
    for n in nodes {
        let Some(bbox) = n.bbox() else { continue };
        let id = format!("w{}", entities.len());
        entities.push(Entity::new(&id, n.category, bbox));
        if let Some(p) = parent {
            relations.push(Relation::parent_of(p, &id));
        }
        if let Some(prev) = prev.replace(id.clone()) {
            relations.push(Relation::followed_by(prev, &id));
        }
        flatten(&n.children, Some(&id), entities, relations);
    }
}

/// Flattens a forest into a structure with ids `w0, w1, …` in preorder.
pub fn forest_to_structure(forest: &[WeakNode], page: Page) -> DocStructure {
    let mut entities = Vec::new();
    let mut relations = Vec::new();
    flatten(forest, None, &mut entities, &mut relations);
    let mut s = DocStructure {
        page,
        entities,
        relations,
    };
    s.canonicalize();
    s
}

/// The full weak-labelling pipeline for one page.
pub fn generate_weak_labels(
    records: &[RenderRecord],
    page: Page,
    cfg: &WeakLabelConfig,
) -> Result<WeakLabels, WeakLabelError> {
    let pages: Vec<u32> = records
        .iter()
        .map(|r| r.page)
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if pages.len() > 1 {
        return Err(WeakLabelError::MixedPages(pages));
    }
    let mut forest = map_records(records)?;
    sort_forest(&mut forest, false, page, cfg.tau_ovlp);
    detect_equations(&mut forest, page, cfg);
    build_sections_and_blocks(&mut forest, page, cfg);
    build_tables(&mut forest, cfg);
    let forest = clean_labels(&forest, page, cfg);
    let structure = forest_to_structure(&forest, page);
    let labels = structure
        .entities
        .iter()
        .map(|e| WeakLabel {
            entity: e.clone(),
            noisy: true,
        })
        .collect();
    Ok(WeakLabels { labels, structure })
}
