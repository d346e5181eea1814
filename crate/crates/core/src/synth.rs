//! Seeded synthetic pages and detector noise.
//!
//! A page is laid out in one or two columns of content blocks and floats.
//! Full-width floats on two-column pages cut the page into horizontal
//! segments. The generator returns the ground-truth structure and the
//! render-record stream a typesetter would have produced for it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{union_bbox, BBox};
use crate::model::{Category, DocStructure, Entity, Page, Relation};
use crate::weaklabels::RenderRecord;

pub const PAGE_WIDTH: f64 = 1000.0;
pub const MIN_PAGE_HEIGHT: f64 = 1400.0;
pub const MARGIN: f64 = 60.0;
const COLUMN_GAP: f64 = 40.0;
const ITEM_SPACING: f64 = 20.0;
const LINE_HEIGHT: f64 = 14.0;
const LINE_GAP: f64 = 4.0;
const ROW_HEIGHT: f64 = 24.0;
const FLOAT_INSET: f64 = 20.0;
const FLOAT_PADDING: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FloatSpec {
    Figure {
        #[serde(default = "one")]
        graphics: usize,
        #[serde(default)]
        full_width: bool,
    },
    Table {
        rows: usize,
        cols: usize,
        #[serde(default)]
        full_width: bool,
    },
}

fn one() -> usize {
    1
}

impl FloatSpec {
    fn full_width(&self) -> bool {
        match self {
            FloatSpec::Figure { full_width, .. } | FloatSpec::Table { full_width, .. } => *full_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageSpec {
    pub seed: u64,
    pub columns: u8,
    pub blocks_per_column: usize,
    #[serde(default)]
    pub floats: Vec<FloatSpec>,
    #[serde(default)]
    pub include_meta: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("columns must be 1 or 2, got {0}")]
    Columns(u8),
    #[error("a figure needs at least one graphic")]
    NoGraphics,
    #[error("a table needs at least one row and one column")]
    EmptyTable,
    #[error("{0} must lie in [0, 1]")]
    Rate(&'static str),
    #[error("{0} must be finite and non-negative")]
    Magnitude(&'static str),
}

impl PageSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(1..=2).contains(&self.columns) {
            return Err(SynthError::Columns(self.columns));
        }
        for f in &self.floats {
            match f {
                FloatSpec::Figure { graphics: 0, .. } => return Err(SynthError::NoGraphics),
                FloatSpec::Table { rows, cols, .. } if *rows == 0 || *cols == 0 => {
                    return Err(SynthError::EmptyTable)
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// A varied layout drawn from `seed`, used for fixture corpora.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
        let columns = rng.gen_range(1..=2u8);
        let n_floats = rng.gen_range(0..=3);
        let floats = (0..n_floats)
            .map(|_| {
                let full_width = columns == 2 && rng.gen_bool(0.4);
                if rng.gen_bool(0.5) {
                    FloatSpec::Figure {
                        graphics: rng.gen_range(1..=3),
                        full_width,
                    }
                } else {
                    FloatSpec::Table {
                        rows: rng.gen_range(1..=5),
                        cols: rng.gen_range(1..=6),
                        full_width,
                    }
                }
            })
            .collect();
        Self {
            seed,
            columns,
            blocks_per_column: rng.gen_range(1..=4),
            floats,
            include_meta: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub seed: u64,
    /// Maximum shift of each box edge, in pixels.
    pub jitter: f64,
    pub drop_rate: f64,
    pub relabel_rate: f64,
    pub confidence_base: f64,
    pub confidence_jitter: f64,
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self {
            seed: 0,
            jitter: 0.0,
            drop_rate: 0.0,
            relabel_rate: 0.0,
            confidence_base: 1.0,
            confidence_jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, v) in [
            ("drop_rate", self.drop_rate),
            ("relabel_rate", self.relabel_rate),
            ("confidence_base", self.confidence_base),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(SynthError::Rate(name));
            }
        }
        for (name, v) in [("jitter", self.jitter), ("confidence_jitter", self.confidence_jitter)] {
            if !v.is_finite() || v < 0.0 {
                return Err(SynthError::Magnitude(name));
            }
        }
        Ok(())
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            jitter: 3.0,
            drop_rate: 0.05,
            relabel_rate: 0.05,
            confidence_base: 0.85,
            confidence_jitter: 0.15,
        }
    }
}

/// Tree node used while laying out the page.
#[derive(Debug, Clone)]
struct Node {
    category: Category,
    bbox: BBox,
    children: Vec<Node>,
    records: Vec<RenderRecord>,
}

impl Node {
    fn new(category: Category, bbox: BBox, children: Vec<Node>) -> Self {
        Self {
            category,
            bbox,
            children,
            records: Vec::new(),
        }
    }

    fn height(&self) -> f64 {
        self.bbox.height()
    }
}

fn bbox(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
    BBox::new(x0, y0, x1, y1).expect("layout produces ordered boxes")
}

fn union_of(children: &[Node], pad: f64) -> BBox {
    let u = union_bbox(children.iter().map(|c| &c.bbox)).expect("non-empty");
    bbox(u.x0() - pad, u.y0() - pad, u.x1() + pad, u.y1() + pad)
}

/// Stacked lines from `y`: all full width but the last, which is left
/// aligned at 40–90% of the width.
fn lines(rng: &mut ChaCha8Rng, n: usize, x0: f64, x1: f64, y: f64) -> Vec<Node> {
    (0..n)
        .map(|i| {
            let top = y + i as f64 * (LINE_HEIGHT + LINE_GAP);
            let right = if i + 1 == n && n > 1 {
                x0 + (x1 - x0) * rng.gen_range(0.4..0.9)
            } else {
                x1
            };
            Node::new(Category::ContentLine, bbox(x0, top, right, top + LINE_HEIGHT), Vec::new())
        })
        .collect()
}

fn text_records(nodes: &[Node]) -> Vec<RenderRecord> {
    nodes.iter().map(|n| RenderRecord::text(n.bbox)).collect()
}

fn content_block(rng: &mut ChaCha8Rng, x0: f64, x1: f64, y: f64) -> Node {
    let n = rng.gen_range(2..=5);
    let ls = lines(rng, n, x0, x1, y);
    let mut block = Node::new(Category::ContentBlock, union_of(&ls, 0.0), Vec::new());
    block.records = text_records(&ls);
    block.children = ls;
    block
}

fn caption(rng: &mut ChaCha8Rng, category: Category, x0: f64, x1: f64, y: f64) -> (Node, Vec<RenderRecord>) {
    let n = rng.gen_range(1..=2);
    let ls = lines(rng, n, x0, x1, y);
    let mut records = vec![RenderRecord::command("caption", None)];
    records.extend(text_records(&ls));
    (Node::new(category, union_of(&ls, 0.0), ls), records)
}

fn figure(rng: &mut ChaCha8Rng, graphics: usize, full: bool, x0: f64, x1: f64, y: f64) -> Node {
    let (ix0, ix1) = (x0 + FLOAT_INSET, x1 - FLOAT_INSET);
    let top = y + FLOAT_PADDING;
    let height = rng.gen_range(120.0..250.0f64).round();
    let gap = 10.0;
    let w = (ix1 - ix0 - gap * (graphics as f64 - 1.0)) / graphics as f64;
    let env = if full { "figure*" } else { "figure" };
    let mut records = vec![RenderRecord::begin(env)];
    let mut children = Vec::new();
    for g in 0..graphics {
        let gx = ix0 + g as f64 * (w + gap);
        let b = bbox(gx, top, gx + w, top + height);
        let graphic = Node::new(Category::FigureGraphic, b, Vec::new());
        if graphics > 1 {
            records.push(RenderRecord::begin("subfigure"));
            records.push(RenderRecord::command("includegraphics", Some(b)));
            records.push(RenderRecord::end("subfigure"));
            children.push(Node::new(Category::Figure, b, vec![graphic]));
        } else {
            records.push(RenderRecord::command("includegraphics", Some(b)));
            children.push(graphic);
        }
    }
    let (cap, cap_records) = caption(rng, Category::FigureCaption, ix0, ix1, top + height + 8.0);
    records.extend(cap_records);
    records.push(RenderRecord::end(env));
    children.push(cap);
    let mut node = Node::new(Category::Figure, union_of(&children, FLOAT_PADDING), children);
    node.records = records;
    node
}

fn table(rng: &mut ChaCha8Rng, rows: usize, cols: usize, full: bool, x0: f64, x1: f64, y: f64) -> Node {
    let (ix0, ix1) = (x0 + FLOAT_INSET, x1 - FLOAT_INSET);
    let top = y + FLOAT_PADDING;
    let env = if full { "table*" } else { "table" };
    let mut records = vec![RenderRecord::begin(env)];
    let (cap, cap_records) = caption(rng, Category::TableCaption, ix0, ix1, top);
    records.extend(cap_records);
    let t0 = cap.bbox.y1() + 6.0;
    let cw = (ix1 - ix0) / cols as f64;
    let cell_box = |i: usize, j: usize| {
        let cx = ix0 + j as f64 * cw;
        let cy = t0 + i as f64 * ROW_HEIGHT;
        bbox(cx, cy, cx + cw, cy + ROW_HEIGHT)
    };
    records.push(RenderRecord::begin("tabular"));
    let mut row_nodes = Vec::new();
    let mut col_nodes = Vec::new();
    let mut cell_nodes = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            let b = cell_box(i, j);
            records.push(RenderRecord::text(b));
            cell_nodes.push(Node::new(Category::TableCell, b, Vec::new()));
        }
    }
    for i in 0..rows {
        row_nodes.push(Node::new(Category::TableRow, cell_box(i, 0).union(&cell_box(i, cols - 1)), Vec::new()));
    }
    for j in 0..cols {
        col_nodes.push(Node::new(Category::TableColumn, cell_box(0, j).union(&cell_box(rows - 1, j)), Vec::new()));
    }
    records.push(RenderRecord::end("tabular"));
    records.push(RenderRecord::end(env));
    let mut tab_children = row_nodes;
    tab_children.extend(col_nodes);
    tab_children.extend(cell_nodes);
    let tabular = Node::new(Category::Tabular, union_of(&tab_children, 0.0), tab_children);
    let children = vec![cap, tabular];
    let mut node = Node::new(Category::Table, union_of(&children, FLOAT_PADDING), children);
    node.records = records;
    node
}

#[derive(Debug, Clone, Copy)]
enum Item {
    Block,
    Float(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPage {
    pub ground_truth: DocStructure,
    pub records: Vec<RenderRecord>,
}

struct Flattener {
    entities: Vec<Entity>,
    relations: Vec<Relation>,
}

impl Flattener {
    fn next_id(&self) -> String {
        format!("e{:04}", self.entities.len())
    }

    /// Assigns ids in preorder; returns the ids of `nodes` in the same order.
    fn add(&mut self, nodes: &[Node], parent: Option<&str>, in_float: bool) -> Vec<String> {
        let mut ids = Vec::new();
        for n in nodes {
            let id = self.next_id();
            self.entities.push(Entity::new(&id, n.category, n.bbox));
            if let Some(p) = parent {
                self.relations.push(Relation::parent_of(p, &id));
            }
            let inner = in_float || matches!(n.category, Category::Figure | Category::Table);
            self.add(&n.children, Some(&id), inner);
            ids.push((id, n.bbox));
        }
        let mut order: Vec<(String, BBox)> = ids;
        if in_float {
            order.sort_by(|a, b| {
                a.1.y0()
                    .total_cmp(&b.1.y0())
                    .then(a.1.x0().total_cmp(&b.1.x0()))
                    .then(a.0.cmp(&b.0))
            });
        }
        for w in order.windows(2) {
            self.relations.push(Relation::followed_by(&w[0].0, &w[1].0));
        }
        order.into_iter().map(|(id, _)| id).collect()
    }
}

/// Lays out a page. Identical inputs give identical pages.
pub fn generate_page(spec: &PageSpec) -> Result<SynthPage, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ncols = spec.columns as usize;
    let columns: Vec<(f64, f64)> = if ncols == 1 {
        vec![(MARGIN, PAGE_WIDTH - MARGIN)]
    } else {
        let mid = PAGE_WIDTH / 2.0;
        vec![(MARGIN, mid - COLUMN_GAP / 2.0), (mid + COLUMN_GAP / 2.0, PAGE_WIDTH - MARGIN)]
    };
    let mut column_items: Vec<Vec<Item>> = vec![vec![Item::Block; spec.blocks_per_column]; ncols];
    let mut wide: Vec<usize> = Vec::new();
    let mut placed = 0usize;
    for (i, f) in spec.floats.iter().enumerate() {
        if f.full_width() && ncols == 2 {
            wide.push(i);
        } else {
            let list = &mut column_items[placed % ncols];
            let at = rng.gen_range(0..=list.len());
            list.insert(at, Item::Float(i));
            placed += 1;
        }
    }

    let mut roots: Vec<Node> = Vec::new();
    let mut y = MARGIN;
    let segments = wide.len() + 1;
    for k in 0..segments {
        let mut bottom = y;
        for (c, items) in column_items.iter().enumerate() {
            let (lo, hi) = (k * items.len() / segments, (k + 1) * items.len() / segments);
            let (x0, x1) = columns[c];
            let mut yc = y;
            for item in &items[lo..hi] {
                let node = match *item {
                    Item::Block => content_block(&mut rng, x0, x1, yc),
                    Item::Float(i) => float_node(&mut rng, &spec.floats[i], false, x0, x1, yc),
                };
                yc += node.height() + ITEM_SPACING;
                roots.push(node);
            }
            bottom = bottom.max(yc);
        }
        y = bottom;
        if let Some(&i) = wide.get(k) {
            let node = float_node(&mut rng, &spec.floats[i], true, MARGIN, PAGE_WIDTH - MARGIN, y);
            y += node.height() + ITEM_SPACING;
            roots.push(node);
        }
    }
    let height = MIN_PAGE_HEIGHT.max((y - ITEM_SPACING + MARGIN).ceil());
    let page = Page::new(PAGE_WIDTH, height);

    let mut flat = Flattener {
        entities: Vec::new(),
        relations: Vec::new(),
    };
    if spec.include_meta {
        flat.entities.push(Entity::new(flat.next_id(), Category::Header, bbox(400.0, 20.0, 600.0, 40.0)));
    }
    flat.add(&roots, None, false);
    if spec.include_meta {
        let b = bbox(490.0, height - 40.0, 510.0, height - 22.0);
        flat.entities.push(Entity::new(flat.next_id(), Category::PageNumber, b));
    }
    let mut ground_truth = DocStructure {
        page,
        entities: flat.entities,
        relations: flat.relations,
    };
    ground_truth.canonicalize();
    let mut records: Vec<RenderRecord> = roots.iter().flat_map(|n| n.records.clone()).collect();
    for r in &mut records {
        r.page = 1;
    }
    Ok(SynthPage { ground_truth, records })
}

fn float_node(rng: &mut ChaCha8Rng, f: &FloatSpec, full: bool, x0: f64, x1: f64, y: f64) -> Node {
    match *f {
        FloatSpec::Figure { graphics, .. } => figure(rng, graphics, full, x0, x1, y),
        FloatSpec::Table { rows, cols, .. } => table(rng, rows, cols, full, x0, x1, y),
    }
}

/// Simulated detector output: boxes jittered, some entities dropped or
/// relabelled, confidences drawn around a base value. Seed-deterministic.
pub fn perturb(ground_truth: &DocStructure, noise: &NoiseSpec) -> Result<Vec<Entity>, SynthError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut out = Vec::new();
    for e in &ground_truth.entities {
        if noise.drop_rate > 0.0 && rng.gen_bool(noise.drop_rate) {
            continue;
        }
        let mut p = Entity::new(e.id.clone(), e.category, e.bbox);
        if noise.relabel_rate > 0.0 && rng.gen_bool(noise.relabel_rate) {
            let others: Vec<Category> = Category::DETECTOR.iter().copied().filter(|c| *c != e.category).collect();
            p.category = *others.choose(&mut rng).expect("several categories");
        }
        if noise.jitter > 0.0 {
            let j = noise.jitter;
            let mut d = || rng.gen_range(-j..=j);
            let (x0, y0, x1, y1) = (e.bbox.x0() + d(), e.bbox.y0() + d(), e.bbox.x1() + d(), e.bbox.y1() + d());
            p.bbox = BBox::from_corners(x0, y0, x1, y1).expect("finite");
        }
        let conf = if noise.confidence_jitter > 0.0 {
            noise.confidence_base + rng.gen_range(-noise.confidence_jitter..=noise.confidence_jitter)
        } else {
            noise.confidence_base
        };
        p.confidence = Some(conf.clamp(0.0, 1.0));
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::iou;
    use crate::grammar::{check_conformance, Grammar};
    use crate::model::{children, roots, validate_structure};

    fn spec(columns: u8, blocks: usize, floats: Vec<FloatSpec>) -> PageSpec {
        PageSpec {
            seed: 7,
            columns,
            blocks_per_column: blocks,
            floats,
            include_meta: false,
        }
    }

    #[test]
    fn empty_page() {
        let p = generate_page(&spec(1, 0, vec![])).unwrap();
        assert!(p.ground_truth.entities.is_empty());
        assert!(p.records.is_empty());
        assert_eq!(p.ground_truth.page, Page::new(1000.0, 1400.0));
    }

    #[test]
    fn two_columns_left_first() {
        let p = generate_page(&spec(2, 3, vec![])).unwrap();
        let s = &p.ground_truth;
        let r = roots(s);
        assert_eq!(r.len(), 6);
        let xs: Vec<f64> = r.iter().map(|id| s.entity(id).unwrap().bbox.x0()).collect();
        assert_eq!(xs, vec![60.0, 60.0, 60.0, 520.0, 520.0, 520.0]);
        assert!(r.iter().all(|id| s.entity(id).unwrap().category == Category::ContentBlock));
    }

    #[test]
    fn table_float_counts() {
        let p = generate_page(&spec(1, 0, vec![FloatSpec::Table { rows: 3, cols: 4, full_width: false }])).unwrap();
        let s = &p.ground_truth;
        let count = |c: Category| s.entities.iter().filter(|e| e.category == c).count();
        assert_eq!(count(Category::Tabular), 1);
        assert_eq!(count(Category::TableRow), 3);
        assert_eq!(count(Category::TableColumn), 4);
        assert_eq!(count(Category::TableCell), 12);
        let tab = s.entities.iter().find(|e| e.category == Category::Tabular).unwrap();
        assert_eq!(children(s, &tab.id).unwrap().len(), 19);
    }

    #[test]
    fn generated_pages_are_valid_and_deterministic() {
        let g = Grammar::default();
        for seed in 0..60 {
            let spec = PageSpec::random(seed);
            let a = generate_page(&spec).unwrap();
            assert_eq!(a, generate_page(&spec).unwrap());
            let s = &a.ground_truth;
            assert!(validate_structure(s).is_empty(), "seed {seed}: {:?}", validate_structure(s));
            assert!(check_conformance(s, &g).is_empty(), "seed {seed}");
            for e in &s.entities {
                assert!(s.page.bbox().contains(&e.bbox), "seed {seed}: {} off page", e.id);
            }
        }
    }

    #[test]
    fn multi_graphic_figures_get_subfigures() {
        let p = generate_page(&spec(1, 1, vec![FloatSpec::Figure { graphics: 3, full_width: false }])).unwrap();
        let s = &p.ground_truth;
        let figs: Vec<&Entity> = s.entities.iter().filter(|e| e.category == Category::Figure).collect();
        assert_eq!(figs.len(), 4);
        assert!(check_conformance(s, &Grammar::default()).is_empty());
    }

    #[test]
    fn bad_specs_rejected() {
        assert_eq!(generate_page(&spec(3, 1, vec![])), Err(SynthError::Columns(3)));
        assert_eq!(
            generate_page(&spec(1, 1, vec![FloatSpec::Figure { graphics: 0, full_width: false }])),
            Err(SynthError::NoGraphics)
        );
        let mut n = NoiseSpec::zero();
        n.drop_rate = 1.5;
        assert!(perturb(&DocStructure::new(Page::new(1.0, 1.0)), &n).is_err());
    }

    #[test]
    fn zero_noise_keeps_everything() {
        let p = generate_page(&PageSpec::random(3)).unwrap();
        let out = perturb(&p.ground_truth, &NoiseSpec::zero()).unwrap();
        assert_eq!(out.len(), p.ground_truth.entities.len());
        for (a, b) in out.iter().zip(&p.ground_truth.entities) {
            assert_eq!((a.id.as_str(), a.category, a.bbox), (b.id.as_str(), b.category, b.bbox));
            assert_eq!(a.confidence, Some(1.0));
        }
    }

    #[test]
    fn full_drop_empties() {
        let p = generate_page(&PageSpec::random(4)).unwrap();
        let noise = NoiseSpec {
            drop_rate: 1.0,
            ..NoiseSpec::zero()
        };
        assert!(perturb(&p.ground_truth, &noise).unwrap().is_empty());
    }

    #[test]
    fn jitter_bounds_iou() {
        let mut s = DocStructure::new(Page::new(1000.0, 1000.0));
        s.entities = (0..50)
            .map(|i| Entity::new(format!("b{i}"), Category::Figure, bbox(100.0, 10.0 * i as f64, 200.0, 10.0 * i as f64 + 100.0)))
            .collect();
        let noise = NoiseSpec {
            seed: 11,
            jitter: 3.0,
            ..NoiseSpec::zero()
        };
        let bound = (94.0f64 / 106.0).powi(2);
        for (p, g) in perturb(&s, &noise).unwrap().iter().zip(&s.entities) {
            assert!(iou(&p.bbox, &g.bbox).unwrap() >= bound - 1e-12);
        }
    }
}
