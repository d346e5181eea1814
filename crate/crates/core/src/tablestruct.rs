//! Table grid recovery from detected rows, columns and cells.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{overlap_fraction, union_bbox, BBox};
use crate::model::{Category, CellRange, Entity};

/// Maximum distance between consecutive centroid coordinates of one group.
pub const DEFAULT_CENTROID_GAP: f64 = 5.0;
/// Minimum share of a text box a cell must cover to claim it.
pub const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TableError {
    #[error("degenerate table: no {0} left after resolving detections")]
    Degenerate(&'static str),
    #[error("text box `{0}` has zero area")]
    ZeroAreaText(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableGrid {
    pub tabular: BBox,
    pub rows: Vec<BBox>,
    pub columns: Vec<BBox>,
    /// Table cells with `cell_range` set, sorted by (row, column).
    pub cells: Vec<Entity>,
}

impl TableGrid {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows.len(), self.columns.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    Vertical,
    Horizontal,
}

impl Axis {
    fn center(self, b: &BBox) -> f64 {
        let (cx, cy) = b.centroid();
        match self {
            Axis::Vertical => cy,
            Axis::Horizontal => cx,
        }
    }

    fn lo(self, b: &BBox) -> f64 {
        match self {
            Axis::Vertical => b.y0(),
            Axis::Horizontal => b.x0(),
        }
    }

    fn hi(self, b: &BBox) -> f64 {
        match self {
            Axis::Vertical => b.y1(),
            Axis::Horizontal => b.x1(),
        }
    }

    fn with_extent(self, b: &BBox, lo: f64, hi: f64) -> BBox {
        match self {
            Axis::Vertical => b.with_y(lo, hi),
            Axis::Horizontal => b.with_x(lo, hi),
        }
    }

    fn overlap(self, a: &BBox, b: &BBox) -> f64 {
        match self {
            Axis::Vertical => a.vertical_overlap(b),
            Axis::Horizontal => a.horizontal_overlap(b),
        }
    }
}

fn group_by_centroid(cells: &[BBox], axis: Axis, gap: f64) -> Vec<BBox> {
    let mut order: Vec<(f64, usize)> = cells.iter().map(|b| (axis.center(b), 0)).collect();
    for (i, o) in order.iter_mut().enumerate() {
        o.1 = i;
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out = Vec::new();
    let mut group: Vec<usize> = Vec::new();
    let mut last = f64::NEG_INFINITY;
    let mut flush = |group: &mut Vec<usize>| {
        if group.len() >= 2 {
            out.push(union_bbox(group.iter().map(|&i| &cells[i])).expect("non-empty group"));
        }
        group.clear();
    };
    for (c, i) in order {
        if c - last > gap {
            flush(&mut group);
        }
        group.push(i);
        last = c;
    }
    flush(&mut group);
    out
}

/// Builds row and column boxes from groups of cells with nearby centroids.
pub fn rows_cols_from_cells(cells: &[BBox], gap: f64) -> (Vec<BBox>, Vec<BBox>) {
    (
        group_by_centroid(cells, Axis::Vertical, gap),
        group_by_centroid(cells, Axis::Horizontal, gap),
    )
}

fn sort_along(boxes: &mut [BBox], axis: Axis) {
    boxes.sort_by(|a, b| {
        axis.center(a)
            .total_cmp(&axis.center(b))
            .then_with(|| {
                <[f64; 4]>::from(*a)
                    .iter()
                    .zip(<[f64; 4]>::from(*b).iter())
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
}

/// Resolves rows (or columns) nested inside one another: a box holding
/// exactly one other drops the inner box, a box holding several is dropped.
/// Repeats until no box contains another. Input order is kept.
pub fn resolve_nested(mut boxes: Vec<BBox>) -> Vec<BBox> {
    loop {
        let mut action = None;
        for i in 0..boxes.len() {
            let inner: Vec<usize> = (0..boxes.len())
                .filter(|&j| j != i && boxes[i].contains(&boxes[j]))
                .collect();
            match inner.len() {
                0 => continue,
                1 => action = Some(inner[0]),
                _ => action = Some(i),
            }
            break;
        }
        match action {
            Some(k) => {
                boxes.remove(k);
            }
            None => return boxes,
        }
    }
}

/// Stretches rows to the full table width and columns to the full height.
pub fn normalize_extents(rows: &[BBox], columns: &[BBox]) -> Option<(Vec<BBox>, Vec<BBox>, BBox)> {
    let tabular = union_bbox(rows.iter().chain(columns)).ok()?;
    let rows = rows
        .iter()
        .map(|r| r.with_x(tabular.x0(), tabular.x1()))
        .collect();
    let columns = columns
        .iter()
        .map(|c| c.with_y(tabular.y0(), tabular.y1()))
        .collect();
    Some((rows, columns, tabular))
}

fn center_along(boxes: &mut [BBox], axis: Axis, lo: f64, hi: f64) {
    let n = boxes.len();
    if n == 0 {
        return;
    }
    for k in 0..n.saturating_sub(1) {
        let mid = (axis.hi(&boxes[k]) + axis.lo(&boxes[k + 1])) / 2.0;
        let upper_lo = axis.lo(&boxes[k]);
        let mid = mid.max(upper_lo);
        boxes[k] = axis.with_extent(&boxes[k], upper_lo, mid);
        let lower_hi = axis.hi(&boxes[k + 1]).max(mid);
        boxes[k + 1] = axis.with_extent(&boxes[k + 1], mid, lower_hi);
    }
    boxes[0] = axis.with_extent(&boxes[0], lo, axis.hi(&boxes[0]).max(lo));
    boxes[n - 1] = axis.with_extent(&boxes[n - 1], axis.lo(&boxes[n - 1]).min(hi), hi);
}

/// Moves each pair of neighbouring boundaries to their midpoint and snaps
/// the outermost rows and columns to the table edges, so rows tile the
/// table height and columns tile its width. Inputs must be sorted.
pub fn center_boundaries(rows: &[BBox], columns: &[BBox]) -> (Vec<BBox>, Vec<BBox>) {
    let mut rows = rows.to_vec();
    let mut columns = columns.to_vec();
    if let Ok(tab) = union_bbox(rows.iter().chain(columns.iter())) {
        center_along(&mut rows, Axis::Vertical, tab.y0(), tab.y1());
        center_along(&mut columns, Axis::Horizontal, tab.x0(), tab.x1());
    }
    (rows, columns)
}

fn matched_span(cell: &BBox, bands: &[BBox], axis: Axis) -> Option<(usize, usize)> {
    let hits: Vec<usize> = bands
        .iter()
        .enumerate()
        .filter(|(_, b)| {
            let size = axis.hi(b) - axis.lo(b);
            size > 0.0 && axis.overlap(cell, b) >= 0.5 * size
        })
        .map(|(i, _)| i)
        .collect();
    Some((*hits.first()?, *hits.last()?))
}

/// Assigns row and column ranges to detected cells. Cells that miss every
/// row or every column are dropped; spanning cells are snapped to the grid.
pub fn assign_cell_ranges(cells: &[Entity], rows: &[BBox], columns: &[BBox]) -> Vec<Entity> {
    cells
        .iter()
        .filter_map(|c| {
            let (rs, re) = matched_span(&c.bbox, rows, Axis::Vertical)?;
            let (cs, ce) = matched_span(&c.bbox, columns, Axis::Horizontal)?;
            let range = CellRange {
                row_start: rs,
                row_end: re,
                col_start: cs,
                col_end: ce,
            };
            let mut out = c.clone();
            out.category = Category::TableCell;
            out.cell_range = Some(range);
            if range.is_spanning() {
                out.bbox = BBox::new(columns[cs].x0(), rows[rs].y0(), columns[ce].x1(), rows[re].y1())
                    .unwrap_or(c.bbox);
            }
            Some(out)
        })
        .collect()
}

/// Completes the grid: spanning cells are kept (later ones overlapping an
/// accepted span are dropped) and every uncovered position gets a cell from
/// the row/column intersection.
pub fn fill_grid(rows: &[BBox], columns: &[BBox], cells: &[Entity]) -> TableGrid {
    let mut spans: Vec<&Entity> = cells
        .iter()
        .filter(|c| c.cell_range.is_some_and(|r| r.is_spanning()))
        .collect();
    spans.sort_by(|a, b| {
        let (ra, rb) = (a.cell_range.unwrap(), b.cell_range.unwrap());
        (ra.row_start, ra.col_start, ra.row_end, ra.col_end, &a.id)
            .cmp(&(rb.row_start, rb.col_start, rb.row_end, rb.col_end, &b.id))
    });
    let mut covered: BTreeSet<(usize, usize)> = BTreeSet::new();
    let mut out = Vec::new();
    for s in spans {
        let r = s.cell_range.unwrap();
        let positions: Vec<(usize, usize)> = (r.row_start..=r.row_end)
            .flat_map(|i| (r.col_start..=r.col_end).map(move |j| (i, j)))
            .collect();
        if positions.iter().any(|p| covered.contains(p)) {
            continue;
        }
        covered.extend(positions);
        out.push(s.clone());
    }
    for (i, row) in rows.iter().enumerate() {
        for (j, col) in columns.iter().enumerate() {
            if covered.contains(&(i, j)) {
                continue;
            }
            let bbox = row.intersection(col).unwrap_or_else(|| {
                BBox::new(col.x0(), row.y0(), col.x1().max(col.x0()), row.y1().max(row.y0()))
                    .expect("ordered extents")
            });
            let mut cell = Entity::new(format!("r{i}c{j}"), Category::TableCell, bbox);
            cell.cell_range = Some(CellRange::single(i, j));
            out.push(cell);
        }
    }
    out.sort_by(|a, b| {
        let (ra, rb) = (a.cell_range.unwrap(), b.cell_range.unwrap());
        (ra.row_start, ra.col_start).cmp(&(rb.row_start, rb.col_start))
    });
    let tabular = union_bbox(rows.iter().chain(columns)).unwrap_or_else(|_| {
        BBox::new(0.0, 0.0, 0.0, 0.0).expect("zero box")
    });
    TableGrid {
        tabular,
        rows: rows.to_vec(),
        columns: columns.to_vec(),
        cells: out,
    }
}

/// Runs the full grid recovery on a table's row, column and cell detections.
/// Missing rows or columns are synthesized from cell centroids.
pub fn parse_table(detected: &[Entity]) -> Result<TableGrid, TableError> {
    parse_table_with_gap(detected, DEFAULT_CENTROID_GAP)
}

/// [`parse_table`] with an explicit centroid gap for row/column synthesis.
pub fn parse_table_with_gap(detected: &[Entity], centroid_gap: f64) -> Result<TableGrid, TableError> {
    let of = |cat: Category| -> Vec<&Entity> {
        let mut v: Vec<&Entity> = detected.iter().filter(|e| e.category == cat).collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    };
    let cells = of(Category::TableCell);
    let mut rows: Vec<BBox> = of(Category::TableRow).iter().map(|e| e.bbox).collect();
    let mut columns: Vec<BBox> = of(Category::TableColumn).iter().map(|e| e.bbox).collect();
    if rows.is_empty() || columns.is_empty() {
        let boxes: Vec<BBox> = cells.iter().map(|c| c.bbox).collect();
        let (r, c) = rows_cols_from_cells(&boxes, centroid_gap);
        if rows.is_empty() {
            rows = r;
        }
        if columns.is_empty() {
            columns = c;
        }
    }
    sort_along(&mut rows, Axis::Vertical);
    sort_along(&mut columns, Axis::Horizontal);
    let rows = resolve_nested(rows);
    let columns = resolve_nested(columns);
    if rows.is_empty() {
        return Err(TableError::Degenerate("rows"));
    }
    if columns.is_empty() {
        return Err(TableError::Degenerate("columns"));
    }
    let (rows, columns, _) = normalize_extents(&rows, &columns).expect("non-empty");
    let (rows, columns) = center_boundaries(&rows, &columns);
    let owned: Vec<Entity> = cells.into_iter().cloned().collect();
    let assigned = assign_cell_ranges(&owned, &rows, &columns);
    Ok(fill_grid(&rows, &columns, &assigned))
}

/// Pairs each text box with the cell covering the largest share of it, as
/// long as that share is at least `gamma`. Ties go to the smaller
/// (row, column). Returns (cell id, text id) pairs in text order.
pub fn match_cells_to_text(
    grid: &TableGrid,
    texts: &[Entity],
    gamma: f64,
) -> Result<Vec<(String, String)>, TableError> {
    let mut out = Vec::new();
    for t in texts {
        let mut best: Option<(f64, &Entity)> = None;
        for c in &grid.cells {
            let g = overlap_fraction(&c.bbox, &t.bbox)
                .map_err(|_| TableError::ZeroAreaText(t.id.clone()))?;
            if g < gamma {
                continue;
            }
            if best.is_none_or(|(bg, _)| g > bg) {
                best = Some((g, c));
            }
        }
        if let Some((_, c)) = best {
            out.push((c.id.clone(), t.id.clone()));
        }
    }
    Ok(out)
}
