//! Hierarchical document structure parsing.
//!
//! Turns flat lists of detected page entities into nested, ordered page
//! structures, builds weak labels from reverse-render records, parses table
//! grids and scores predictions against ground truth.

pub mod eval;
pub mod geometry;
pub mod grammar;
pub mod model;
pub mod pipeline;
pub mod refinement;
pub mod relations;
pub mod synth;
pub mod tablestruct;
pub mod weaklabels;

pub use geometry::BBox;
pub use grammar::Grammar;
pub use model::{Category, CellRange, DocStructure, Entity, Page, Relation, RelationType};
