//! End-to-end parsing of one page of detections.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::eval::{confidence_filter, DEFAULT_MIN_CONFIDENCE};
use crate::grammar::Grammar;
use crate::model::{DocStructure, Entity, Page};
use crate::refinement::{refine, RefinementConfig};
use crate::relations::{classify_relations, RelationConfig};

/// Detector output for one page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detections {
    pub page: Page,
    pub entities: Vec<Entity>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParseConfig {
    pub relations: RelationConfig,
    pub refinement: RefinementConfig,
    pub min_confidence: f64,
    pub refine: bool,
}

impl Default for ParseConfig {
    fn default() -> Self {
        Self {
            relations: RelationConfig::default(),
            refinement: RefinementConfig::default(),
            min_confidence: DEFAULT_MIN_CONFIDENCE,
            refine: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub filter: Duration,
    pub classify: Duration,
    pub refine: Option<Duration>,
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub structure: DocStructure,
    pub warnings: Vec<String>,
    pub timings: StageTimings,
    /// Refinement rounds run, when refinement is enabled.
    pub iterations: Option<usize>,
}

/// Confidence filter, relation classification and (optionally) refinement.
pub fn parse_detections(detections: &Detections, grammar: &Grammar, config: &ParseConfig) -> Parsed {
    let start = Instant::now();
    let kept = confidence_filter(&detections.entities, config.min_confidence);
    let filter = start.elapsed();

    let t = Instant::now();
    let classified = classify_relations(&kept, grammar, &config.relations, detections.page);
    let classify = t.elapsed();

    let (structure, warnings, refine_time, iterations) = if config.refine {
        let t = Instant::now();
        let r = refine(&kept, grammar, &config.relations, detections.page, &config.refinement);
        (r.structure, r.warnings, Some(t.elapsed()), Some(r.iterations))
    } else {
        (classified.structure, classified.warnings, None, None)
    };
    Parsed {
        structure,
        warnings,
        timings: StageTimings {
            filter,
            classify,
            refine: refine_time,
            total: start.elapsed(),
        },
        iterations,
    }
}
