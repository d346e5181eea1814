//! Detection and relation metrics.
//!
//! Entities are matched per category by IoU, predictions taken in order of
//! decreasing confidence. Average precision integrates the monotone
//! precision envelope over recall; relations are scored as exact triples
//! after mapping prediction ids onto their matched ground-truth ids.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::iou;
use crate::model::{Category, DocStructure, Entity, RelationType};

pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.7;
/// IoU operating points reported by default.
pub const IOU_THRESHOLDS: [f64; 3] = [0.5, 0.65, 0.8];

/// Keeps predictions with confidence at or above `min_conf`. Entities
/// without a confidence are kept.
pub fn confidence_filter(predictions: &[Entity], min_conf: f64) -> Vec<Entity> {
    predictions
        .iter()
        .filter(|e| e.confidence.is_none_or(|c| c >= min_conf))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// (prediction id, ground-truth id, IoU) in prediction rank order.
    pub true_positives: Vec<(String, String, f64)>,
    pub false_positives: Vec<String>,
    pub false_negatives: Vec<String>,
    /// TP/FP flag per prediction in rank order.
    pub ranked: Vec<bool>,
}

fn cmp_rank(a: &Entity, b: &Entity) -> Ordering {
    let ca = a.confidence.unwrap_or(f64::NEG_INFINITY);
    let cb = b.confidence.unwrap_or(f64::NEG_INFINITY);
    cb.total_cmp(&ca).then_with(|| a.id.cmp(&b.id))
}

/// Greedy matching of one category. Each prediction, highest confidence
/// first, picks the ground-truth box it overlaps most. It is a true positive
/// when that IoU reaches the threshold and the box is still unclaimed;
/// otherwise it is a false positive.
pub fn match_entities(
    predictions: &[Entity],
    ground_truth: &[Entity],
    category: Category,
    iou_threshold: f64,
) -> MatchResult {
    let mut preds: Vec<&Entity> = predictions.iter().filter(|e| e.category == category).collect();
    preds.sort_by(|a, b| cmp_rank(a, b));
    let gts: Vec<&Entity> = ground_truth.iter().filter(|e| e.category == category).collect();
    let mut claimed = vec![false; gts.len()];
    let mut out = MatchResult::default();
    for p in preds {
        let best = gts
            .iter()
            .enumerate()
            .map(|(j, g)| (j, iou(&p.bbox, &g.bbox).unwrap_or(0.0)))
            .fold(None, |acc: Option<(usize, f64)>, (j, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((j, v)),
            });
        match best {
            Some((j, v)) if v >= iou_threshold && v > 0.0 && !claimed[j] => {
                claimed[j] = true;
                out.true_positives.push((p.id.clone(), gts[j].id.clone(), v));
                out.ranked.push(true);
            }
            _ => {
                out.false_positives.push(p.id.clone());
                out.ranked.push(false);
            }
        }
    }
    out.false_negatives = gts
        .iter()
        .zip(&claimed)
        .filter(|(_, c)| !**c)
        .map(|(g, _)| g.id.clone())
        .collect();
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    AllPoint,
    ElevenPoint,
}

/// Average precision in [0, 100] from TP/FP flags in rank order. `None`
/// when there is no ground truth.
pub fn average_precision(ranked: &[bool], n_gt: usize, interpolation: Interpolation) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut tp = 0usize;
    let mut points: Vec<(usize, f64)> = Vec::with_capacity(ranked.len());
    for (k, &hit) in ranked.iter().enumerate() {
        tp += usize::from(hit);
        points.push((tp, tp as f64 / (k + 1) as f64));
    }
    // precision envelope: best precision at this rank or any later one
    let mut envelope = vec![0.0; points.len()];
    let mut best: f64 = 0.0;
    for k in (0..points.len()).rev() {
        best = best.max(points[k].1);
        envelope[k] = best;
    }
    let ap = match interpolation {
        Interpolation::AllPoint => {
            let sum: f64 = ranked
                .iter()
                .zip(&envelope)
                .filter(|(hit, _)| **hit)
                .map(|(_, p)| *p)
                .sum();
            sum * 100.0 / n_gt as f64
        }
        Interpolation::ElevenPoint => {
            let total: f64 = (0..=10)
                .map(|i| {
                    let needed = i as f64 / 10.0;
                    points
                        .iter()
                        .zip(&envelope)
                        .find(|((tp, _), _)| *tp as f64 / n_gt as f64 >= needed - 1e-12)
                        .map_or(0.0, |(_, p)| *p)
                })
                .sum();
            total * 100.0 / 11.0
        }
    };
    Some(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryStatus {
    Scored,
    /// Ground truth present but no prediction of this category.
    NothingDetected,
    /// Predictions present but no ground truth; excluded from the mean.
    NoGroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub ap: Option<f64>,
    pub ground_truth: usize,
    pub predictions: usize,
    pub true_positives: usize,
    pub status: CategoryStatus,
}

/// Mean of the given APs, `None` for an empty input.
pub fn mean_ap(aps: &[f64]) -> Option<f64> {
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub ground_truth: usize,
}

impl Prf {
    pub fn from_counts(tp: usize, predicted: usize, ground_truth: usize) -> Self {
        let ratio = |num: usize, den: usize, other: usize| {
            if den == 0 {
                if other == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, predicted, ground_truth);
        let recall = ratio(tp, ground_truth, predicted);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            true_positives: tp,
            predicted,
            ground_truth,
        }
    }
}

pub const ALL_RELATIONS: &str = "all";

fn triples(s: &DocStructure) -> BTreeSet<(String, String, RelationType)> {
    s.relations
        .iter()
        .filter(|r| r.rel_type != RelationType::Null)
        .map(|r| (r.subject.clone(), r.object.clone(), r.rel_type))
        .collect()
}

fn categories_of(pred: &[Entity], gt: &[Entity]) -> BTreeSet<Category> {
    pred.iter().chain(gt).map(|e| e.category).collect()
}

/// Prediction id → ground-truth id for every true positive.
pub fn entity_mapping(pred: &[Entity], gt: &[Entity], iou_threshold: f64) -> HashMap<String, String> {
    categories_of(pred, gt)
        .into_iter()
        .flat_map(|c| match_entities(pred, gt, c, iou_threshold).true_positives)
        .map(|(p, g, _)| (p, g))
        .collect()
}

/// Exact-triple precision, recall and F1 per relation type and overall.
pub fn relation_f1(pred: &DocStructure, gt: &DocStructure, iou_threshold: f64) -> BTreeMap<String, Prf> {
    let mapping = entity_mapping(&pred.entities, &gt.entities, iou_threshold);
    let gt_triples = triples(gt);
    let pred_triples = triples(pred);
    let mapped: HashSet<(String, String, RelationType)> = pred_triples
        .iter()
        .filter_map(|(s, o, t)| Some((mapping.get(s)?.clone(), mapping.get(o)?.clone(), *t)))
        .collect();
    let mut out = BTreeMap::new();
    let score = |filter: &dyn Fn(RelationType) -> bool| {
        let predicted = pred_triples.iter().filter(|t| filter(t.2)).count();
        let ground = gt_triples.iter().filter(|t| filter(t.2)).count();
        let tp = gt_triples.iter().filter(|t| filter(t.2) && mapped.contains(*t)).count();
        Prf::from_counts(tp, predicted, ground)
    };
    for t in [RelationType::ParentOf, RelationType::FollowedBy] {
        out.insert(t.to_string(), score(&|x| x == t));
    }
    out.insert(ALL_RELATIONS.to_string(), score(&|_| true));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub interpolation: Interpolation,
    pub min_confidence: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            interpolation: Interpolation::AllPoint,
            min_confidence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub interpolation: Interpolation,
    pub categories: BTreeMap<Category, CategoryScore>,
    /// AP of every category present in the ground truth.
    pub per_category_ap: BTreeMap<Category, f64>,
    pub mean_ap: Option<f64>,
    pub relation_scores: BTreeMap<String, Prf>,
}

/// Drops predictions under the confidence bar along with their relations.
fn filter_structure(s: &DocStructure, min_conf: f64) -> DocStructure {
    let entities = confidence_filter(&s.entities, min_conf);
    let kept: HashSet<&str> = entities.iter().map(|e| e.id.as_str()).collect();
    let relations = s
        .relations
        .iter()
        .filter(|r| kept.contains(r.subject.as_str()) && kept.contains(r.object.as_str()))
        .cloned()
        .collect();
    DocStructure {
        page: s.page,
        entities,
        relations,
    }
}

pub fn evaluate(pred: &DocStructure, gt: &DocStructure, config: &EvalConfig) -> EvalReport {
    let filtered;
    let pred = match config.min_confidence {
        Some(m) => {
            filtered = filter_structure(pred, m);
            &filtered
        }
        None => pred,
    };
    let mut categories = BTreeMap::new();
    let mut per_category_ap = BTreeMap::new();
    for c in categories_of(&pred.entities, &gt.entities) {
        let m = match_entities(&pred.entities, &gt.entities, c, config.iou_threshold);
        let n_gt = m.true_positives.len() + m.false_negatives.len();
        let n_pred = m.ranked.len();
        let ap = average_precision(&m.ranked, n_gt, config.interpolation);
        let status = if n_gt == 0 {
            CategoryStatus::NoGroundTruth
        } else if n_pred == 0 {
            CategoryStatus::NothingDetected
        } else {
            CategoryStatus::Scored
        };
        if let Some(ap) = ap {
            per_category_ap.insert(c, ap);
        }
        categories.insert(
            c,
            CategoryScore {
                ap,
                ground_truth: n_gt,
                predictions: n_pred,
                true_positives: m.true_positives.len(),
                status,
            },
        );
    }
    let aps: Vec<f64> = per_category_ap.values().copied().collect();
    EvalReport {
        iou_threshold: config.iou_threshold,
        interpolation: config.interpolation,
        categories,
        mean_ap: mean_ap(&aps),
        per_category_ap,
        relation_scores: relation_f1(pred, gt, config.iou_threshold),
    }
}

/// Plain-text table of a report.
pub fn render_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "IoU threshold {:.2}", report.iou_threshold);
    let _ = writeln!(out, "{:<20} {:>8} {:>6} {:>6} {:>6}  status", "category", "AP", "GT", "pred", "TP");
    for (c, s) in &report.categories {
        let ap = s.ap.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"));
        let status = match s.status {
            CategoryStatus::Scored => "",
            CategoryStatus::NothingDetected => "nothing detected",
            CategoryStatus::NoGroundTruth => "no ground truth",
        };
        let _ = writeln!(
            out,
            "{:<20} {:>8} {:>6} {:>6} {:>6}  {}",
            c.as_str(),
            ap,
            s.ground_truth,
            s.predictions,
            s.true_positives,
            status
        );
    }
    let map = report.mean_ap.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"));
    let _ = writeln!(out, "{:<20} {:>8}", "mAP", map);
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<12} {:>9} {:>9} {:>9}", "relation", "precision", "recall", "F1");
    for (k, s) in &report.relation_scores {
        let _ = writeln!(out, "{:<12} {:>9.3} {:>9.3} {:>9.3}", k, s.precision, s.recall, s.f1);
    }
    out
}
