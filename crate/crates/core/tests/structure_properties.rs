use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;

use docparse::model::validate_structure;
use docparse::refinement::{refine, RefinementConfig};
use docparse::relations::{classify_relations, reading_order, RelationConfig};
use docparse::synth::{generate_page, perturb, NoiseSpec, PageSpec};
use docparse::{BBox, Category, CellRange, DocStructure, Entity, Grammar, Page, Relation, RelationType};

const PAGE: Page = Page {
    width: 1000.0,
    height: 1400.0,
};

fn arb_category() -> impl Strategy<Value = Category> {
    prop::sample::select(Category::DETECTOR.to_vec())
}

/// Integer-valued boxes, so translations stay exact.
fn arb_box() -> impl Strategy<Value = BBox> {
    (0u32..900, 0u32..1300, 1u32..400, 1u32..300).prop_map(|(x, y, w, h)| {
        let (x, y) = (x as f64, y as f64);
        BBox::new(x, y, (x + w as f64).min(1000.0), (y + h as f64).min(1400.0)).unwrap()
    })
}

fn arb_entities(max: usize) -> impl Strategy<Value = Vec<Entity>> {
    prop::collection::vec((arb_category(), arb_box(), prop::option::of(0.0f64..=1.0)), 0..max).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (c, b, conf))| {
                let mut e = Entity::new(format!("e{i:02}"), c, b);
                e.confidence = conf;
                e
            })
            .collect()
    })
}

/// Either random boxes or a perturbed synthetic page.
fn arb_page_entities() -> impl Strategy<Value = (Vec<Entity>, Page)> {
    prop_oneof![
        arb_entities(14).prop_map(|e| (e, PAGE)),
        (0u64..10_000, 0u64..10_000).prop_map(|(page_seed, noise_seed)| {
            let gt = generate_page(&PageSpec::random(page_seed)).unwrap().ground_truth;
            let noise = NoiseSpec {
                seed: noise_seed,
                ..NoiseSpec::default()
            };
            (perturb(&gt, &noise).unwrap(), gt.page)
        }),
    ]
}

fn run_refine(entities: &[Entity], page: Page, r: usize) -> docparse::refinement::Refined {
    refine(
        entities,
        &Grammar::default(),
        &RelationConfig::default(),
        page,
        &RefinementConfig::new(r).unwrap(),
    )
}

fn relation_set(s: &DocStructure) -> BTreeSet<(RelationType, String, String)> {
    s.relations
        .iter()
        .map(|r| (r.rel_type, r.subject.clone(), r.object.clone()))
        .collect()
}

fn shifted(entities: &[Entity], dx: f64, dy: f64) -> Vec<Entity> {
    entities
        .iter()
        .map(|e| Entity {
            bbox: e.bbox.translate(dx, dy),
            ..e.clone()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn structure_json_round_trip(
        entities in arb_entities(12),
        picks in prop::collection::vec((0usize..12, 0usize..12, 0u8..3), 0..20),
        spans in prop::collection::vec((0usize..4, 0usize..3, 0usize..4, 0usize..3), 0..3),
    ) {
        let mut entities = entities;
        for (k, &(r, dr, c, dc)) in spans.iter().enumerate() {
            if let Some(e) = entities.get_mut(k) {
                e.category = Category::TableCell;
                e.cell_range = Some(CellRange { row_start: r, row_end: r + dr, col_start: c, col_end: c + dc });
            }
        }
        let n = entities.len().max(1);
        let relations = picks
            .iter()
            .filter(|_| !entities.is_empty())
            .map(|&(a, b, t)| {
                let kind = [RelationType::ParentOf, RelationType::FollowedBy, RelationType::Null][t as usize];
                Relation::new(entities[a % n].id.clone(), entities[b % n].id.clone(), kind)
            })
            .collect();
        let s = DocStructure { page: PAGE, entities, relations };
        let back = DocStructure::from_json(&s.to_json()).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert_eq!(back.to_json(), s.to_json());
    }

    #[test]
    fn classified_structures_are_valid((entities, page) in arb_page_entities()) {
        let out = classify_relations(&entities, &Grammar::default(), &RelationConfig::default(), page);
        prop_assert_eq!(validate_structure(&out.structure), vec![]);
    }

    #[test]
    fn classification_ignores_input_order(entities in arb_entities(12), rotate in 0usize..12) {
        let grammar = Grammar::default();
        let config = RelationConfig::default();
        let mut permuted = entities.clone();
        permuted.reverse();
        if !permuted.is_empty() {
            let k = rotate % permuted.len();
            permuted.rotate_left(k);
        }
        let a = classify_relations(&entities, &grammar, &config, PAGE).structure;
        let b = classify_relations(&permuted, &grammar, &config, PAGE).structure;
        prop_assert_eq!(relation_set(&a), relation_set(&b));
        let mut reversed = entities.clone();
        reversed.reverse();
        prop_assert_eq!(reading_order(&entities), reading_order(&reversed));
    }

    #[test]
    fn classification_is_translation_invariant(
        entities in arb_entities(12),
        dx in 0u32..300,
        dy in 0u32..300,
    ) {
        let (dx, dy) = (dx as f64, dy as f64);
        let grammar = Grammar::default();
        let config = RelationConfig::default();
        let wider = Page::new(PAGE.width + 2.0 * dx, PAGE.height + 2.0 * dy);
        let a = classify_relations(&entities, &grammar, &config, PAGE).structure;
        let b = classify_relations(&shifted(&entities, dx, dy), &grammar, &config, wider).structure;
        prop_assert_eq!(relation_set(&a), relation_set(&b));
    }

    #[test]
    fn refinement_invariants((entities, page) in arb_page_entities(), r in 1usize..12) {
        let out = run_refine(&entities, page, r);
        let s = &out.structure;
        prop_assert_eq!(validate_structure(s), vec![]);
        prop_assert!(out.iterations <= r);
        prop_assert_eq!(out.converged, out.warnings.iter().all(|w| !w.contains("iteration")));

        // surviving input entities never shrink
        let input: HashMap<&str, &BBox> = entities.iter().map(|e| (e.id.as_str(), &e.bbox)).collect();
        for e in &s.entities {
            if let Some(before) = input.get(e.id.as_str()) {
                prop_assert!(e.bbox.contains(before), "{} shrank", e.id);
            }
        }

        // parents enclose their descendants once the loop has settled; a run
        // cut off by the budget may still owe an expansion
        let by_id: HashMap<&str, &Entity> = s.entities.iter().map(|e| (e.id.as_str(), e)).collect();
        for rel in s.relations_of(RelationType::ParentOf).filter(|_| out.converged) {
            let (p, c) = (by_id[rel.subject.as_str()], by_id[rel.object.as_str()]);
            prop_assert!(p.bbox.contains(&c.bbox), "{} does not enclose {}", p.id, c.id);
        }

        // new entities only come from wrapping surplus figure graphics
        let added: Vec<&Entity> = s.entities.iter().filter(|e| !input.contains_key(e.id.as_str())).collect();
        let graphics = entities.iter().filter(|e| e.category == Category::FigureGraphic).count();
        prop_assert!(added.iter().all(|e| e.category == Category::Figure));
        prop_assert!(added.len() <= graphics);
    }

    #[test]
    fn refinement_is_idempotent((entities, page) in arb_page_entities()) {
        let once = run_refine(&entities, page, 30);
        if once.converged {
            let twice = run_refine(&once.structure.entities, page, 30);
            prop_assert_eq!(twice.structure.to_json(), once.structure.to_json());
            prop_assert_eq!(twice.iterations, 1);
        }
    }

    #[test]
    fn refinement_is_translation_invariant(entities in arb_entities(12), dy in 0u32..300) {
        let dy = dy as f64;
        let taller = Page::new(PAGE.width, PAGE.height + 2.0 * dy);
        let a = run_refine(&entities, PAGE, 30).structure;
        let b = run_refine(&shifted(&entities, 0.0, dy), taller, 30).structure;
        prop_assert_eq!(relation_set(&a), relation_set(&b));
    }
}
