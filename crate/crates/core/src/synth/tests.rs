use std::collections::HashMap;

use super::*;
use crate::dataset::Rating;
use crate::geometry::{estimate_homography, GeometryConfig, Point};

fn flat(count: usize, views: usize) -> GeneratorConfig {
    GeneratorConfig {
        noise: NoiseConfig::clean(),
        queries_per_object: 1,
        groups: vec![ObjectGroup { archetype: Archetype::FlatSmall, count, views, ..ObjectGroup::default() }],
        ..GeneratorConfig::default()
    }
}

fn facade_with_details() -> GeneratorConfig {
    GeneratorConfig {
        groups: vec![
            ObjectGroup { archetype: Archetype::FlatLarge, count: 1, views: 6, ..ObjectGroup::default() },
            ObjectGroup {
                archetype: Archetype::FacadeDetail,
                count: 2,
                views: 3,
                parent_group: Some(0),
                per_parent: 2,
                ..ObjectGroup::default()
            },
        ],
        ..GeneratorConfig::default()
    }
}

#[test]
fn zero_objects_is_empty() {
    let d = generate_dataset(&GeneratorConfig::default(), 1).unwrap();
    assert!(d.dataset.is_empty());
    assert!(d.queries.is_empty());
    assert_eq!(d.truth.objects().count(), 0);
    assert_eq!(d.truth.images().count(), 0);
}

#[test]
fn deterministic_given_seed() {
    let cfg = facade_with_details();
    let a = generate_dataset(&cfg, 5).unwrap();
    let b = generate_dataset(&cfg, 5).unwrap();
    assert_eq!(a.dataset.images(), b.dataset.images());
    assert_eq!(a.queries, b.queries);
    assert_eq!(a.truth, b.truth);
    let c = generate_dataset(&cfg, 6).unwrap();
    assert_ne!(a.dataset.images(), c.dataset.images());
}

#[test]
fn detail_without_parent_rejected() {
    let cfg = GeneratorConfig {
        groups: vec![ObjectGroup { archetype: Archetype::FacadeDetail, count: 1, ..ObjectGroup::default() }],
        ..GeneratorConfig::default()
    };
    assert!(matches!(generate_dataset(&cfg, 0), Err(Error::Validation(_))));
}

#[test]
fn detail_ratings() {
    let d = generate_dataset(&facade_with_details(), 2).unwrap();
    let objs: Vec<&ObjectTruth> = d.truth.objects().collect();
    let facade = objs.iter().find(|o| o.parent.is_none()).unwrap();
    let details: Vec<_> = objs.iter().filter(|o| o.parent.is_some()).collect();
    assert_eq!(details.len(), 2);
    assert_eq!(d.truth.rating(&details[0].object_id, &facade.object_id), Rating::Ok);
    assert_eq!(d.truth.rating(&details[0].object_id, &details[1].object_id), Rating::Bad);
    assert_eq!(d.truth.rating(&details[0].object_id, &details[0].object_id), Rating::Good);
    // The parent's name is an acceptable name for the detail.
    assert_eq!(d.truth.semantic_rating(&details[0].object_id, &facade.true_name.to_uppercase()), Rating::Good);
    assert_eq!(d.truth.semantic_rating(&facade.object_id, &details[1].true_name), Rating::Ok);
}

#[test]
fn prototypes_respect_margin() {
    let d = generate_dataset(&flat(3, 2), 3).unwrap();
    let protos: Vec<&Vec<f32>> = d.scenes.iter().flat_map(|s| s.features.iter().map(|f| &f.prototype)).collect();
    let m2 = GeneratorConfig::default().prototype_margin.powi(2);
    for i in 0..protos.len() {
        for j in i + 1..protos.len() {
            assert!(crate::geometry::sq_dist(protos[i], protos[j]) >= m2);
        }
    }
}

/// Maps descriptor bit patterns to positions; zero noise makes descriptors
/// exact prototype copies.
fn by_descriptor(rec: &ImageRecord) -> HashMap<Vec<u32>, Point> {
    rec.features
        .iter()
        .map(|f| (f.descriptor.iter().map(|x| x.to_bits()).collect(), f.position()))
        .collect()
}

#[test]
fn co_object_pairs_share_points_under_true_homography() {
    let d = generate_dataset(&flat(3, 10), 4).unwrap();
    let imgs = d.dataset.images();
    let mut checked = 0;
    for a in imgs {
        for b in imgs {
            if a.image_id >= b.image_id || d.truth.object_of(&a.image_id) != d.truth.object_of(&b.image_id) {
                continue;
            }
            let h = d.truth.true_homography(&a.image_id, &b.image_id).unwrap();
            let (ma, mb) = (by_descriptor(a), by_descriptor(b));
            let shared: Vec<_> = ma.iter().filter_map(|(k, pa)| Some((*pa, *mb.get(k)?))).collect();
            assert!(shared.len() >= 60, "{} shared", shared.len());
            for (pa, pb) in shared {
                let m = h.apply(pa).unwrap();
                assert!((m[0] - pb[0]).abs() < 1e-6 && (m[1] - pb[1]).abs() < 1e-6);
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 3 * 45);
}

#[test]
fn estimated_homography_matches_truth_on_clean_views() {
    let d = generate_dataset(&flat(1, 4), 8).unwrap();
    let imgs = d.dataset.images();
    let cfg = GeometryConfig::default();
    for w in imgs.windows(2) {
        let (ma, mb) = (by_descriptor(&w[0]), by_descriptor(&w[1]));
        let (src, dst): (Vec<Point>, Vec<Point>) = ma.iter().filter_map(|(k, pa)| Some((*pa, *mb.get(k)?))).unzip();
        let fit = estimate_homography(&src, &dst, &cfg).unwrap().unwrap();
        let truth = d.truth.true_homography(&w[0].image_id, &w[1].image_id).unwrap();
        assert!(fit.homography.max_displacement(&truth, &src) < 1e-6);
    }
}

#[test]
fn queries_are_separate_and_labelled() {
    let d = generate_dataset(&flat(2, 3), 1).unwrap();
    assert_eq!(d.queries.len(), 2);
    for q in &d.queries {
        assert!(d.dataset.get(&q.image_id).is_none());
        assert_eq!(q.category.as_deref(), Some("Paintings"));
        assert!(d.truth.image(&q.image_id).unwrap().query);
    }
    let ann = d.truth.object_annotations();
    assert_eq!(ann.len(), 2 * 2);
}

#[test]
fn truth_round_trips() {
    let d = generate_dataset(&facade_with_details(), 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    d.save(dir.path()).unwrap();
    let gt = GroundTruth::load(&dir.path().join(GROUND_TRUTH_FILE)).unwrap();
    assert_eq!(gt, d.truth);
    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back.images(), d.dataset.images());
}
