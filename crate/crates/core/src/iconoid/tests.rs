use nalgebra::Matrix3;

use super::*;
use crate::geometry::Homography;
use crate::graph::{GraphNode, MatchEdge};

fn shift(tx: f64) -> Homography {
    Homography::new(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)).unwrap()
}

/// Nodes placed along x at the given offsets of a 100 px wide strip; every
/// pair in `links` becomes an edge with the exact relative shift.
fn strip(offsets: &[f64], links: &[(usize, usize, usize)]) -> MatchingGraph {
    let nodes = (0..offsets.len())
        .map(|i| GraphNode { image_id: format!("i{i:02}"), width: 100, height: 40 })
        .collect();
    let edges = links
        .iter()
        .map(|&(a, b, inliers)| MatchEdge {
            image_a: format!("i{a:02}"),
            image_b: format!("i{b:02}"),
            inliers,
            h_ab: shift(offsets[a] - offsets[b]),
            h_ba: shift(offsets[b] - offsets[a]),
            correspondences: vec![],
        })
        .collect();
    MatchingGraph::new(nodes, edges).unwrap()
}

fn cfg() -> IconoidShiftConfig {
    IconoidShiftConfig { seeds: 10, ..IconoidShiftConfig::default() }
}

#[test]
fn isolated_image() {
    let g = strip(&[0.0, 500.0], &[]);
    assert_eq!(explore(&g, 0, 0.05, OverlapMode::Min), vec![(0, 1.0)]);
    let clusters = IconoidShift::new(&g, &cfg()).unwrap().run(&[0]);
    assert_eq!(clusters.len(), 1);
    assert_eq!(clusters[0].iconoid, "i00");
    assert_eq!(clusters[0].size(), 1);
    assert!(!clusters[0].reportable);
}

#[test]
fn chain_exploration_stops_at_floor() {
    let g = strip(&[0.0, 40.0, 80.0, 120.0, 160.0], &[(0, 1, 20), (1, 2, 20), (2, 3, 20), (3, 4, 20)]);
    let e = explore(&g, 0, 0.05, OverlapMode::Min);
    let ids: Vec<usize> = e.iter().map(|x| x.0).collect();
    assert_eq!(ids, [0, 1, 2]);
    assert!((e[1].1 - 0.6).abs() < 1e-12 && (e[2].1 - 0.2).abs() < 1e-12);
    let e = explore(&g, 2, 0.05, OverlapMode::Min);
    assert_eq!(e.len(), 5);
}

#[test]
fn explore_matches_restricted_tree() {
    let offs = [0.0, 10.0, 30.0, 35.0, 60.0, 70.0, 90.0];
    let mut links = vec![];
    for a in 0..offs.len() {
        for b in a + 1..offs.len() {
            if (offs[b] - offs[a]) < 65.0 {
                links.push((a, b, 15 + (a * 7 + b * 3) % 20));
            }
        }
    }
    let g = strip(&offs, &links);
    for c in 0..offs.len() {
        let e = explore(&g, c, 0.3, OverlapMode::Min);
        let mut mask = vec![false; g.len()];
        e.iter().for_each(|&(v, _)| mask[v] = true);
        let tree = g.path_tree(c, Some(&mask));
        for &(v, ov) in &e {
            assert_eq!(hop_overlap(&g, &tree.path_to(v).unwrap(), OverlapMode::Min).unwrap(), ov);
        }
    }
}

#[test]
fn medoid_rules() {
    assert_eq!(medoid_step(&["a"], &[vec![1.0]], 0.9).unwrap(), 0);
    assert!(medoid_step(&[], &[], 0.9).is_err());
    // Equal scores: smaller id wins regardless of position.
    let rows = vec![vec![1.0, 0.5], vec![0.5, 1.0]];
    assert_eq!(medoid_step(&["b", "a"], &rows, 0.9).unwrap(), 1);
}

#[test]
fn star_hub_is_medoid() {
    let g = strip(&[0.0, -60.0, 60.0], &[(0, 1, 30), (0, 2, 30)]);
    let shift = IconoidShift::new(&g, &cfg()).unwrap();
    // Each spoke alone explores only the hub; the hub explores both spokes.
    assert_eq!(shift.candidate_overlaps(1).0.len(), 2);
    let (cands, rows) = shift.candidate_overlaps(0);
    assert_eq!(cands, [0, 1, 2]);
    assert_eq!(rows[1][2], 0.0);
    assert_eq!(shift.converge(1), 0);
    assert_eq!(shift.converge(2), 0);
}

#[test]
fn central_view_wins_by_exhaustive_score() {
    let offs = [0.0, 15.0, 30.0, 45.0, 60.0];
    let mut links = vec![];
    for a in 0..5 {
        for b in a + 1..5 {
            links.push((a, b, 40));
        }
    }
    let g = strip(&offs, &links);
    let shift = IconoidShift::new(&g, &cfg()).unwrap();
    let (cands, rows) = shift.candidate_overlaps(0);
    let scores: Vec<f64> = rows.iter().map(|r| medoid_score(r, 0.9)).collect();
    let best = (0..cands.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
    assert_eq!(cands[best], 2);
    assert_eq!(shift.converge(0), 2);
}

#[test]
fn duplicate_seeds_are_idempotent_and_support_is_cut() {
    let offs = [0.0, 20.0, 40.0, 300.0, 320.0];
    let g = strip(&offs, &[(0, 1, 30), (1, 2, 30), (0, 2, 20), (3, 4, 25)]);
    let shift = IconoidShift::new(&g, &cfg()).unwrap();
    let a = shift.run(&[0, 3]);
    let b = IconoidShift::new(&g, &cfg()).unwrap().run(&[3, 0, 0, 3, 4, 2]);
    assert_eq!(a.len(), 2);
    assert_eq!(a.iter().map(|c| &c.iconoid).collect::<Vec<_>>(), b.iter().map(|c| &c.iconoid).collect::<Vec<_>>());
    assert_eq!(a[0].support, b[0].support);
    for c in &b {
        let icon = g.index_of(&c.iconoid).unwrap();
        assert!(c.contains(&c.iconoid));
        for m in &c.support {
            assert!(m.overlap >= 0.1);
            let path = g.shortest_path(icon, g.index_of(&m.image_id).unwrap()).unwrap();
            assert_eq!(hop_overlap(&g, &path, OverlapMode::Min).unwrap(), m.overlap);
        }
    }
}

#[test]
fn seeds_are_prefixes() {
    let a = draw_seeds(50, 10, 3);
    let b = draw_seeds(50, 30, 3);
    assert_eq!(a[..], b[..10]);
    assert_eq!(draw_seeds(5, 10, 3).len(), 5);
}

#[test]
fn sweep_rows() {
    let g = strip(&[0.0, 10.0, 500.0], &[(0, 1, 30)]);
    let ds = Dataset::empty(8);
    let c = IconoidShiftConfig { min_support: 2, ..cfg() };
    assert!(seed_sweep(&ds, &g, &c, &[]).unwrap().is_empty());
    assert!(seed_sweep(&ds, &g, &c, &[2, 1]).is_err());
    let rows = seed_sweep(&ds, &g, &c, &[0, 3]).unwrap();
    assert_eq!(rows[0].clusters, 0);
    assert_eq!(rows[1].clusters, 2);
    assert_eq!(rows[1].reportable_clusters, 1);
    assert_eq!(rows[1].images_covered, 2);
    assert_eq!(rows[1].per_category["uncategorized"], 1);
}

#[test]
fn clusters_round_trip() {
    let g = strip(&[0.0, 10.0], &[(0, 1, 30)]);
    let clusters = IconoidShift::new(&g, &cfg()).unwrap().run(&[0, 1]);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join(CLUSTERS_FILE);
    save_clusters(&p, &clusters).unwrap();
    assert_eq!(load_clusters(&p).unwrap(), clusters);
}
