//! Naming clusters from user tags. Tags are counted by distinct users, so a
//! single prolific uploader cannot push a tag up.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ImageRecord};
use crate::error::{Error, Result};
use crate::iconoid::ObjectCluster;

pub const TAGS_FILE: &str = "tags.csv";

static FILENAME: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:[a-z]+[_-]?\d+\.(?:jpe?g|png|gif|bmp|tiff?|heic|raw|cr2|nef|dng)|\d+)$").expect("valid regex")
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TagConfig {
    pub stoplist: Vec<String>,
    pub top_k: usize,
    /// Clusters smaller than this are not named.
    pub min_cluster_size: usize,
}

impl Default for TagConfig {
    fn default() -> Self {
        TagConfig {
            stoplist: ["paris", "france", "europe", "vacation", "photo", "canon"].map(String::from).to_vec(),
            top_k: 3,
            min_cluster_size: 6,
        }
    }
}

/// One term per line; blank lines and `#` comments are skipped.
pub fn read_stoplist(path: &Path) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

pub fn is_camera_filename(tag: &str) -> bool {
    FILENAME.is_match(&tag.to_lowercase())
}

/// Tags plus the title as one more tag, lowercased and trimmed, without
/// stoplist terms and camera file names. First occurrences are kept.
pub fn preprocess_tags(image: &ImageRecord, stoplist: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for raw in image.tags.iter().chain(std::iter::once(&image.title)) {
        let t = raw.trim().to_lowercase();
        if t.is_empty() || stoplist.contains(&t) || is_camera_filename(&t) || out.contains(&t) {
            continue;
        }
        out.push(t);
    }
    out
}

/// Distinct-user counts over the whole dataset and per cluster.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TagStats {
    /// U(t).
    pub users: BTreeMap<String, usize>,
    /// Raw occurrences of each tag over the dataset.
    pub occurrences: BTreeMap<String, usize>,
    /// U(c, t) per cluster, aligned with the cluster list.
    pub cluster_users: Vec<BTreeMap<String, usize>>,
    /// Distinct owners of each cluster's images.
    pub cluster_owners: Vec<usize>,
    /// Images carrying at least one tag after preprocessing, per cluster.
    pub cluster_tagged: Vec<usize>,
}

impl TagStats {
    pub fn compute(dataset: &Dataset, clusters: &[ObjectCluster], stoplist: &[String]) -> Self {
        let tags: Vec<Vec<String>> = dataset.images().iter().map(|r| preprocess_tags(r, stoplist)).collect();
        let mut users: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        let mut occurrences = BTreeMap::new();
        for (r, ts) in dataset.images().iter().zip(&tags) {
            for t in ts {
                users.entry(t).or_default().insert(&r.owner_id);
                *occurrences.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let mut stats = TagStats {
            users: users.into_iter().map(|(t, u)| (t.to_string(), u.len())).collect(),
            occurrences,
            ..TagStats::default()
        };
        for c in clusters {
            let mut per: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
            let mut owners = BTreeSet::new();
            let mut tagged = 0;
            for id in c.member_ids() {
                let Some(i) = dataset.index_of(id) else { continue };
                let owner = dataset.image(i).owner_id.as_str();
                owners.insert(owner);
                tagged += usize::from(!tags[i].is_empty());
                for t in &tags[i] {
                    per.entry(t).or_default().insert(owner);
                }
            }
            stats.cluster_users.push(per.into_iter().map(|(t, u)| (t.to_string(), u.len())).collect());
            stats.cluster_owners.push(owners.len());
            stats.cluster_tagged.push(tagged);
        }
        stats
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagScore {
    pub tag: String,
    pub score: f64,
    /// U(c, t).
    pub users: usize,
}

/// `U(c,t)² / U(t)`: the cluster's share of the tag's users times the
/// number of its users inside the cluster.
pub fn tag_score(cluster_users: usize, total_users: usize) -> f64 {
    if total_users == 0 {
        return 0.0;
    }
    let c = cluster_users as f64;
    c / total_users as f64 * c
}

/// All tags of cluster `c` by descending score, ties by tag.
pub fn score_tags(stats: &TagStats, c: usize) -> Vec<TagScore> {
    let mut out: Vec<TagScore> = stats.cluster_users[c]
        .iter()
        .map(|(t, &u)| TagScore { tag: t.clone(), score: tag_score(u, stats.users[t]), users: u })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tag.cmp(&b.tag)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterNames {
    pub object_id: String,
    pub size: usize,
    /// Distinct owners among the cluster's images.
    pub distinct_users: usize,
    pub tags: Vec<TagScore>,
}

impl ClusterNames {
    pub fn top(&self) -> Option<&str> {
        self.tags.first().map(|t| t.tag.as_str())
    }
}

/// Top tags of every cluster with at least `min_cluster_size` images.
pub fn name_clusters(clusters: &[ObjectCluster], dataset: &Dataset, config: &TagConfig) -> Vec<ClusterNames> {
    let stats = TagStats::compute(dataset, clusters, &config.stoplist);
    clusters
        .iter()
        .enumerate()
        .filter(|(_, c)| c.size() >= config.min_cluster_size)
        .map(|(i, c)| ClusterNames {
            object_id: c.object_id.clone(),
            size: c.size(),
            distinct_users: stats.cluster_owners[i],
            tags: score_tags(&stats, i).into_iter().take(config.top_k).collect(),
        })
        .collect()
}

pub fn write_tags(path: &Path, names: &[ClusterNames]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cluster", "rank", "tag", "score", "distinct_users"])?;
    for n in names {
        for (i, t) in n.tags.iter().enumerate() {
            w.write_record([
                n.object_id.clone(),
                (i + 1).to_string(),
                t.tag.clone(),
                t.score.to_string(),
                t.users.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_tags(path: &Path) -> Result<Vec<ClusterNames>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: Vec<ClusterNames> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::validation("tags.csv row has too few fields"));
        let parse_err = |e: String| Error::format(rec.position().map(|p| p.byte()).unwrap_or(0), e);
        let object_id = field(0)?.to_string();
        let tag = TagScore {
            tag: field(2)?.to_string(),
            score: field(3)?.parse().map_err(|e: std::num::ParseFloatError| parse_err(e.to_string()))?,
            users: field(4)?.parse().map_err(|e: std::num::ParseIntError| parse_err(e.to_string()))?,
        };
        match out.last_mut() {
            Some(n) if n.object_id == object_id => n.tags.push(tag),
            _ => out.push(ClusterNames { object_id, size: 0, distinct_users: 0, tags: vec![tag] }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ImageSource;
    use crate::iconoid::SupportMember;

    fn img(id: &str, owner: &str, tags: &[&str], title: &str) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            width: 10,
            height: 10,
            features: vec![],
            owner_id: owner.into(),
            title: title.into(),
            tags: tags.iter().map(|s| s.to_string()).collect(),
            category: None,
            source: ImageSource::Ingested,
        }
    }

    fn cluster(id: &str, members: &[&str]) -> ObjectCluster {
        let mut support: Vec<SupportMember> =
            members.iter().map(|m| SupportMember { image_id: m.to_string(), overlap: 1.0 }).collect();
        support.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        ObjectCluster {
            object_id: id.into(),
            iconoid: members[0].into(),
            support,
            beta: 0.9,
            seed: members[0].into(),
            runs: 1,
            reportable: true,
        }
    }

    #[test]
    fn preprocessing_examples() {
        let stop = TagConfig::default().stoplist;
        assert_eq!(preprocess_tags(&img("a", "u", &["Paris", "Louvre"], ""), &stop), ["louvre"]);
        assert!(preprocess_tags(&img("a", "u", &["DSC002342.JPG"], ""), &stop).is_empty());
        assert_eq!(preprocess_tags(&img("a", "u", &[], " Notre Dame "), &stop), ["notre dame"]);
        assert!(preprocess_tags(&img("a", "u", &["20070612", "IMG_1234.jpg"], "dsc_0001.nef"), &stop).is_empty());
        assert_eq!(preprocess_tags(&img("a", "u", &["Louvre", "louvre"], "LOUVRE"), &stop), ["louvre"]);
        assert!(!is_camera_filename("pyramid2"));
    }

    #[test]
    fn formula() {
        assert_eq!(tag_score(10, 10), 10.0);
        assert_eq!(tag_score(1, 1), 1.0);
        assert_eq!(tag_score(2, 4), 1.0);
        assert_eq!(tag_score(5, 100), 0.25);
        assert_eq!(tag_score(5, 5), 5.0);
    }

    #[test]
    fn spam_user_is_marginalized() {
        let mut images = Vec::new();
        for i in 0..10 {
            images.push(img(&format!("c{i:02}"), &format!("user{i}"), &["Sainte Chapelle"], ""));
        }
        for i in 0..50 {
            images.push(img(&format!("s{i:02}"), "spammer", &["spammerpics"], ""));
        }
        let ds = Dataset::new(8, vec![], images).unwrap();
        let ids: Vec<String> = ds.images().iter().map(|r| r.image_id.clone()).collect();
        let members: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
        let cfg = TagConfig::default();
        let names = name_clusters(&[cluster("c", &members)], &ds, &cfg);
        assert_eq!(names[0].tags[0].tag, "sainte chapelle");
        assert_eq!(names[0].tags[0].score, 10.0);
        assert_eq!(names[0].tags[1].score, 1.0);
        assert_eq!(names[0].distinct_users, 11);
    }

    #[test]
    fn small_clusters_skipped_and_empty_rankings() {
        let images: Vec<ImageRecord> = (0..6).map(|i| img(&format!("i{i}"), "u", &[], "")).collect();
        let ds = Dataset::new(8, vec![], images).unwrap();
        let cfg = TagConfig::default();
        let five = cluster("a", &["i0", "i1", "i2", "i3", "i4"]);
        let six = cluster("b", &["i0", "i1", "i2", "i3", "i4", "i5"]);
        let names = name_clusters(&[five, six], &ds, &cfg);
        assert_eq!(names.len(), 1);
        assert_eq!(names[0].object_id, "b");
        assert!(names[0].tags.is_empty());
    }

    #[test]
    fn usage_count_does_not_matter() {
        let mk = |spam: usize| {
            let mut images = vec![img("a0", "u1", &["x"], ""), img("a1", "u2", &["x", "y"], "")];
            for i in 0..spam {
                images.push(img(&format!("b{i:03}"), "u1", &["y"], ""));
            }
            let ds = Dataset::new(8, vec![], images).unwrap();
            let ids: Vec<String> = ds.images().iter().map(|r| r.image_id.clone()).collect();
            let members: Vec<&str> = ids.iter().map(|s| s.as_str()).collect();
            let stats = TagStats::compute(&ds, &[cluster("c", &members)], &[]);
            score_tags(&stats, 0)
        };
        assert_eq!(mk(1), mk(40));
    }

    #[test]
    fn csv_round_trip() {
        let names = vec![ClusterNames {
            object_id: "obj-a".into(),
            size: 7,
            distinct_users: 3,
            tags: vec![TagScore { tag: "eiffel, tower".into(), score: 2.25, users: 3 }],
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(TAGS_FILE);
        write_tags(&p, &names).unwrap();
        let back = read_tags(&p).unwrap();
        assert_eq!(back[0].tags, names[0].tags);
    }
}
