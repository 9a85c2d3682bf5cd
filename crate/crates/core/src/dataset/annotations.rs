//! Relevance annotations: `annotations.csv` with header `query_id,object_id,rating`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rating {
    Bad,
    Ok,
    Good,
}

impl Rating {
    /// `good` counts as `ok`.
    pub fn at_least_ok(self) -> bool {
        self >= Rating::Ok
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rating::Good => "good",
            Rating::Ok => "ok",
            Rating::Bad => "bad",
        })
    }
}

impl FromStr for Rating {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "good" => Ok(Rating::Good),
            "ok" => Ok(Rating::Ok),
            "bad" => Ok(Rating::Bad),
            other => Err(Error::validation(format!("unknown rating {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevanceAnnotation {
    pub query_id: String,
    pub object_id: String,
    pub rating: Rating,
}

/// A set of annotations with at most one rating per `(query, object)` pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Annotations {
    ratings: BTreeMap<(String, String), Rating>,
}

impl Annotations {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, object_id: &str, rating: Rating) -> Result<()> {
        let key = (query_id.to_string(), object_id.to_string());
        if self.ratings.contains_key(&key) {
            return Err(Error::validation(format!(
                "duplicate annotation for query {query_id} and object {object_id}"
            )));
        }
        self.ratings.insert(key, rating);
        Ok(())
    }

    pub fn get(&self, query_id: &str, object_id: &str) -> Option<Rating> {
        self.ratings.get(&(query_id.to_string(), object_id.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = RelevanceAnnotation> + '_ {
        self.ratings.iter().map(|((q, o), r)| RelevanceAnnotation {
            query_id: q.clone(),
            object_id: o.clone(),
            rating: *r,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Row {
    query_id: String,
    object_id: String,
    rating: String,
}

pub fn read_annotations(path: &Path) -> Result<Annotations> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Annotations::new();
    for row in rdr.deserialize() {
        let row: Row = row?;
        out.insert(&row.query_id, &row.object_id, row.rating.parse()?)?;
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, annotations: &Annotations) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for a in annotations.iter() {
        w.serialize(Row {
            query_id: a.query_id,
            object_id: a.object_id,
            rating: a.rating.to_string(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_pair_rejected() {
        let mut a = Annotations::new();
        a.insert("q", "o", Rating::Good).unwrap();
        assert!(a.insert("q", "o", Rating::Bad).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("annotations.csv");
        let mut a = Annotations::new();
        a.insert("q1", "o1", Rating::Good).unwrap();
        a.insert("q1", "o2", Rating::Ok).unwrap();
        a.insert("q2", "o1", Rating::Bad).unwrap();
        write_annotations(&path, &a).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("query_id,object_id,rating\n"));
        assert_eq!(read_annotations(&path).unwrap(), a);
    }

    #[test]
    fn rating_order() {
        assert!(Rating::Good.at_least_ok());
        assert!(Rating::Ok.at_least_ok());
        assert!(!Rating::Bad.at_least_ok());
    }
}
