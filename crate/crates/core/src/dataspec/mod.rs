//! Temporally grouped imagery: the record/group/manifest data model, manifest
//! I/O, temporal pair sampling, stratified label subsets and the synthetic
//! temporal scene generator.

mod manifest;
mod sampling;
mod synthetic;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use manifest::{load_manifest, read_manifest, save_manifest, write_manifest};
pub use sampling::{sample_temporal_pair, sample_temporal_pair_for, split_by_location, stratified_label_subset};
pub use synthetic::{
    generate_synthetic_dataset, glyph_mask, render_glyph, SyntheticDataset, SyntheticSpec,
    GLYPHS,
};

/// One acquisition of one location.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub location_id: String,
    /// Acquisition time, epoch seconds.
    pub timestamp: i64,
    /// Storage locator, relative to the manifest directory for on-disk data.
    pub path: String,
    /// Index into the manifest class vocabulary.
    pub class_label: Option<usize>,
    pub width: u32,
    pub height: u32,
}

impl ImageRecord {
    fn time_order(&self, other: &Self) -> std::cmp::Ordering {
        self.timestamp
            .cmp(&other.timestamp)
            .then_with(|| self.image_id.cmp(&other.image_id))
    }
}

/// Index of a [`TemporalGroup`] inside its [`Manifest`]; used as the identity
/// tag of memory-queue entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroupId(pub u32);

/// All acquisitions of one location, sorted by `(timestamp, image_id)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemporalGroup {
    location_id: String,
    records: Vec<ImageRecord>,
}

impl TemporalGroup {
    pub fn new(location_id: impl Into<String>, mut records: Vec<ImageRecord>) -> Result<Self> {
        let location_id = location_id.into();
        if records.is_empty() {
            return Err(Error::Validation(format!(
                "temporal group `{location_id}` is empty"
            )));
        }
        if let Some(r) = records.iter().find(|r| r.location_id != location_id) {
            return Err(Error::Validation(format!(
                "record `{}` has location `{}` but belongs to group `{location_id}`",
                r.image_id, r.location_id
            )));
        }
        records.sort_by(ImageRecord::time_order);
        Ok(Self {
            location_id,
            records,
        })
    }

    pub fn location_id(&self) -> &str {
        &self.location_id
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    groups: Vec<TemporalGroup>,
    class_vocabulary: Vec<String>,
}

impl Manifest {
    pub fn new(groups: Vec<TemporalGroup>, class_vocabulary: Vec<String>) -> Result<Self> {
        let mut locations = HashSet::new();
        let mut ids = HashSet::new();
        for g in &groups {
            if !locations.insert(g.location_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate location_id `{}`",
                    g.location_id
                )));
            }
            for r in &g.records {
                if !ids.insert(r.image_id.as_str()) {
                    return Err(Error::Validation(format!(
                        "duplicate image_id `{}`",
                        r.image_id
                    )));
                }
                if r.width == 0 || r.height == 0 {
                    return Err(Error::Validation(format!(
                        "image `{}` has zero size",
                        r.image_id
                    )));
                }
                if let Some(c) = r.class_label {
                    if c >= class_vocabulary.len() {
                        return Err(Error::Validation(format!(
                            "image `{}` has class index {c} outside a vocabulary of {}",
                            r.image_id,
                            class_vocabulary.len()
                        )));
                    }
                }
            }
        }
        Ok(Self {
            groups,
            class_vocabulary,
        })
    }

    /// Groups records by `location_id`, in order of first appearance.
    pub fn from_records(records: Vec<ImageRecord>, class_vocabulary: Vec<String>) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut by_loc: HashMap<String, Vec<ImageRecord>> = HashMap::new();
        for r in records {
            if !by_loc.contains_key(&r.location_id) {
                order.push(r.location_id.clone());
            }
            by_loc.entry(r.location_id.clone()).or_default().push(r);
        }
        let groups = order
            .into_iter()
            .map(|loc| {
                let recs = by_loc.remove(&loc).expect("present");
                TemporalGroup::new(loc, recs)
            })
            .collect::<Result<Vec<_>>>()?;
        Manifest::new(groups, class_vocabulary)
    }

    pub fn groups(&self) -> &[TemporalGroup] {
        &self.groups
    }

    pub fn group(&self, id: GroupId) -> &TemporalGroup {
        &self.groups[id.0 as usize]
    }

    pub fn class_vocabulary(&self) -> &[String] {
        &self.class_vocabulary
    }

    pub fn num_classes(&self) -> usize {
        self.class_vocabulary.len()
    }

    pub fn num_records(&self) -> usize {
        self.groups.iter().map(|g| g.records.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Every record with the id of its group, in manifest order.
    pub fn records(&self) -> impl Iterator<Item = (GroupId, &ImageRecord)> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(gi, g)| g.records.iter().map(move |r| (GroupId(gi as u32), r)))
    }

    /// Record counts per class index; unlabeled records are ignored.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_vocabulary.len()];
        for (_, r) in self.records() {
            if let Some(c) = r.class_label {
                counts[c] += 1;
            }
        }
        counts
    }

    /// Keeps only the records accepted by `keep`; groups left empty are dropped.
    pub fn filter_records(&self, mut keep: impl FnMut(&ImageRecord) -> bool) -> Manifest {
        let groups = self
            .groups
            .iter()
            .filter_map(|g| {
                let records: Vec<_> = g.records.iter().filter(|r| keep(r)).cloned().collect();
                (!records.is_empty()).then(|| TemporalGroup {
                    location_id: g.location_id.clone(),
                    records,
                })
            })
            .collect();
        Manifest {
            groups,
            class_vocabulary: self.class_vocabulary.clone(),
        }
    }

    /// Keeps whole groups accepted by `keep`.
    pub fn filter_groups(&self, mut keep: impl FnMut(usize, &TemporalGroup) -> bool) -> Manifest {
        Manifest {
            groups: self
                .groups
                .iter()
                .enumerate()
                .filter(|(i, g)| keep(*i, g))
                .map(|(_, g)| g.clone())
                .collect(),
            class_vocabulary: self.class_vocabulary.clone(),
        }
    }

    pub fn require_labels(&self) -> Result<()> {
        match self.records().find(|(_, r)| r.class_label.is_none()) {
            Some((_, r)) => Err(Error::Precondition(format!(
                "record `{}` has no class label",
                r.image_id
            ))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
pub(crate) fn record(id: &str, loc: &str, ts: i64, label: Option<usize>) -> ImageRecord {
    ImageRecord {
        image_id: id.into(),
        location_id: loc.into(),
        timestamp: ts,
        path: format!("{id}.png"),
        class_label: label,
        width: 32,
        height: 32,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_sorts_by_time_then_id() {
        let g = TemporalGroup::new(
            "L",
            vec![
                record("c", "L", 5, None),
                record("b", "L", 1, None),
                record("a", "L", 5, None),
            ],
        )
        .unwrap();
        let ids: Vec<_> = g.records().iter().map(|r| r.image_id.as_str()).collect();
        assert_eq!(ids, ["b", "a", "c"]);
    }

    #[test]
    fn group_rejects_foreign_and_empty() {
        assert!(TemporalGroup::new("L", vec![]).is_err());
        assert!(TemporalGroup::new("L", vec![record("a", "M", 0, None)]).is_err());
    }

    #[test]
    fn manifest_invariants() {
        let dup = Manifest::from_records(
            vec![record("a", "L", 0, None), record("a", "M", 0, None)],
            vec![],
        );
        assert!(matches!(dup, Err(Error::Validation(_))));
        let bad_label = Manifest::from_records(vec![record("a", "L", 0, Some(2))], vec!["x".into()]);
        assert!(matches!(bad_label, Err(Error::Validation(_))));
        let m = Manifest::from_records(
            vec![
                record("a", "L", 0, Some(0)),
                record("b", "M", 0, Some(1)),
                record("c", "L", 1, Some(1)),
            ],
            vec!["x".into(), "y".into()],
        )
        .unwrap();
        assert_eq!(m.groups().len(), 2);
        assert_eq!(m.class_counts(), vec![1, 2]);
        assert_eq!(m.groups()[0].location_id(), "L");
    }
}
