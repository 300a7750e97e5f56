use rand::seq::index;
use rand::Rng;

use super::{ImageRecord, Manifest, TemporalGroup};
use crate::{Error, Result};

/// Draws a query uniformly from `group` and pairs it with a temporal positive.
pub fn sample_temporal_pair<'g, R: Rng + ?Sized>(
    group: &'g TemporalGroup,
    rng: &mut R,
) -> Result<(&'g ImageRecord, &'g ImageRecord)> {
    if group.is_empty() {
        return Err(Error::Precondition("temporal group is empty".into()));
    }
    let query = rng.random_range(0..group.len());
    sample_temporal_pair_for(group, query, rng)
}

/// Pairs the record at `query` with a uniformly drawn record of the same
/// location taken at a different timestamp.
///
/// If every other record shares the query timestamp, any other record is
/// eligible; a single-record group yields `(r, r)`.
pub fn sample_temporal_pair_for<'g, R: Rng + ?Sized>(
    group: &'g TemporalGroup,
    query: usize,
    rng: &mut R,
) -> Result<(&'g ImageRecord, &'g ImageRecord)> {
    let records = group.records();
    if records.is_empty() {
        return Err(Error::Precondition("temporal group is empty".into()));
    }
    let q = records.get(query).ok_or_else(|| {
        Error::Precondition(format!(
            "query index {query} out of range for group of {}",
            records.len()
        ))
    })?;
    let mut candidates: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].timestamp != q.timestamp)
        .collect();
    if candidates.is_empty() {
        candidates = (0..records.len()).filter(|&i| i != query).collect();
    }
    if candidates.is_empty() {
        return Ok((q, q));
    }
    let k = candidates[rng.random_range(0..candidates.len())];
    Ok((q, &records[k]))
}

/// Class-stratified subset of the records: each class keeps
/// `round(fraction * n_c)` records, never fewer than one.
pub fn stratified_label_subset<R: Rng + ?Sized>(
    manifest: &Manifest,
    fraction: f64,
    rng: &mut R,
) -> Result<Manifest> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Precondition(format!(
            "label fraction must lie in (0, 1], got {fraction}"
        )));
    }
    manifest.require_labels()?;
    let mut per_class: Vec<Vec<&str>> = vec![Vec::new(); manifest.num_classes()];
    for (_, r) in manifest.records() {
        per_class[r.class_label.expect("checked")].push(&r.image_id);
    }
    let mut keep = std::collections::HashSet::new();
    for ids in &per_class {
        let n = ids.len();
        if n == 0 {
            continue;
        }
        let k = ((fraction * n as f64).round() as usize).clamp(1, n);
        for i in index::sample(rng, n, k) {
            keep.insert(ids[i].to_owned());
        }
    }
    Ok(manifest.filter_records(|r| keep.contains(&r.image_id)))
}

/// Splits whole locations into `(train, holdout)`. Locations are stratified
/// by the label of their first record (unlabeled locations form their own
/// stratum); each stratum with at least two locations sends
/// `round(holdout_fraction * n)` of them, at least one and never all, to
/// the holdout side. No location appears on both sides.
pub fn split_by_location<R: Rng + ?Sized>(
    manifest: &Manifest,
    holdout_fraction: f64,
    rng: &mut R,
) -> Result<(Manifest, Manifest)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Precondition(format!(
            "holdout fraction must lie in (0, 1), got {holdout_fraction}"
        )));
    }
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); manifest.num_classes() + 1];
    for (g, group) in manifest.groups().iter().enumerate() {
        let key = group.records()[0].class_label.unwrap_or(manifest.num_classes());
        strata[key].push(g);
    }
    let mut holdout = vec![false; manifest.groups().len()];
    for members in strata.iter().filter(|m| m.len() >= 2) {
        let n = members.len();
        let k = ((holdout_fraction * n as f64).round() as usize).clamp(1, n - 1);
        for i in index::sample(rng, n, k) {
            holdout[members[i]] = true;
        }
    }
    Ok((
        manifest.filter_groups(|g, _| !holdout[g]),
        manifest.filter_groups(|g, _| holdout[g]),
    ))
}
