use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Default absolute tolerance on each class proportion.
pub const DEFAULT_PROPORTION_TOLERANCE: f64 = 0.03;

/// Weight of the relative overshoot past the target count in the greedy
/// score, next to the L1 proportion divergence.
const OVERSHOOT_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageCounts {
    pub image_id: String,
    /// Objects per class.
    pub counts: Vec<u64>,
}

impl ImageCounts {
    fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatriochkaLevel {
    pub fraction: f64,
    pub target_count: f64,
    /// In input order.
    pub image_ids: Vec<String>,
    pub class_counts: Vec<u64>,
    pub total_count: u64,
    /// `class proportion - full-set proportion`, per class.
    pub proportion_deviation: Vec<f64>,
    /// Classes whose absolute deviation exceeds the tolerance.
    pub violated_classes: Vec<usize>,
}

impl MatriochkaLevel {
    /// `total_count / target_count - 1`.
    pub fn count_error(&self) -> f64 {
        self.total_count as f64 / self.target_count - 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatriochkaOutcome {
    /// One level per requested fraction, in request order; every level
    /// contains the next one.
    pub levels: Vec<MatriochkaLevel>,
    pub warnings: Vec<String>,
}

fn proportions(counts: &[u64]) -> Vec<f64> {
    let t: u64 = counts.iter().sum();
    if t == 0 {
        return vec![0.0; counts.len()];
    }
    counts.iter().map(|c| *c as f64 / t as f64).collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

struct Greedy<'a> {
    images: &'a [ImageCounts],
    reference: Vec<f64>,
    chosen: Vec<bool>,
    counts: Vec<u64>,
    total: u64,
}

impl Greedy<'_> {
    fn add(&mut self, i: usize) {
        self.chosen[i] = true;
        for (c, v) in self.counts.iter_mut().zip(&self.images[i].counts) {
            *c += v;
        }
        self.total += self.images[i].total();
    }

    fn score(&self, i: usize, target: f64) -> f64 {
        let mut counts = self.counts.clone();
        for (c, v) in counts.iter_mut().zip(&self.images[i].counts) {
            *c += v;
        }
        let total = (self.total + self.images[i].total()) as f64;
        l1(&proportions(&counts), &self.reference) + OVERSHOOT_WEIGHT * ((total - target) / target).max(0.0)
    }

    /// Adds images until the total reaches `target`, stopping early if the
    /// best addition would land further from the target than staying put.
    fn grow_to(&mut self, target: f64) {
        while (self.total as f64) < target {
            let best = (0..self.images.len())
                .filter(|&i| !self.chosen[i] && self.images[i].total() > 0)
                .map(|i| (i, self.score(i, target)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let Some((i, _)) = best else { break };
            let after = (self.total + self.images[i].total()) as f64;
            if after - target > target - self.total as f64 && self.total > 0 {
                break;
            }
            self.add(i);
        }
    }
}

/// Nested whole-image subsets for descending `fractions` of the observable
/// count. The smallest subset is built first: a random seed image, then
/// greedy additions minimising the L1 distance to the full-set class
/// proportions plus an overshoot penalty. Each larger subset grows from the
/// previous one. A fraction of 1 selects every image.
pub fn matriochka_sample(
    images: &[ImageCounts],
    fractions: &[f64],
    tolerance: f64,
    rng: &mut impl Rng,
) -> Result<MatriochkaOutcome> {
    if fractions.is_empty() {
        return Err(Error::Validation("no target fractions".into()));
    }
    if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) || fractions.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Validation(format!(
            "target fractions {fractions:?} must be strictly descending in (0, 1]"
        )));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::Validation(format!("tolerance {tolerance} is negative")));
    }
    let k = images.first().map_or(0, |i| i.counts.len());
    if images.iter().any(|i| i.counts.len() != k) {
        return Err(Error::Validation("images disagree on the number of classes".into()));
    }
    let mut full = vec![0u64; k];
    for img in images {
        for (t, c) in full.iter_mut().zip(&img.counts) {
            *t += c;
        }
    }
    let grand: u64 = full.iter().sum();
    if grand == 0 {
        return Err(Error::Validation("dataset has no observables to sample".into()));
    }
    let reference = proportions(&full);
    let mut g = Greedy {
        images,
        reference: reference.clone(),
        chosen: vec![false; images.len()],
        counts: vec![0; k],
        total: 0,
    };

    let smallest = *fractions.last().expect("non-empty") * grand as f64;
    if smallest < grand as f64 {
        let fitting: Vec<usize> = (0..images.len())
            .filter(|&i| images[i].total() > 0 && images[i].total() as f64 <= smallest)
            .collect();
        let pool: Vec<usize> = if fitting.is_empty() {
            (0..images.len()).filter(|&i| images[i].total() > 0).collect()
        } else {
            fitting
        };
        g.add(pool[rng.random_range(0..pool.len())]);
    }

    let mut levels = Vec::with_capacity(fractions.len());
    let mut warnings = Vec::new();
    for &f in fractions.iter().rev() {
        let target = f * grand as f64;
        if f >= 1.0 {
            for i in 0..images.len() {
                if !g.chosen[i] {
                    g.add(i);
                }
            }
        } else {
            g.grow_to(target);
        }
        let deviation: Vec<f64> = proportions(&g.counts).iter().zip(&reference).map(|(a, b)| a - b).collect();
        let violated: Vec<usize> = (0..k).filter(|&c| deviation[c].abs() > tolerance).collect();
        if !violated.is_empty() {
            warnings.push(format!(
                "fraction {f}: class proportions outside +-{tolerance} for classes {violated:?}"
            ));
        }
        let level = MatriochkaLevel {
            fraction: f,
            target_count: target,
            image_ids: (0..images.len())
                .filter(|&i| g.chosen[i])
                .map(|i| images[i].image_id.clone())
                .collect(),
            class_counts: g.counts.clone(),
            total_count: g.total,
            proportion_deviation: deviation,
            violated_classes: violated,
        };
        if level.count_error().abs() > 0.1 {
            warnings.push(format!(
                "fraction {f}: {} observables against a target of {target:.0}",
                level.total_count
            ));
        }
        levels.push(level);
    }
    levels.reverse();
    Ok(MatriochkaOutcome { levels, warnings })
}
