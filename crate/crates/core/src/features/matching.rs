use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeatureError, FeatureMatch, Keypoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    /// Best/second-best distance ratio a match must stay below.
    pub ratio: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self { ratio: 0.8 }
    }
}

/// Nearest and second-nearest candidate for one descriptor.
#[derive(Clone, Copy)]
struct Nearest {
    index: usize,
    best: f64,
    second: f64,
}

impl Nearest {
    fn new() -> Self {
        Self {
            index: usize::MAX,
            best: f64::INFINITY,
            second: f64::INFINITY,
        }
    }

    /// Strictly-smaller comparisons keep the lowest index among equals.
    fn offer(&mut self, index: usize, d2: f64) {
        if d2 < self.best {
            self.second = self.best;
            self.best = d2;
            self.index = index;
        } else if d2 < self.second {
            self.second = d2;
        }
    }

    fn ratio(&self) -> f64 {
        if self.second.is_infinite() {
            0.0
        } else if self.second == 0.0 {
            1.0
        } else {
            (self.best / self.second).sqrt()
        }
    }
}

fn dist2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum()
}

/// Mutual nearest neighbours under L2 descriptor distance, kept when the
/// ratio test passes from both sides. Confidence is `1 − ratio` using the
/// larger of the two ratios, so the result is symmetric in its arguments.
/// Output follows the order of `a`.
pub fn match_features(
    a: &[Keypoint],
    b: &[Keypoint],
    config: &MatcherConfig,
) -> Result<Vec<FeatureMatch>, FeatureError> {
    if a.is_empty() || b.is_empty() {
        return Err(FeatureError::EmptyKeypoints);
    }
    let dist: Vec<Vec<f64>> = a
        .par_iter()
        .map(|ka| b.iter().map(|kb| dist2(&ka.descriptor, &kb.descriptor)).collect())
        .collect();

    let fwd: Vec<Nearest> = dist
        .iter()
        .map(|row| {
            let mut n = Nearest::new();
            row.iter().enumerate().for_each(|(j, &d)| n.offer(j, d));
            n
        })
        .collect();
    let mut bwd = vec![Nearest::new(); b.len()];
    for (i, row) in dist.iter().enumerate() {
        for (j, &d) in row.iter().enumerate() {
            bwd[j].offer(i, d);
        }
    }

    Ok(fwd
        .iter()
        .enumerate()
        .filter_map(|(i, f)| {
            let j = f.index;
            let back = &bwd[j];
            if back.index != i {
                return None;
            }
            let r = f.ratio().max(back.ratio());
            (r < config.ratio).then(|| FeatureMatch {
                pixel_query: a[i].position,
                pixel_ref: b[j].position,
                confidence: (1.0 - r).clamp(0.0, 1.0),
            })
        })
        .collect())
}
