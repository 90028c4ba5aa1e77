//! Segmentation metrics: confusion counts, mIoU / mAcc, frequency-grouped
//! accuracy, and remapping of fine prompt predictions onto target classes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ignored label in both ground truth and predictions.
pub const IGNORE: i64 = -1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMapEntry {
    pub target: String,
    pub prompts: Vec<String>,
}

/// Groups fine prompts under target classes. Prediction index `k` addresses
/// the `k`-th prompt of the flattened list (entries in order).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub entries: Vec<LabelMapEntry>,
}

impl LabelMap {
    pub fn new(entries: Vec<LabelMapEntry>) -> Result<Self> {
        let map = Self { entries };
        map.validate()?;
        Ok(map)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: LabelMap = serde_json::from_str(&text)
            .map_err(|e| Error::malformed("label map", e.to_string()))?;
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidLabelMap("no entries".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if e.prompts.is_empty() {
                return Err(Error::InvalidLabelMap(format!(
                    "target {:?} has no prompts",
                    e.target
                )));
            }
            for p in &e.prompts {
                if !seen.insert(p.as_str()) {
                    return Err(Error::InvalidLabelMap(format!(
                        "prompt {p:?} appears in more than one entry"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn targets(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.target.clone()).collect()
    }

    /// Flattened prompt list, the order prediction indices refer to.
    pub fn prompts(&self) -> Vec<String> {
        self.entries
            .iter()
            .flat_map(|e| e.prompts.iter().cloned())
            .collect()
    }

    fn target_of_prompt(&self) -> Vec<i64> {
        self.entries
            .iter()
            .enumerate()
            .flat_map(|(t, e)| std::iter::repeat_n(t as i64, e.prompts.len()))
            .collect()
    }
}

/// Maps prompt-index predictions to target-class indices; `-1` passes through.
pub fn remap(pred: &[i64], map: &LabelMap) -> Result<Vec<i64>> {
    let lut = map.target_of_prompt();
    pred.iter()
        .map(|&p| {
            if p == IGNORE {
                Ok(IGNORE)
            } else {
                usize::try_from(p)
                    .ok()
                    .and_then(|i| lut.get(i).copied())
                    .ok_or(Error::UnmappedPrompt(p))
            }
        })
        .collect()
}

/// Square confusion counts, rows = ground truth, columns = prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Confusion {
    num_classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn from_counts(num_classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != num_classes * num_classes {
            return Err(Error::ShapeMismatch(format!(
                "{} counts for {num_classes} classes",
                counts.len()
            )));
        }
        Ok(Self {
            num_classes,
            counts,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn gt_count(&self, c: usize) -> u64 {
        (0..self.num_classes).map(|p| self.get(c, p)).sum()
    }

    pub fn pred_count(&self, c: usize) -> u64 {
        (0..self.num_classes).map(|g| self.get(g, c)).sum()
    }

    /// Ground-truth point count per class.
    pub fn class_frequencies(&self) -> Vec<u64> {
        (0..self.num_classes).map(|c| self.gt_count(c)).collect()
    }
}

pub fn confusion(gt: &[i64], pred: &[i64], num_classes: usize) -> Result<Confusion> {
    if gt.len() != pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ground-truth labels vs {} predictions",
            gt.len(),
            pred.len()
        )));
    }
    let check = |l: i64| -> Result<Option<usize>> {
        if l == IGNORE {
            Ok(None)
        } else if l >= 0 && (l as usize) < num_classes {
            Ok(Some(l as usize))
        } else {
            Err(Error::LabelOutOfRange {
                label: l,
                num_classes,
            })
        }
    };
    let mut counts = vec![0u64; num_classes * num_classes];
    for (&g, &p) in gt.iter().zip(pred) {
        let (g, p) = (check(g)?, check(p)?);
        if let (Some(g), Some(p)) = (g, p) {
            counts[g * num_classes + p] += 1;
        }
    }
    Confusion::from_counts(num_classes, counts)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub miou: f64,
    pub macc: f64,
    /// `None` for classes excluded from the mean.
    pub iou: Vec<Option<f64>>,
    pub acc: Vec<Option<f64>>,
}

/// Per-class IoU `TP / (TP + FP + FN)` and accuracy `TP / (TP + FN)`.
///
/// A class with neither ground truth nor predictions is excluded from both
/// means. A class with predictions but no ground truth has IoU 0 and no
/// accuracy. Means of empty sets are NaN.
pub fn miou_macc(conf: &Confusion) -> Metrics {
    let n = conf.num_classes();
    let mut iou = Vec::with_capacity(n);
    let mut acc = Vec::with_capacity(n);
    for c in 0..n {
        let tp = conf.get(c, c) as f64;
        let gt = conf.gt_count(c) as f64;
        let pred = conf.pred_count(c) as f64;
        let union = gt + pred - tp;
        iou.push((union > 0.0).then(|| tp / union));
        acc.push((gt > 0.0).then(|| tp / gt));
    }
    Metrics {
        miou: mean_defined(&iou),
        macc: mean_defined(&acc),
        iou,
        acc,
    }
}

fn mean_defined(v: &[Option<f64>]) -> f64 {
    let vals: Vec<f64> = v.iter().flatten().copied().collect();
    if vals.is_empty() {
        f64::NAN
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Classes ordered by descending frequency (ties by class index), split into
/// consecutive groups of `group_size`; returns each group's mean accuracy
/// (`None` when no class in the group has ground truth).
pub fn grouped_macc(
    conf: &Confusion,
    class_frequencies: &[u64],
    group_size: usize,
) -> Result<Vec<Option<f64>>> {
    if group_size == 0 {
        return Err(Error::InvalidConfig("group_size must be >= 1".into()));
    }
    if class_frequencies.len() != conf.num_classes() {
        return Err(Error::ShapeMismatch(format!(
            "{} frequencies for {} classes",
            class_frequencies.len(),
            conf.num_classes()
        )));
    }
    let acc = miou_macc(conf).acc;
    let mut order: Vec<usize> = (0..conf.num_classes()).collect();
    order.sort_by(|&a, &b| {
        class_frequencies[b]
            .cmp(&class_frequencies[a])
            .then(a.cmp(&b))
    });
    Ok(order
        .chunks(group_size)
        .map(|g| {
            let vals: Vec<Option<f64>> = g.iter().map(|&c| acc[c]).collect();
            let m = mean_defined(&vals);
            (!m.is_nan()).then_some(m)
        })
        .collect())
}
