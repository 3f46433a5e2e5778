//! Box matching and the rare-object detection metrics.
//!
//! * ADA: detected eggs over actual eggs, pooled over all frames.
//! * AMER: false alarms over actual eggs, averaged per frame.
//! * AND: discarded non-eggs over all non-eggs, averaged per frame.
//!
//! All three are percentages.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::annotations::{AnnotationSet, BoundingBox};
use crate::error::{Error, Result};

pub const DEFAULT_IOU_MIN: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Matching {
    /// `(prediction, truth)` index pairs.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_truth: Vec<usize>,
}

/// Greedy one-to-one matching by descending IoU. Ties go to the lower
/// prediction index, then the lower truth index.
pub fn match_boxes(predicted: &[BoundingBox], truth: &[BoundingBox], iou_min: f64) -> Matching {
    let mut candidates: Vec<(f64, usize, usize)> = predicted
        .iter()
        .enumerate()
        .flat_map(|(p, pb)| truth.iter().enumerate().map(move |(t, tb)| (pb.iou(tb), p, t)))
        .filter(|&(iou, _, _)| iou >= iou_min)
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; predicted.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut pairs = Vec::new();
    for (_, p, t) in candidates {
        if !pred_used[p] && !truth_used[t] {
            pred_used[p] = true;
            truth_used[t] = true;
            pairs.push((p, t));
        }
    }
    Matching {
        pairs,
        unmatched_pred: (0..predicted.len()).filter(|&i| !pred_used[i]).collect(),
        unmatched_truth: (0..truth.len()).filter(|&i| !truth_used[i]).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameTally {
    pub frame_id: String,
    pub eggs_actual: usize,
    pub eggs_detected: usize,
    pub false_alarms: usize,
    /// `None` when the frame's non-egg count is unknown.
    pub non_eggs_total: Option<usize>,
}

impl FrameTally {
    pub fn non_eggs_discarded(&self) -> Option<usize> {
        self.non_eggs_total.map(|n| n.saturating_sub(self.false_alarms))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub per_frame: Vec<FrameTally>,
    pub ada: f64,
    /// Per-frame average over frames with at least one egg.
    pub amer: f64,
    /// Total false alarms over total eggs.
    pub amer_micro: f64,
    /// `None` when no frame has a non-egg count.
    pub and: Option<f64>,
    pub zero_egg_frames: usize,
    pub zero_egg_false_alarms: usize,
    pub iou_min: f64,
}

impl EvalResult {
    pub fn from_tallies(per_frame: Vec<FrameTally>, iou_min: f64) -> Result<Self> {
        if per_frame.is_empty() {
            return Err(Error::Empty("evaluation frames"));
        }
        let eggs: usize = per_frame.iter().map(|f| f.eggs_actual).sum();
        let detected: usize = per_frame.iter().map(|f| f.eggs_detected).sum();
        let with_eggs: Vec<&FrameTally> = per_frame.iter().filter(|f| f.eggs_actual > 0).collect();
        let fa_with_eggs: usize = with_eggs.iter().map(|f| f.false_alarms).sum();
        let pct = |num: f64, den: f64| if den > 0.0 { 100.0 * num / den } else { 0.0 };
        let amer = if with_eggs.is_empty() {
            0.0
        } else {
            with_eggs
                .iter()
                .map(|f| pct(f.false_alarms as f64, f.eggs_actual as f64))
                .sum::<f64>()
                / with_eggs.len() as f64
        };
        let and_terms: Vec<f64> = per_frame
            .iter()
            .filter_map(|f| match (f.non_eggs_total, f.non_eggs_discarded()) {
                (Some(total), Some(kept)) if total > 0 => Some(pct(kept as f64, total as f64)),
                _ => None,
            })
            .collect();
        let and = (!and_terms.is_empty()).then(|| and_terms.iter().sum::<f64>() / and_terms.len() as f64);
        let zero: Vec<&FrameTally> = per_frame.iter().filter(|f| f.eggs_actual == 0).collect();
        Ok(Self {
            ada: if eggs > 0 { pct(detected as f64, eggs as f64) } else { 100.0 },
            amer,
            amer_micro: pct(fa_with_eggs as f64, eggs as f64),
            and,
            zero_egg_frames: zero.len(),
            zero_egg_false_alarms: zero.iter().map(|f| f.false_alarms).sum(),
            iou_min,
            per_frame,
        })
    }

    pub fn summary(&self, label: impl Into<String>) -> SummaryRow {
        SummaryRow {
            label: label.into(),
            ada: self.ada,
            amer: self.amer,
            and: self.and,
        }
    }

    /// Aligned text table: a summary line followed by per-frame tallies.
    pub fn to_table(&self, label: &str) -> String {
        let mut out = format!("{:<12} {:>8} {:>8} {:>8}\n", "model", "ADA(%)", "AMER(%)", "AND(%)");
        let and = self.and.map_or("-".to_string(), |v| format!("{v:.2}"));
        out += &format!("{:<12} {:>8.2} {:>8.2} {:>8}\n", label, self.ada, self.amer, and);
        out += &format!("amer_micro {:.2}; zero-egg frames {} with {} false alarms\n\n", self.amer_micro, self.zero_egg_frames, self.zero_egg_false_alarms);
        out += &format!(
            "{:<16} {:>6} {:>8} {:>6} {:>8} {:>9}\n",
            "frame", "eggs", "detected", "fa", "non_eggs", "discarded"
        );
        for f in &self.per_frame {
            let opt = |v: Option<usize>| v.map_or("-".to_string(), |n| n.to_string());
            out += &format!(
                "{:<16} {:>6} {:>8} {:>6} {:>8} {:>9}\n",
                f.frame_id,
                f.eggs_actual,
                f.eggs_detected,
                f.false_alarms,
                opt(f.non_eggs_total),
                opt(f.non_eggs_discarded())
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_id,eggs_actual,eggs_detected,false_alarms,non_eggs_total,non_eggs_discarded\n");
        for f in &self.per_frame {
            let opt = |v: Option<usize>| v.map_or(String::new(), |n| n.to_string());
            out += &format!(
                "{},{},{},{},{},{}\n",
                f.frame_id,
                f.eggs_actual,
                f.eggs_detected,
                f.false_alarms,
                opt(f.non_eggs_total),
                opt(f.non_eggs_discarded())
            );
        }
        out
    }
}

/// Scores `predicted` against `truth`. Every predicted frame needs a truth
/// record; `non_eggs` gives per-frame distractor counts for AND.
pub fn evaluate(
    predicted: &AnnotationSet,
    truth: &AnnotationSet,
    non_eggs: &BTreeMap<String, usize>,
    iou_min: f64,
) -> Result<EvalResult> {
    if !(0.0..=1.0).contains(&iou_min) {
        return Err(Error::InvalidArgument(format!("iou_min must be in [0, 1], got {iou_min}")));
    }
    let per_frame = predicted
        .0
        .iter()
        .map(|frame| {
            let gt = truth
                .get(&frame.frame_id)
                .ok_or_else(|| Error::InvalidArgument(format!("no ground truth for frame {:?}", frame.frame_id)))?;
            let m = match_boxes(&frame.boxes, &gt.boxes, iou_min);
            Ok(FrameTally {
                frame_id: frame.frame_id.clone(),
                eggs_actual: gt.boxes.len(),
                eggs_detected: m.pairs.len(),
                false_alarms: m.unmatched_pred.len(),
                non_eggs_total: non_eggs.get(&frame.frame_id).copied(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalResult::from_tallies(per_frame, iou_min)
}

/// One headline line in the `label & ADA & AMER & AND` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub label: String,
    pub ada: f64,
    pub amer: f64,
    pub and: Option<f64>,
}

impl fmt::Display for SummaryRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}& {:.2}& {:.2}& ", self.label, self.ada, self.amer)?;
        match self.and {
            Some(v) => write!(f, "{v:.2}"),
            None => write!(f, "-"),
        }
    }
}

impl std::str::FromStr for SummaryRow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let fields: Vec<&str> = s.split('&').map(str::trim).collect();
        let [label, ada, amer, and] = fields[..] else {
            return Err(Error::InvalidArgument(format!("expected 4 '&'-separated fields in {s:?}")));
        };
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|e| Error::InvalidArgument(format!("bad number {v:?}: {e}")))
        };
        Ok(Self {
            label: label.to_string(),
            ada: num(ada)?,
            amer: num(amer)?,
            and: if and == "-" { None } else { Some(num(and)?) },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h)
    }

    #[test]
    fn identical_and_disjoint() {
        let set = vec![b(0.0, 0.0, 5.0, 5.0), b(10.0, 10.0, 5.0, 5.0)];
        let m = match_boxes(&set, &set, DEFAULT_IOU_MIN);
        assert_eq!(m.pairs, vec![(0, 0), (1, 1)]);
        assert!(m.unmatched_pred.is_empty() && m.unmatched_truth.is_empty());
        let other = vec![b(50.0, 50.0, 5.0, 5.0)];
        assert!(match_boxes(&set, &other, DEFAULT_IOU_MIN).pairs.is_empty());
    }

    #[test]
    fn two_predictions_one_truth() {
        let truth = vec![b(0.0, 0.0, 10.0, 10.0)];
        let preds = vec![b(3.0, 0.0, 10.0, 10.0), b(1.0, 0.0, 10.0, 10.0)];
        let m = match_boxes(&preds, &truth, DEFAULT_IOU_MIN);
        assert_eq!(m.pairs, vec![(1, 0)]);
        assert_eq!(m.unmatched_pred, vec![0]);
    }

    #[test]
    fn hand_worked_frame() {
        let truth = AnnotationSet(vec![crate::annotations::FrameAnnotations::new(
            "f",
            vec![b(0.0, 0.0, 10.0, 10.0), b(40.0, 40.0, 10.0, 10.0)],
        )]);
        let pred = AnnotationSet(vec![crate::annotations::FrameAnnotations::new(
            "f",
            vec![b(1.0, 1.0, 10.0, 10.0), b(80.0, 80.0, 10.0, 10.0)],
        )]);
        let non_eggs = BTreeMap::from([("f".to_string(), 50)]);
        let r = evaluate(&pred, &truth, &non_eggs, DEFAULT_IOU_MIN).unwrap();
        assert_eq!((r.ada, r.amer, r.and), (50.0, 50.0, Some(98.0)));
    }

    #[test]
    fn perfect_detector() {
        let truth = AnnotationSet(vec![crate::annotations::FrameAnnotations::new(
            "f",
            vec![b(0.0, 0.0, 10.0, 10.0)],
        )]);
        let non_eggs = BTreeMap::from([("f".to_string(), 80)]);
        let r = evaluate(&truth, &truth, &non_eggs, DEFAULT_IOU_MIN).unwrap();
        assert_eq!((r.ada, r.amer, r.and), (100.0, 0.0, Some(100.0)));
    }

    #[test]
    fn zero_egg_frames_are_separate() {
        let tallies = vec![
            FrameTally {
                frame_id: "a".into(),
                eggs_actual: 2,
                eggs_detected: 2,
                false_alarms: 1,
                non_eggs_total: Some(10),
            },
            FrameTally {
                frame_id: "b".into(),
                eggs_actual: 0,
                eggs_detected: 0,
                false_alarms: 3,
                non_eggs_total: Some(10),
            },
        ];
        let r = EvalResult::from_tallies(tallies, DEFAULT_IOU_MIN).unwrap();
        assert_eq!(r.amer, 50.0);
        assert_eq!((r.zero_egg_frames, r.zero_egg_false_alarms), (1, 3));
        assert_eq!(r.and, Some((90.0 + 70.0) / 2.0));
    }

    #[test]
    fn missing_truth_is_an_error() {
        let pred = AnnotationSet(vec![crate::annotations::FrameAnnotations::new("x", vec![])]);
        assert!(evaluate(&pred, &AnnotationSet::default(), &BTreeMap::new(), 0.3).is_err());
    }

    #[test]
    fn summary_row_round_trip() {
        let row: SummaryRow = "1& 94.33& 18.18& 99.77".parse().unwrap();
        assert_eq!((row.ada, row.amer, row.and), (94.33, 18.18, Some(99.77)));
        assert_eq!(row.to_string(), "1& 94.33& 18.18& 99.77");
        assert!("1& 2".parse::<SummaryRow>().is_err());
    }
}
