//! Dice and Jaccard scores from confusion counts, and the protocol of
//! stretching low-resolution predictions to ground-truth resolution.
//!
//! For class `i`, with `p_ij` the number of pixels predicted `i` and labelled `j`:
//!
//! ```text
//! jaccard_i = p_ii / (Σ_j p_ij + Σ_j p_ji − p_ii)
//! dice_i    = 2·p_ii / (Σ_j p_ij + Σ_j p_ji)
//! ```
//!
//! A class absent from both prediction and ground truth scores 1.0.
//! Means run over the foreground classes `1..K`; background (class 0) is
//! reported per class but not averaged in.

use crate::error::{shape_err, Error, Result};
use crate::ops::sigmoid;
use crate::resample::resize_bilinear;
use crate::scalar::Scalar;
use crate::tensor::{Mask, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    num_classes: usize,
    /// Row-major: `counts[i * K + j]` = predicted `i`, labelled `j`.
    counts: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(num_classes: usize) -> Self {
        ConfusionCounts {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Pixels predicted `pred` and labelled `label`.
    pub fn get(&self, pred: usize, label: usize) -> u64 {
        self.counts[pred * self.num_classes + label]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|j| self.get(class, j)).sum()
    }

    pub fn labelled(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|j| self.get(j, class)).sum()
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        assert_eq!(self.num_classes, other.num_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Per-pixel confusion counts of a predicted mask against ground truth.
pub fn confusion(pred: &Mask, gt: &Mask, num_classes: usize) -> Result<ConfusionCounts> {
    if pred.dims() != gt.dims() {
        return Err(shape_err!(
            "prediction {:?} and ground truth {:?} differ in shape",
            pred.dims(),
            gt.dims()
        ));
    }
    let mut cc = ConfusionCounts::new(num_classes);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        let (p, g) = (p as usize, g as usize);
        if p >= num_classes || g >= num_classes {
            return Err(Error::Domain(format!(
                "label {} outside {num_classes} classes",
                p.max(g)
            )));
        }
        cc.counts[p * num_classes + g] += 1;
    }
    Ok(cc)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub dice: Vec<f64>,
    pub jaccard: Vec<f64>,
    pub mean_dice: f64,
    pub mean_jaccard: f64,
    pub counts: ConfusionCounts,
}

/// Classes averaged into the mean scores.
fn scored_classes(num_classes: usize) -> std::ops::Range<usize> {
    if num_classes >= 2 {
        1..num_classes
    } else {
        0..num_classes
    }
}

fn mean(values: &[f64], range: std::ops::Range<usize>) -> f64 {
    let n = range.len();
    if n == 0 {
        return 0.0;
    }
    values[range].iter().sum::<f64>() / n as f64
}

pub fn dice_jaccard(counts: &ConfusionCounts) -> MetricsReport {
    let k = counts.num_classes;
    let mut dice = Vec::with_capacity(k);
    let mut jaccard = Vec::with_capacity(k);
    for i in 0..k {
        let tp = counts.get(i, i) as f64;
        let sum = (counts.predicted(i) + counts.labelled(i)) as f64;
        if sum == 0.0 {
            dice.push(1.0);
            jaccard.push(1.0);
        } else {
            dice.push(2.0 * tp / sum);
            jaccard.push(tp / (sum - tp));
        }
    }
    MetricsReport {
        mean_dice: mean(&dice, scored_classes(k)),
        mean_jaccard: mean(&jaccard, scored_classes(k)),
        dice,
        jaccard,
        counts: counts.clone(),
    }
}

impl MetricsReport {
    pub fn csv_header(num_classes: usize) -> String {
        let mut cols = vec!["mean_dice".to_string(), "mean_jaccard".to_string()];
        cols.extend((0..num_classes).map(|i| format!("dice_{i}")));
        cols.extend((0..num_classes).map(|i| format!("jaccard_{i}")));
        cols.join(",")
    }

    pub fn to_csv_row(&self) -> String {
        let mut cols = vec![self.mean_dice, self.mean_jaccard];
        cols.extend(&self.dice);
        cols.extend(&self.jaccard);
        cols.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(",")
    }
}

/// Scores over a batch, both averaged per image ("macro") and computed from
/// counts pooled over all images ("pooled").
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub macro_dice: Vec<f64>,
    pub macro_jaccard: Vec<f64>,
    pub macro_mean_dice: f64,
    pub macro_mean_jaccard: f64,
    pub pooled: MetricsReport,
    pub images: usize,
}

pub fn evaluate(pred: &Mask, gt: &Mask, num_classes: usize) -> Result<Evaluation> {
    if pred.dims() != gt.dims() {
        return Err(shape_err!(
            "prediction {:?} and ground truth {:?} differ in shape",
            pred.dims(),
            gt.dims()
        ));
    }
    let n = pred.batch();
    let mut pooled = ConfusionCounts::new(num_classes);
    let mut dice = vec![0.0; num_classes];
    let mut jaccard = vec![0.0; num_classes];
    for b in 0..n {
        let cc = confusion(&pred.batch_item(b)?, &gt.batch_item(b)?, num_classes)?;
        let r = dice_jaccard(&cc);
        for i in 0..num_classes {
            dice[i] += r.dice[i];
            jaccard[i] += r.jaccard[i];
        }
        pooled.merge(&cc);
    }
    for v in dice.iter_mut().chain(jaccard.iter_mut()) {
        *v /= n as f64;
    }
    Ok(Evaluation {
        macro_mean_dice: mean(&dice, scored_classes(num_classes)),
        macro_mean_jaccard: mean(&jaccard, scored_classes(num_classes)),
        macro_dice: dice,
        macro_jaccard: jaccard,
        pooled: dice_jaccard(&pooled),
        images: n,
    })
}

/// Number of label classes a model with `channels` logit channels predicts.
pub fn label_classes(channels: usize) -> usize {
    channels.max(2)
}

/// Hard labels from logits at their own resolution.
pub fn predict_mask<T: Scalar>(logits: &Tensor<T>) -> Result<Mask> {
    let (n, c, h, w) = logits.dims4()?;
    let probs = to_probabilities(logits)?;
    labels_from_probabilities(&probs, n, c, h, w)
}

fn to_probabilities<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c, _, _) = logits.dims4()?;
    if c == 1 {
        Ok(logits.map(sigmoid))
    } else {
        crate::ops::softmax_channel(logits)
    }
}

fn labels_from_probabilities<T: Scalar>(probs: &Tensor<T>, n: usize, c: usize, h: usize, w: usize) -> Result<Mask> {
    let hw = h * w;
    let p = probs.data();
    let half = T::from_f64_lossy(0.5);
    let mut out = Vec::with_capacity(n * hw);
    for b in 0..n {
        let off = b * c * hw;
        for px in 0..hw {
            let label = if c == 1 {
                (p[off + px] > half) as u8
            } else {
                let mut best = 0;
                for ch in 1..c {
                    if p[off + ch * hw + px] > p[off + best * hw + px] {
                        best = ch;
                    }
                }
                best as u8
            };
            out.push(label);
        }
    }
    Mask::new(n, h, w, out)
}

/// Stretches per-class probabilities to `target_h×target_w` by bilinear
/// interpolation, then takes the per-pixel argmax (single channel:
/// probability above 0.5).
pub fn upscale_prediction<T: Scalar>(logits: &Tensor<T>, target_h: usize, target_w: usize) -> Result<Mask> {
    let (n, c, h, w) = logits.dims4()?;
    if target_h < h || target_w < w {
        return Err(Error::Usage(format!(
            "cannot stretch {h}×{w} predictions down to {target_h}×{target_w}"
        )));
    }
    let probs = to_probabilities(logits)?;
    let probs = if (target_h, target_w) == (h, w) {
        probs
    } else {
        resize_bilinear(&probs, target_h, target_w)?
    };
    labels_from_probabilities(&probs, n, c, target_h, target_w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let m = Mask::from_rows(&[&[0, 1, 1], &[1, 0, 0]]).unwrap();
        let cc = confusion(&m, &m, 2).unwrap();
        assert_eq!(cc.get(0, 1) + cc.get(1, 0), 0);
        let r = dice_jaccard(&cc);
        assert_eq!(r.dice, vec![1.0, 1.0]);
        assert_eq!(r.jaccard, vec![1.0, 1.0]);
    }

    #[test]
    fn hand_counted_two_by_two() {
        let pred = Mask::from_rows(&[&[1, 0], &[0, 0]]).unwrap();
        let gt = Mask::from_rows(&[&[1, 1], &[0, 0]]).unwrap();
        let cc = confusion(&pred, &gt, 2).unwrap();
        assert_eq!(cc.get(1, 1), 1);
        assert_eq!(cc.get(0, 1), 1);
        assert_eq!(cc.get(0, 0), 2);
        assert_eq!(cc.get(1, 0), 0);
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let pred = Mask::from_rows(&[&[1, 0], &[0, 0]]).unwrap();
        let gt = Mask::from_rows(&[&[0, 0], &[0, 1]]).unwrap();
        let r = dice_jaccard(&confusion(&pred, &gt, 2).unwrap());
        assert_eq!(r.counts.get(1, 1), 0);
        assert_eq!(r.dice[1], 0.0);
        assert_eq!(r.jaccard[1], 0.0);
    }

    #[test]
    fn half_overlap_sets() {
        // |P| = |G| = 100, |P ∩ G| = 50 on a 1×200 strip
        let pred: Vec<u8> = (0..200).map(|i| (i < 100) as u8).collect();
        let gt: Vec<u8> = (0..200).map(|i| (50..150).contains(&i) as u8).collect();
        let r = dice_jaccard(
            &confusion(&Mask::new(1, 1, 200, pred).unwrap(), &Mask::new(1, 1, 200, gt).unwrap(), 2).unwrap(),
        );
        assert!((r.dice[1] - 0.5).abs() < 1e-15);
        assert!((r.jaccard[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn empty_class_scores_one() {
        let z = Mask::zeros(1, 3, 3);
        let r = dice_jaccard(&confusion(&z, &z, 2).unwrap());
        assert_eq!(r.dice[1], 1.0);
        assert_eq!(r.mean_jaccard, 1.0);
    }

    #[test]
    fn empty_prediction_against_nonempty_truth() {
        let z = Mask::zeros(1, 2, 2);
        let gt = Mask::from_rows(&[&[0, 1], &[1, 1]]).unwrap();
        let r = dice_jaccard(&confusion(&z, &gt, 2).unwrap());
        assert_eq!((r.dice[1], r.jaccard[1]), (0.0, 0.0));
    }

    #[test]
    fn confusion_errors() {
        let a = Mask::zeros(1, 2, 2);
        let b = Mask::zeros(1, 2, 3);
        assert!(matches!(confusion(&a, &b, 2), Err(Error::Shape(_))));
        let c = Mask::from_rows(&[&[0, 2], &[0, 0]]).unwrap();
        assert!(matches!(confusion(&c, &a, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn upscale_identity_and_constant() {
        let z = Tensor::<f64>::from_fn(&[1, 3, 4, 4], |i| ((i * 7919) % 13) as f64 - 6.0);
        assert_eq!(upscale_prediction(&z, 4, 4).unwrap(), predict_mask(&z).unwrap());

        let c = Tensor::<f64>::full(&[1, 1, 4, 4], 1.5);
        let m = upscale_prediction(&c, 32, 32).unwrap();
        assert!(m.data().iter().all(|&v| v == 1));
        assert!(matches!(upscale_prediction(&c, 2, 2), Err(Error::Usage(_))));
    }

    #[test]
    fn csv_row_shape() {
        let m = Mask::from_rows(&[&[0, 1]]).unwrap();
        let r = dice_jaccard(&confusion(&m, &m, 2).unwrap());
        assert_eq!(MetricsReport::csv_header(2), "mean_dice,mean_jaccard,dice_0,dice_1,jaccard_0,jaccard_1");
        assert_eq!(r.to_csv_row().split(',').count(), 6);
    }

    #[test]
    fn macro_and_pooled_differ() {
        // image 0: perfect small object; image 1: object missed entirely
        let gt = Mask::new(2, 1, 4, vec![1, 0, 0, 0, 1, 1, 1, 0]).unwrap();
        let pred = Mask::new(2, 1, 4, vec![1, 0, 0, 0, 0, 0, 0, 0]).unwrap();
        let e = evaluate(&pred, &gt, 2).unwrap();
        assert!((e.macro_mean_dice - 0.5).abs() < 1e-15);
        assert!((e.pooled.mean_dice - 2.0 / 5.0).abs() < 1e-15);
    }
}
