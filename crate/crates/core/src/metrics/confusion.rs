use crate::dataset::LabelMask;
use crate::error::{Error, Result};

/// One-vs-rest tallies per class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionCounts {
    num_classes: usize,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub tn: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
            tn: vec![0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Pixels seen so far.
    pub fn total(&self) -> u64 {
        if self.num_classes == 0 {
            return 0;
        }
        self.tp[0] + self.fp[0] + self.fn_[0] + self.tn[0]
    }

    pub fn add(&mut self, pred: &LabelMask, gt: &LabelMask) -> Result<()> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(Error::invalid(format!(
                "prediction is {}×{}, ground truth {}×{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        for mask in [pred, gt] {
            if mask.num_classes() > self.num_classes {
                return Err(Error::invalid(format!(
                    "mask declares {} classes, counts track {}",
                    mask.num_classes(),
                    self.num_classes
                )));
            }
        }
        let mut pairs = vec![0u64; self.num_classes * self.num_classes];
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            pairs[usize::from(g) * self.num_classes + usize::from(p)] += 1;
        }
        let total = pred.labels().len() as u64;
        for c in 0..self.num_classes {
            let tp = pairs[c * self.num_classes + c];
            let gt_c: u64 = pairs[c * self.num_classes..(c + 1) * self.num_classes].iter().sum();
            let pred_c: u64 = (0..self.num_classes)
                .map(|g| pairs[g * self.num_classes + c])
                .sum();
            self.tp[c] += tp;
            self.fn_[c] += gt_c - tp;
            self.fp[c] += pred_c - tp;
            self.tn[c] += total + tp - gt_c - pred_c;
        }
        Ok(())
    }

    /// Elementwise sum.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.num_classes != other.num_classes {
            return Err(Error::invalid("cannot merge counts over different class sets"));
        }
        let sum = |a: &[u64], b: &[u64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        Ok(Self {
            num_classes: self.num_classes,
            tp: sum(&self.tp, &other.tp),
            fp: sum(&self.fp, &other.fp),
            fn_: sum(&self.fn_, &other.fn_),
            tn: sum(&self.tn, &other.tn),
        })
    }

    /// Whether class `c` occurs in the ground truth.
    pub fn in_ground_truth(&self, c: usize) -> bool {
        self.tp[c] + self.fn_[c] > 0
    }
}

/// Functional form of [`ConfusionCounts::add`].
pub fn accumulate(pred: &LabelMask, gt: &LabelMask, counts: &ConfusionCounts) -> Result<ConfusionCounts> {
    let mut out = counts.clone();
    out.add(pred, gt)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let m = LabelMask::from_rows(&[&[0, 1], &[2, 1]], 3).unwrap();
        let c = accumulate(&m, &m, &ConfusionCounts::new(3)).unwrap();
        assert!(c.fp.iter().chain(&c.fn_).all(|&v| v == 0));
        assert_eq!(c.tp, vec![1, 2, 1]);
        assert_eq!(c.total(), 4);
    }

    #[test]
    fn all_tool_on_background() {
        let pred = LabelMask::filled(2, 5, 2, 1).unwrap();
        let gt = LabelMask::filled(2, 5, 2, 0).unwrap();
        let c = accumulate(&pred, &gt, &ConfusionCounts::new(2)).unwrap();
        assert_eq!(c.fp[1], 10);
        assert_eq!(c.fn_[0], 10);
        assert_eq!(c.tp, vec![0, 0]);
        assert_eq!(c.tn, vec![0, 0]);
    }

    #[test]
    fn additive_over_frames() {
        let a = LabelMask::from_rows(&[&[0, 1, 1]], 2).unwrap();
        let b = LabelMask::from_rows(&[&[1, 1, 0]], 2).unwrap();
        let c = LabelMask::from_rows(&[&[0, 0]], 2).unwrap();
        let d = LabelMask::from_rows(&[&[1, 0]], 2).unwrap();
        let mut split = ConfusionCounts::new(2);
        split.add(&a, &b).unwrap();
        split.add(&c, &d).unwrap();
        let whole_p = LabelMask::from_rows(&[&[0, 1, 1, 0, 0]], 2).unwrap();
        let whole_g = LabelMask::from_rows(&[&[1, 1, 0, 1, 0]], 2).unwrap();
        let joint = accumulate(&whole_p, &whole_g, &ConfusionCounts::new(2)).unwrap();
        assert_eq!(split, joint);
    }

    #[test]
    fn shape_mismatch() {
        let a = LabelMask::filled(2, 2, 2, 0).unwrap();
        let b = LabelMask::filled(2, 3, 2, 0).unwrap();
        assert!(matches!(
            ConfusionCounts::new(2).add(&a, &b),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn merge_identity_and_commutativity() {
        let a = LabelMask::from_rows(&[&[0, 2, 1]], 3).unwrap();
        let b = LabelMask::from_rows(&[&[2, 2, 1]], 3).unwrap();
        let x = accumulate(&a, &b, &ConfusionCounts::new(3)).unwrap();
        let y = accumulate(&b, &b, &ConfusionCounts::new(3)).unwrap();
        assert_eq!(x.merge(&ConfusionCounts::new(3)).unwrap(), x);
        assert_eq!(x.merge(&y).unwrap(), y.merge(&x).unwrap());
    }
}
