//! Confusion matrices, IoU and ROC AUC.

use serde::{Deserialize, Serialize};

use crate::encoders::{PreparedFrame, SegModel};
use crate::error::{Error, Result};
use crate::numerics::ParamStore;

/// Rows are ground-truth classes, columns predictions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, gt: &[Option<usize>], pred: &[usize]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::shape(format!("{} labels vs {} predictions", gt.len(), pred.len())));
        }
        for (g, &p) in gt.iter().zip(pred) {
            let Some(g) = *g else { continue };
            if g >= self.classes || p >= self.classes {
                return Err(Error::arg(format!("class ({g}, {p}) outside {} classes", self.classes)));
            }
            self.counts[g * self.classes + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape("confusion matrices of different sizes"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class IoU (`None` for zero union) and the mean over defined classes.
    pub fn miou(&self) -> Result<(Vec<Option<f64>>, f64)> {
        let c = self.classes;
        let per: Vec<Option<f64>> = (0..c)
            .map(|i| {
                let tp = self.get(i, i);
                let fn_: u64 = (0..c).map(|j| self.get(i, j)).sum::<u64>() - tp;
                let fp: u64 = (0..c).map(|j| self.get(j, i)).sum::<u64>() - tp;
                let union = tp + fp + fn_;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect();
        let defined: Vec<f64> = per.iter().flatten().copied().collect();
        if defined.is_empty() {
            return Err(Error::UndefinedMetric("every class has zero union".into()));
        }
        let mean = defined.iter().sum::<f64>() / defined.len() as f64;
        Ok((per, mean))
    }
}

pub fn confusion(gt: &[Option<usize>], pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(classes);
    cm.add(gt, pred)?;
    Ok(cm)
}

pub fn miou(cm: &ConfusionMatrix) -> Result<(Vec<Option<f64>>, f64)> {
    cm.miou()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadScore {
    pub miou: f64,
    pub per_class: Vec<Option<f64>>,
}

impl HeadScore {
    fn from_cm(cm: &ConfusionMatrix) -> Result<Self> {
        let (per_class, miou) = cm.miou()?;
        Ok(HeadScore { miou, per_class })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub two_d: HeadScore,
    pub three_d: HeadScore,
    pub fused: HeadScore,
    pub frames: usize,
    pub points: u64,
}

/// Per-point predictions of the three heads.
pub fn head_predictions(
    store: &ParamStore,
    model: &SegModel,
    frame: &PreparedFrame,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let (l2, l3) = model.predict(store, frame)?;
    let fused = crate::adaptation::fuse_predictions(&l2, &l3)?;
    Ok((l2.argmax_rows(), l3.argmax_rows(), fused.argmax_rows()))
}

/// Accumulates one confusion matrix per head over all frames.
pub fn evaluate_model(store: &ParamStore, model: &SegModel, frames: &[&PreparedFrame]) -> Result<Evaluation> {
    if frames.is_empty() {
        return Err(Error::arg("evaluation split is empty"));
    }
    let c = model.classes;
    let mut cms = [ConfusionMatrix::new(c), ConfusionMatrix::new(c), ConfusionMatrix::new(c)];
    for f in frames {
        let (p2, p3, pf) = head_predictions(store, model, f)?;
        for (cm, p) in cms.iter_mut().zip([p2, p3, pf]) {
            cm.add(&f.labels, &p)?;
        }
    }
    Ok(Evaluation {
        two_d: HeadScore::from_cm(&cms[0])?,
        three_d: HeadScore::from_cm(&cms[1])?,
        fused: HeadScore::from_cm(&cms[2])?,
        frames: frames.len(),
        points: cms[0].total(),
    })
}

/// Area under the ROC curve for `positive` scoring above `negative` (ties count half).
pub fn roc_auc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let mut wins = 0.0;
    for &p in positive {
        for &n in negative {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(wins / (positive.len() * negative.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example() {
        let gt = [Some(0), Some(0), Some(1), Some(1)];
        let cm = confusion(&gt, &[0, 1, 1, 1], 2).unwrap();
        assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)), (1, 1, 0, 2));
        let (per, m) = miou(&cm).unwrap();
        assert_eq!(per, vec![Some(0.5), Some(2.0 / 3.0)]);
        assert!((m - 7.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn edge_cases() {
        let gt = [Some(0), Some(2), Some(1)];
        let cm = confusion(&gt, &[0, 2, 1], 4).unwrap();
        let (per, m) = miou(&cm).unwrap();
        assert_eq!(per, vec![Some(1.0), Some(1.0), Some(1.0), None]);
        assert_eq!(m, 1.0);
        let ignored = confusion(&[None, None], &[0, 1], 2).unwrap();
        assert_eq!(ignored.total(), 0);
        assert!(matches!(miou(&ignored), Err(Error::UndefinedMetric(_))));
        assert!(matches!(confusion(&gt, &[0], 3), Err(Error::Shape(_))));
    }

    #[test]
    fn auc_values() {
        assert_eq!(roc_auc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.5], &[0.5]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1], &[0.2, 0.05]).unwrap(), 0.5);
        assert!(roc_auc(&[], &[0.1]).is_err());
    }

    #[test]
    fn fused_head_sits_between_branches() {
        use crate::numerics::Matrix;
        let gt = [Some(0), Some(0), Some(1), Some(1)];
        let l2 = Matrix::from_rows(&[&[2.0, 0.0], &[2.0, 0.0], &[0.0, 1.0], &[0.0, 4.0]]);
        let l3 = Matrix::from_rows(&[&[2.0, 0.0] as &[f64]; 4]);
        let fused = crate::adaptation::fuse_predictions(&l2, &l3).unwrap().argmax_rows();
        let score = |pred: &[usize]| miou(&confusion(&gt, pred, 2).unwrap()).unwrap().1;
        let (m2, m3, mf) = (score(&l2.argmax_rows()), score(&l3.argmax_rows()), score(&fused));
        assert_eq!((m2, m3), (1.0, 0.25));
        assert!(m3 < mf && mf < m2, "{mf}");
        assert!((mf - 7.0 / 12.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn total_counts_non_ignored(labels in proptest::collection::vec((proptest::option::of(0usize..4), 0usize..4), 0..200)) {
            let gt: Vec<Option<usize>> = labels.iter().map(|x| x.0).collect();
            let pred: Vec<usize> = labels.iter().map(|x| x.1).collect();
            let cm = confusion(&gt, &pred, 4).unwrap();
            prop_assert_eq!(cm.total(), gt.iter().flatten().count() as u64);
        }
    }
}
