use serde::{Deserialize, Serialize};

use crate::corpus::ClassId;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    /// Any ratio with a zero denominator is 0.
    pub fn from_predictions(truth: &[ClassId], predicted: &[ClassId], num_classes: usize) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if truth.len() != predicted.len() {
            return Err(Error::invalid(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            for l in [t, p] {
                if l >= num_classes {
                    return Err(Error::LabelOutOfRange { label: l, num_classes });
                }
            }
            confusion[t][p] += 1;
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let mut precision = Vec::with_capacity(num_classes);
        let mut recall = Vec::with_capacity(num_classes);
        let mut f1 = Vec::with_capacity(num_classes);
        for c in 0..num_classes {
            let tp = confusion[c][c];
            let predicted_c: usize = confusion.iter().map(|row| row[c]).sum();
            let actual_c: usize = confusion[c].iter().sum();
            let p = ratio(tp, predicted_c);
            let r = ratio(tp, actual_c);
            precision.push(p);
            recall.push(r);
            f1.push(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) });
        }
        let trace: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
        Ok(Self {
            accuracy: ratio(trace, truth.len()),
            macro_f1: f1.iter().sum::<f64>() / num_classes as f64,
            precision,
            recall,
            f1,
            confusion,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeedStream;
    use rand::Rng;

    #[test]
    fn perfect() {
        let m = MetricsReport::from_predictions(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!((m.accuracy, m.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn all_predicted_majority() {
        let m = MetricsReport::from_predictions(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.f1[1], 0.0);
    }

    #[test]
    fn errors() {
        assert!(MetricsReport::from_predictions(&[], &[], 2).is_err());
        assert!(MetricsReport::from_predictions(&[0], &[2], 2).is_err());
        assert!(MetricsReport::from_predictions(&[0, 1], &[0], 2).is_err());
    }

    #[test]
    fn matches_direct_count_oracle() {
        let mut rng = SeedStream::new(4).rng();
        for _ in 0..200 {
            let c = rng.random_range(2..6);
            let n = rng.random_range(1..60);
            let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let pred: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let m = MetricsReport::from_predictions(&truth, &pred, c).unwrap();
            let mut f1_sum = 0.0;
            for k in 0..c {
                let tp = (0..n).filter(|&i| truth[i] == k && pred[i] == k).count() as f64;
                let fp = (0..n).filter(|&i| truth[i] != k && pred[i] == k).count() as f64;
                let fnn = (0..n).filter(|&i| truth[i] == k && pred[i] != k).count() as f64;
                let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fnn) };
                assert!((m.f1[k] - f1).abs() < 1e-12);
                f1_sum += f1;
                assert_eq!(m.confusion[k].iter().sum::<usize>(), truth.iter().filter(|&&t| t == k).count());
            }
            assert!((m.macro_f1 - f1_sum / c as f64).abs() < 1e-12);
            let correct = (0..n).filter(|&i| truth[i] == pred[i]).count();
            assert_eq!(m.accuracy, correct as f64 / n as f64);
        }
    }
}
