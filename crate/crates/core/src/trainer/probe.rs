//! Linear probe on frozen features, used to evaluate models trained without
//! the classification loss.

use crate::classifier::{logit_compensated_loss, CompensationVector};
use crate::corpus::ClassId;
use crate::error::Result;
use crate::numerics::{Affine, AdamW, HasParams, Matrix, SeedStream};

/// Full-batch softmax regression on `features`.
pub fn fit_probe(
    features: &Matrix,
    labels: &[ClassId],
    num_classes: usize,
    steps: usize,
    lr: f64,
    weight_decay: f64,
    stream: SeedStream,
) -> Result<Affine> {
    let mut probe = Affine::init(features.cols(), num_classes, &mut stream.rng());
    let mut opt = AdamW::new(lr, weight_decay);
    let zero = CompensationVector::zeros(num_classes);
    for _ in 0..steps {
        let logits = probe.forward(features)?;
        let (_, grad) = logit_compensated_loss(&logits, labels, &zero)?;
        probe.backward(features, &grad)?;
        opt.step(&mut probe.params_mut())?;
    }
    Ok(probe)
}
