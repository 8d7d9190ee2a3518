use rand::seq::SliceRandom;

use super::{Dropout, IknetParams, TrainConfig, Variant};
use crate::dataset::{ModelInput, Scaler};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Binder, Parameters};
use crate::rng::{self, derive_seed, label};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: IknetParams,
    /// Mean training loss of each epoch (dropout on).
    pub losses: Vec<f64>,
}

/// Adam on mean squared error of scaled targets, reshuffled every epoch.
pub fn train(
    inputs: &[ModelInput],
    targets: &[f64],
    mut params: IknetParams,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    params.validate()?;
    if inputs.is_empty() {
        return Err(Error::validation("training split", "no training samples"));
    }
    if inputs.len() != targets.len() {
        return Err(Error::Shape {
            op: "train",
            left: vec![inputs.len()],
            right: vec![targets.len()],
        });
    }
    for x in inputs {
        params.dims.check_input(x)?;
    }
    let adam = AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut state = {
        let tensors: Vec<&Tensor> = params.named_tensors().into_iter().map(|(_, t)| t).collect();
        AdamState::new(adam, tensors)
    };
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..config.epochs {
        let mut shuffle = rng::stream(config.seed, "shuffle", &[epoch as u64]);
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&ModelInput> = chunk.iter().map(|&i| &inputs[i]).collect();
            let y: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let dropout = Dropout {
                rate: config.dropout,
                training: true,
                seed: derive_seed(config.seed, &[label("dropout"), epoch as u64, b as u64]),
            };
            let loss = step(&mut params, &mut state, &batch, &y, config.variant, dropout)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training loss became {loss} at epoch {} batch {b}; lower the learning rate or check the inputs",
                    epoch + 1
                )));
            }
            total += loss * chunk.len() as f64;
        }
        let epoch_loss = total / inputs.len() as f64;
        log::debug!("epoch {} loss {epoch_loss:.6}", epoch + 1);
        losses.push(epoch_loss);
        if let Some(p) = config.patience {
            if epoch_loss < best {
                best = epoch_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= p {
                    break;
                }
            }
        }
    }
    if !params.is_finite() {
        return Err(Error::Numeric("trained parameters are not finite".into()));
    }
    Ok(TrainOutcome { params, losses })
}

fn step(
    params: &mut IknetParams,
    state: &mut AdamState,
    batch: &[&ModelInput],
    y: &[f64],
    variant: Variant,
    dropout: Dropout,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut binder = Binder::new(true);
    let bound = params.bind(&mut tape, &mut binder)?;
    let pred = bound.forward(&mut tape, batch, variant, dropout)?;
    let target = tape.constant(Tensor::matrix(y.len(), 1, y.to_vec())?);
    let loss = tape.mse(pred, target)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Ok(value);
    }
    tape.backward(loss)?;
    let grads: Vec<&[f64]> = binder
        .leaves()
        .iter()
        .map(|&v| tape.grad(v).expect("trainable leaf"))
        .collect();
    let mut tensors: Vec<&mut Tensor> = Vec::new();
    params.visit_mut("", &mut |_, t| tensors.push(t));
    state.step(&mut tensors, &grads)?;
    Ok(value)
}

/// Scaled predictions, dropout off, in chunks of `batch` samples.
pub fn predict_scaled(params: &IknetParams, inputs: &[ModelInput], variant: Variant, batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(batch.max(1)) {
        let refs: Vec<&ModelInput> = chunk.iter().collect();
        out.extend(super::forward_values(params, &refs, variant)?);
    }
    Ok(out)
}

/// Predictions in index points.
pub fn predict(params: &IknetParams, scaler: &Scaler, inputs: &[ModelInput], variant: Variant) -> Result<Vec<f64>> {
    Ok(predict_scaled(params, inputs, variant, 256)?
        .into_iter()
        .map(|z| scaler.invert_target(z))
        .collect())
}
