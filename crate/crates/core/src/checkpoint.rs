//! Shared JSON envelope for gradient-trained parameter sets.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<S> {
    format: String,
    version: u32,
    shape: S,
    /// Row-major tensors in parameter order.
    tensors: Vec<Vec<f64>>,
}

pub(crate) fn to_json<T: Real, S: Serialize>(format: &str, shape: S, tensors: Vec<&Tensor<T>>) -> Result<String> {
    let env = Envelope {
        format: format.to_owned(),
        version: VERSION,
        shape,
        tensors: tensors
            .iter()
            .map(|t| t.data().iter().map(|v| v.to_f64_lossy()).collect())
            .collect(),
    };
    Ok(serde_json::to_string(&env)?)
}

pub(crate) fn from_json<S: DeserializeOwned>(format: &str, s: &str) -> Result<(S, Vec<Vec<f64>>)> {
    let env: Envelope<S> = serde_json::from_str(s)?;
    if env.format != format || env.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "expected {format} v{VERSION}, found {} v{}",
            env.format, env.version
        )));
    }
    Ok((env.shape, env.tensors))
}

pub(crate) fn fill<T: Real>(slots: Vec<&mut Tensor<T>>, data: Vec<Vec<f64>>) -> Result<()> {
    if slots.len() != data.len() {
        return Err(Error::Checkpoint("tensor count does not match shape".into()));
    }
    for (slot, values) in slots.into_iter().zip(data) {
        if slot.len() != values.len() {
            return Err(Error::Checkpoint("tensor size does not match shape".into()));
        }
        for (d, v) in slot.data_mut().iter_mut().zip(values) {
            if !v.is_finite() {
                return Err(Error::Checkpoint("non-finite parameter".into()));
            }
            *d = T::from_f64_lossy(v);
        }
    }
    Ok(())
}
