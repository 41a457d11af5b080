use rand::Rng as _;

use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::rng::Rng;

/// Fully connected layer `y = x W + b` with parameters `<name>.w` (in x out)
/// and `<name>.b` (1 x out).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    /// Kaiming-uniform weights (gain for ReLU), zero bias.
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let bound = (6.0 / inputs as f64).sqrt();
        let w = (0..inputs * outputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let weight = store.insert(format!("{name}.w"), Tensor::matrix(inputs, outputs, w)?)?;
        let bias = store.insert(format!("{name}.b"), Tensor::zeros(1, outputs))?;
        Ok(Dense {
            weight,
            bias,
            inputs,
            outputs,
        })
    }

    /// Looks up an existing layer by name.
    pub fn bind(store: &ParamStore, name: &str) -> Result<Self> {
        let lookup = |suffix: &str| {
            let full = format!("{name}.{suffix}");
            store
                .id(&full)
                .ok_or(crate::error::Error::UnknownParameter(full))
        };
        let weight = lookup("w")?;
        let bias = lookup("b")?;
        let shape = store.param(weight).value().shape().to_vec();
        Ok(Dense {
            weight,
            bias,
            inputs: shape[0],
            outputs: shape[1],
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, relu: bool) -> Result<Var> {
        let w = tape.param(store, self.weight)?;
        let b = tape.param(store, self.bias)?;
        tape.linear(x, w, b, relu)
    }
}
