use std::collections::BTreeMap;

use super::{ParameterSet, Tensor};
use crate::error::{Error, Result};

/// RMSprop optimizer with per-parameter squared-gradient accumulators.
///
/// Update rule: `acc <- decay*acc + (1-decay)*g^2`,
/// `p <- p - lr * g / (sqrt(acc) + eps)`.
#[derive(Debug, Clone)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    acc: BTreeMap<String, Tensor>,
}

impl RmsProp {
    pub fn new(learning_rate: f64, decay: f64, epsilon: f64) -> Result<Self> {
        if learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0 < decay && decay < 1.0) {
            return Err(Error::invalid("decay must be in (0,1)"));
        }
        if epsilon < 0.0 {
            return Err(Error::invalid("epsilon must be nonnegative"));
        }
        Ok(RmsProp {
            learning_rate,
            decay,
            epsilon,
            acc: BTreeMap::new(),
        })
    }

    /// Defaults: lr 1e-3, decay 0.9, eps 1e-8.
    pub fn with_defaults() -> Self {
        RmsProp::new(1e-3, 0.9, 1e-8).unwrap()
    }

    pub fn step(
        &mut self,
        params: &mut ParameterSet,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<()> {
        for (name, g) in grads {
            let param = params.get(name)?;
            if param.shape() != g.shape() {
                return Err(Error::shape(format!(
                    "gradient shape mismatch for {name:?}"
                )));
            }
            let acc = self
                .acc
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            *acc = acc.zip(g, |a, gv| self.decay * a + (1.0 - self.decay) * gv * gv)?;
            let mut updated = param.clone();
            for ((p, gv), a) in updated
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(acc.data())
            {
                *p -= self.learning_rate * gv / (a.sqrt() + self.epsilon);
            }
            params.set(name, updated)?;
        }
        Ok(())
    }

    pub fn accumulator(&self, name: &str) -> Option<&Tensor> {
        self.acc.get(name)
    }
}
