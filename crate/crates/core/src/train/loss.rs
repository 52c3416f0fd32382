use crate::error::Result;
use crate::graph::ForwardOutput;
use crate::tensor::{Tape, Var};

/// Scalar components of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    /// `cross_entropy + lambda * prediction_penalty`.
    pub total: f64,
    pub cross_entropy: f64,
    /// Mean of the squared prediction error.
    pub prediction_penalty: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(cross_entropy: f64, prediction_penalty: f64, lambda: f64) -> Self {
        Self {
            total: cross_entropy + lambda * prediction_penalty,
            cross_entropy,
            prediction_penalty,
            lambda,
        }
    }
}

/// Tape handles for the composite loss.
#[derive(Debug, Clone, Copy)]
pub struct CompositeLoss {
    pub total: Var,
    pub cross_entropy: Var,
    pub prediction_penalty: Var,
    pub lambda: f64,
}

impl CompositeLoss {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        let scalar = |v: Var| tape.value(v).data()[0];
        LossBreakdown {
            total: scalar(self.total),
            cross_entropy: scalar(self.cross_entropy),
            prediction_penalty: scalar(self.prediction_penalty),
            lambda: self.lambda,
        }
    }
}

/// Records `CE(logits, labels) + lambda * mean(eps^2)`.
///
/// The penalty is scaled on the tape, so `lambda = 0` sends exactly zero
/// gradient down the penalty path.
pub fn composite_loss(tape: &mut Tape, out: &ForwardOutput, labels: &[usize], lambda: f64) -> Result<CompositeLoss> {
    let cross_entropy = tape.softmax_cross_entropy(out.logits, labels)?;
    let eps = out.epsilon.epsilon;
    let squared = tape.mul(eps, eps)?;
    let prediction_penalty = tape.mean(squared);
    let weighted = tape.scale(prediction_penalty, lambda);
    let total = tape.add(cross_entropy, weighted)?;
    Ok(CompositeLoss {
        total,
        cross_entropy,
        prediction_penalty,
        lambda,
    })
}
