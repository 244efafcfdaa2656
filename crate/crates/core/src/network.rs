use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::params::Parameterized;
use crate::repr::{stack_images, unstack_images, PseudoImage, PseudoImageSequence};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Result of recording a forward pass on a tape.
#[derive(Clone, Debug)]
pub struct Recorded {
    /// `K × N × 3` prediction.
    pub prediction: NodeId,
    /// Parameter leaves, in [`Parameterized`] visitation order.
    pub params: Vec<NodeId>,
}

/// A model mapping `input_len` observed images to `output_len` future images.
pub trait Network: Parameterized + Send + Sync {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn joints(&self) -> usize;

    fn record(&self, tape: &mut Tape, input: &[PseudoImage]) -> Result<Recorded>;

    fn predict(&self, input: &[PseudoImage]) -> Result<PseudoImageSequence> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, input)?;
        unstack_images(tape.value(rec.prediction))
    }

    fn check_window(&self, input: &[PseudoImage]) -> Result<()> {
        if input.len() != self.input_len() {
            return Err(Error::Invalid(format!(
                "expected {} input frames, got {}",
                self.input_len(),
                input.len()
            )));
        }
        if let Some(bad) = input.iter().find(|im| im.joints() != self.joints()) {
            return Err(Error::Invalid(format!(
                "expected {} joints per frame, got {}",
                self.joints(),
                bad.joints()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LossAndGrad {
    pub loss: f64,
    pub prediction: Tensor,
    /// One gradient per parameter tensor, in visitation order.
    pub grads: Vec<Tensor>,
}

/// Objective value of one clip, without gradients.
pub fn clip_loss(
    net: &dyn Network,
    input: &[PseudoImage],
    target: &[PseudoImage],
    loss: LossKind,
) -> Result<f64> {
    let pred = stack_images(&net.predict(input)?)?;
    loss.evaluate(&pred, &stack_images(target)?)
}

/// Records one clip on `tape`, then differentiates the objective.
pub fn loss_and_grad_on(
    net: &dyn Network,
    mut tape: Tape,
    input: &[PseudoImage],
    target: &[PseudoImage],
    loss: LossKind,
) -> Result<LossAndGrad> {
    if target.len() != net.output_len() {
        return Err(Error::Invalid(format!(
            "expected {} target frames, got {}",
            net.output_len(),
            target.len()
        )));
    }
    let rec = net.record(&mut tape, input)?;
    let target_node = tape.leaf(stack_images(target)?);
    let frames = target.len();
    let root = match loss {
        LossKind::L1 => tape.l1_loss(rec.prediction, target_node, frames)?,
        LossKind::L2 => tape.l2_loss(rec.prediction, target_node, frames)?,
    };
    let mut grads = tape.backward(root)?;
    let grads = rec
        .params
        .iter()
        .map(|&id| {
            grads
                .take(id)
                .unwrap_or_else(|| Tensor::zeros(tape.value(id).shape()))
        })
        .collect();
    Ok(LossAndGrad {
        loss: tape.value(root).item()?,
        prediction: tape.value(rec.prediction).clone(),
        grads,
    })
}

pub fn loss_and_grad(
    net: &dyn Network,
    input: &[PseudoImage],
    target: &[PseudoImage],
    loss: LossKind,
) -> Result<LossAndGrad> {
    loss_and_grad_on(net, Tape::new(), input, target, loss)
}
