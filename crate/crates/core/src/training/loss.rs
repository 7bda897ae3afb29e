use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Smoothing term of the soft Dice coefficient.
pub const DICE_EPS: f64 = 1e-6;

/// Rejects masks with entries other than exactly 0 or 1.
pub fn check_binary<T: Element>(masks: &Tensor<T>) -> Result<()> {
    match masks
        .data()
        .iter()
        .position(|&m| m != T::zero() && m != T::one())
    {
        Some(i) => Err(Error::Contract(format!(
            "mask entry {i} is {:?}; masks must be binary",
            masks.data()[i]
        ))),
        None => Ok(()),
    }
}

/// `w_bce·mean(BCE(sigmoid(z), m)) + w_dice·(1 - (2Σpm + ε)/(Σp + Σm + ε))`
/// with sums over the whole batch.
pub fn loss_bce_dice<'g, T: Element>(
    logits: Var<'g, T>,
    masks: Var<'g, T>,
    w_bce: f64,
    w_dice: f64,
) -> Result<Var<'g, T>> {
    let m = masks.value();
    if logits.shape() != m.shape() {
        return Err(Error::shape("loss_bce_dice", &logits.shape(), m.shape()));
    }
    check_binary(&m)?;
    let cast = |v: f64| T::from_f64_lossy(v);
    let bce = logits.bce_with_logits(masks)?.mean_all();
    let p = logits.sigmoid();
    let eps = cast(DICE_EPS);
    let inter = p.mul(masks)?.sum_all().scale(cast(2.0)).add_scalar(eps);
    let denom = p.sum_all().add(masks.sum_all())?.add_scalar(eps);
    let dice = inter.div(denom)?.scale(-T::one()).add_scalar(T::one());
    bce.scale(cast(w_bce)).add(dice.scale(cast(w_dice)))
}
