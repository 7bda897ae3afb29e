use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Probability threshold for binarizing predictions and masks.
pub const THRESHOLD: f64 = 0.5;

/// IoU and F1 of two binary masks. Two empty masks score `(1, 1)`.
pub fn iou_f1(pred: &[bool], truth: &[bool]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::shape("iou_f1", &[pred.len()], &[truth.len()]));
    }
    let (mut inter, mut p, mut t) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.iter().zip(truth) {
        inter += (a && b) as usize;
        p += a as usize;
        t += b as usize;
    }
    let union = p + t - inter;
    if union == 0 {
        return Ok((1.0, 1.0));
    }
    let inter = inter as f64;
    Ok((inter / union as f64, 2.0 * inter / (p + t) as f64))
}

pub fn binarize<T: Element>(values: &[T]) -> Vec<bool> {
    values
        .iter()
        .map(|v| v.to_f64().unwrap_or(0.0) > THRESHOLD)
        .collect()
}

/// IoU and F1 of thresholded probability maps against masks.
pub fn metrics_iou_f1<T: Element>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<(f64, f64)> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape("metrics_iou_f1", pred.shape(), truth.shape()));
    }
    iou_f1(&binarize(pred.data()), &binarize(truth.data()))
}

/// Per-image `(IoU, F1)` for `[batch, ...]` probability maps and masks.
pub fn per_image<T: Element>(probs: &Tensor<T>, masks: &Tensor<T>) -> Result<Vec<(f64, f64)>> {
    if probs.shape() != masks.shape() || probs.rank() == 0 {
        return Err(Error::shape("per_image", probs.shape(), masks.shape()));
    }
    let per = probs.numel() / probs.shape()[0].max(1);
    probs
        .data()
        .chunks(per.max(1))
        .zip(masks.data().chunks(per.max(1)))
        .map(|(p, m)| iou_f1(&binarize(p), &binarize(m)))
        .collect()
}
