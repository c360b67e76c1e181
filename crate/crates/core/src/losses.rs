//! Losses on predicted attention regions: generalized-IoU, keypoint MSE,
//! their weighted combination, and cross-entropy for the classification
//! heads. Each region loss has a graph (differentiable) form on `[B, 4]`
//! tensors and a plain scalar form on [`AttentionRegion`] values.

use crate::tensor::{Element, Result, Tensor, TensorError};

/// A rectangular attention region in normalized image coordinates, stored as
/// center plus extent.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttentionRegion {
    pub cx: f64,
    pub cy: f64,
    pub h: f64,
    pub w: f64,
}

impl AttentionRegion {
    pub fn new(cx: f64, cy: f64, h: f64, w: f64) -> Self {
        AttentionRegion { cx, cy, h, w }
    }

    /// Corner form `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Row layout used by the region tensors: `[cx, cy, h, w]`.
    pub fn to_row(&self) -> [f64; 4] {
        [self.cx, self.cy, self.h, self.w]
    }

    pub fn from_row(row: &[f64]) -> Self {
        AttentionRegion { cx: row[0], cy: row[1], h: row[2], w: row[3] }
    }
}

/// Scalar generalized-IoU loss for one box pair: `1 - (IoU - |C \ (A∪B)|/|C|)`
/// where `C` is the smallest enclosing box. Range `[0, 2]`. Returns the loss
/// and a degeneracy flag; when both boxes have zero area the IoU term is
/// defined as zero, giving loss 1, and the flag is set.
pub fn giou_scalar(pred: &AttentionRegion, target: &AttentionRegion) -> (f64, bool) {
    let (px1, py1, px2, py2) = pred.corners();
    let (tx1, ty1, tx2, ty2) = target.corners();
    let iw = (px2.min(tx2) - px1.max(tx1)).max(0.0);
    let ih = (py2.min(ty2) - py1.max(ty1)).max(0.0);
    let inter = iw * ih;
    let union = pred.area() + target.area() - inter;
    let hull = (px2.max(tx2) - px1.min(tx1)) * (py2.max(ty2) - py1.min(ty1));
    if union <= 0.0 {
        // Both areas zero: the whole GIoU term is defined as 0, so the loss
        // is exactly 1, and the caller is warned via the flag.
        return (1.0, true);
    }
    let iou = inter / union;
    let penalty = (hull - union) / hull; // hull >= union > 0
    (1.0 - (iou - penalty), false)
}

/// Batch-mean scalar GIoU loss. The flag is set if any pair was degenerate.
pub fn giou_loss(preds: &[AttentionRegion], targets: &[AttentionRegion]) -> Result<(f64, bool)> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(TensorError::Invalid(format!(
            "giou_loss needs matching nonempty batches, got {} and {}",
            preds.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    let mut degenerate = false;
    for (p, t) in preds.iter().zip(targets) {
        let (l, d) = giou_scalar(p, t);
        total += l;
        degenerate |= d;
    }
    Ok((total / preds.len() as f64, degenerate))
}

fn check_region_batch<T: Element>(op: &'static str, pred: &Tensor<T>, target: &Tensor<T>) -> Result<usize> {
    if pred.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    if pred.rank() != 2 || pred.shape()[1] != 4 || pred.shape()[0] == 0 {
        return Err(TensorError::Invalid(format!(
            "{op} expects nonempty [batch, 4] region tensors, got {:?}",
            pred.shape()
        )));
    }
    Ok(pred.shape()[0])
}

/// Differentiable batch-mean GIoU loss on `[B, 4]` region tensors in
/// `[cx, cy, h, w]` layout. Assumes positive extents (the detection head
/// emits sigmoid outputs), so IoU and hull denominators stay positive.
pub fn giou_loss_graph<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    let b = check_region_batch("giou_loss", pred, target)?;
    let col = |t: &Tensor<T>, i: usize| t.slice(1, i, 1);
    let (pcx, pcy, ph, pw) = (col(pred, 0)?, col(pred, 1)?, col(pred, 2)?, col(pred, 3)?);
    let (tcx, tcy, th, tw) = (col(target, 0)?, col(target, 1)?, col(target, 2)?, col(target, 3)?);

    let px1 = pcx.sub(&pw.scale(0.5))?;
    let px2 = pcx.add(&pw.scale(0.5))?;
    let py1 = pcy.sub(&ph.scale(0.5))?;
    let py2 = pcy.add(&ph.scale(0.5))?;
    let tx1 = tcx.sub(&tw.scale(0.5))?;
    let tx2 = tcx.add(&tw.scale(0.5))?;
    let ty1 = tcy.sub(&th.scale(0.5))?;
    let ty2 = tcy.add(&th.scale(0.5))?;

    let iw = px2.minimum(&tx2)?.sub(&px1.maximum(&tx1)?)?.relu();
    let ih = py2.minimum(&ty2)?.sub(&py1.maximum(&ty1)?)?.relu();
    let inter = iw.mul(&ih)?;

    let area_p = pw.mul(&ph)?;
    let area_t = tw.mul(&th)?;
    let union = area_p.add(&area_t)?.sub(&inter)?;

    let hull_w = px2.maximum(&tx2)?.sub(&px1.minimum(&tx1)?)?;
    let hull_h = py2.maximum(&ty2)?.sub(&py1.minimum(&ty1)?)?;
    let hull = hull_w.mul(&hull_h)?;

    let iou = inter.div(&union)?;
    let penalty = hull.sub(&union)?.div(&hull)?;
    // per-sample loss 1 - (iou - penalty), averaged over the batch
    let per = penalty.sub(&iou)?.add_scalar(1.0);
    Ok(per.reduce_sum().scale(1.0 / b as f64))
}

/// Scalar keypoint MSE: mean over the batch of the squared Euclidean
/// distance between the 4-vectors `[cx, cy, h, w]`.
pub fn keypoint_mse(preds: &[AttentionRegion], targets: &[AttentionRegion]) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(TensorError::Invalid(format!(
            "keypoint_mse needs matching nonempty batches, got {} and {}",
            preds.len(),
            targets.len()
        )));
    }
    let total: f64 = preds
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            p.to_row()
                .iter()
                .zip(t.to_row())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    Ok(total / preds.len() as f64)
}

/// Differentiable keypoint MSE on `[B, 4]` region tensors.
pub fn keypoint_mse_graph<T: Element>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    let b = check_region_batch("keypoint_mse", pred, target)?;
    let diff = pred.sub(target)?;
    Ok(diff.mul(&diff)?.reduce_sum().scale(1.0 / b as f64))
}

/// Visual attention loss: `l1·GIoU + l2·MSE` (scalar form). Propagates the
/// GIoU degeneracy flag.
pub fn val_loss(
    preds: &[AttentionRegion],
    targets: &[AttentionRegion],
    l1: f64,
    l2: f64,
) -> Result<(f64, bool)> {
    let (g, degenerate) = giou_loss(preds, targets)?;
    let m = keypoint_mse(preds, targets)?;
    Ok((l1 * g + l2 * m, degenerate))
}

/// Visual attention loss, graph form.
pub fn val_loss_graph<T: Element>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    l1: f64,
    l2: f64,
) -> Result<Tensor<T>> {
    let g = giou_loss_graph(pred, target)?;
    let m = keypoint_mse_graph(pred, target)?;
    g.scale(l1).add(&m.scale(l2))
}

/// Batch-mean cross-entropy from logits `[B, n]` and integer labels.
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return Err(TensorError::Invalid(format!(
            "cross_entropy expects [batch, classes] logits, got {:?}",
            logits.shape()
        )));
    }
    let (b, n) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b || b == 0 {
        return Err(TensorError::Invalid(format!(
            "cross_entropy got {} labels for batch {b}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(TensorError::Invalid(format!(
            "label {bad} out of range for {n} classes"
        )));
    }
    let log_p = logits.log_softmax(1)?;
    let mut onehot = vec![T::zero(); b * n];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * n + l] = T::one();
    }
    let mask = Tensor::from_vec(onehot, &[b, n]);
    Ok(log_p.mul(&mask)?.reduce_sum().scale(-1.0 / b as f64))
}

/// Softmax class probabilities from logits, no graph needed.
pub fn softmax_probs<T: Element>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    logits.softmax(1)
}
