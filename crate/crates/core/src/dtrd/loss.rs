//! Box regression loss: weighted generalized IoU plus mean absolute corner error.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{giou, BoundingBox};
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub iou: f64,
    pub l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { iou: 2.0, l1: 5.0 }
    }
}

/// `w.iou·(1 − GIoU) + w.l1·mean|Δcorner|` between ordered corners `[4]`
/// on the tape and a ground-truth box.
pub fn box_loss(tape: &mut Tape<'_>, pred: Var, gt: &BoundingBox, w: LossWeights) -> Result<Var> {
    let lo = tape.select(pred, &[0, 1])?;
    let hi = tape.select(pred, &[2, 3])?;
    let g_lo = tape.constant(&[2], vec![gt.x1, gt.y1])?;
    let g_hi = tape.constant(&[2], vec![gt.x2, gt.y2])?;

    let in_hi = tape.minimum(hi, g_hi)?;
    let in_lo = tape.maximum(lo, g_lo)?;
    let in_wh = tape.sub(in_hi, in_lo)?;
    let in_wh = tape.relu(in_wh);
    let inter = product_of_pair(tape, in_wh)?;

    let p_wh = tape.sub(hi, lo)?;
    let p_area = product_of_pair(tape, p_wh)?;
    let p_plus_g = tape.add_scalar(p_area, gt.area());
    let union = tape.sub(p_plus_g, inter)?;

    let hull_hi = tape.maximum(hi, g_hi)?;
    let hull_lo = tape.minimum(lo, g_lo)?;
    let hull_wh = tape.sub(hull_hi, hull_lo)?;
    let hull = product_of_pair(tape, hull_wh)?;

    let iou = tape.div(inter, union)?;
    let gap = tape.sub(hull, union)?;
    let penalty = tape.div(gap, hull)?;
    let giou_v = tape.sub(iou, penalty)?;
    // 1 − GIoU
    let neg = tape.scale(giou_v, -1.0);
    let iou_term = tape.add_scalar(neg, 1.0);

    let target = tape.constant(&[4], gt.corners().to_vec())?;
    let diff = tape.sub(pred, target)?;
    let diff = tape.abs(diff);
    let l1 = tape.mean(diff);

    let a = tape.scale(iou_term, w.iou);
    let b = tape.scale(l1, w.l1);
    tape.add(a, b)
}

fn product_of_pair(tape: &mut Tape<'_>, pair: Var) -> Result<Var> {
    let a = tape.select(pair, &[0])?;
    let b = tape.select(pair, &[1])?;
    tape.mul(a, b)
}

/// Plain evaluation of the same loss for two boxes.
pub fn box_loss_value(pred: &BoundingBox, gt: &BoundingBox, w: LossWeights) -> f64 {
    let l1 = pred
        .corners()
        .iter()
        .zip(gt.corners())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / 4.0;
    w.iou * (1.0 - giou(pred, gt)) + w.l1 * l1
}
