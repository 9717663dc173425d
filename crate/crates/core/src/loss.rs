//! Loss functions with their analytic gradients.
//!
//! The contrastive losses treat memory rows as constants: gradients only flow
//! into the anchor latent.

use crate::error::{check_dim, HscError, Result};
use crate::model::MemoryBank;
use crate::nn::{dot, log_sum_exp, norm, softmax, NORM_FLOOR};

/// A scalar loss and its gradient with respect to one input vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// `‖target − recon‖²`, gradient taken w.r.t. `recon`.
pub fn reconstruction(target: &[f64], recon: &[f64]) -> Result<LossGrad> {
    check_dim("reconstruction", target.len(), recon.len())?;
    let grad: Vec<f64> = recon.iter().zip(target).map(|(r, t)| 2.0 * (r - t)).collect();
    let loss = recon.iter().zip(target).map(|(r, t)| (r - t) * (r - t)).sum();
    Ok(LossGrad { loss, grad })
}

/// Softmax cross-entropy `−log softmax(logits)[label]`, gradient w.r.t. logits.
pub fn linear_classification(logits: &[f64], label: usize) -> Result<LossGrad> {
    if label >= logits.len() {
        return Err(HscError::OutOfRange {
            index: label,
            len: logits.len(),
        });
    }
    let loss = log_sum_exp(logits.iter().copied()) - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok(LossGrad { loss, grad })
}

/// Multi-positive InfoNCE:
/// `−Σ_{j∈P} log( exp(s_j/τ) / Σ_{k∈D} exp(s_k/τ) )` with `s` the cosine
/// similarity between `anchor` and bank rows, `P ⊆ D`.
///
/// Returns `None` when the positive set is empty.
fn info_nce(
    anchor: &[f64],
    bank: &MemoryBank,
    tau: f64,
    in_denominator: impl Fn(usize) -> bool,
    is_positive: impl Fn(usize) -> bool,
) -> Result<Option<LossGrad>> {
    if !(tau > 0.0) {
        return Err(HscError::Config(format!("temperature must be > 0, got {tau}")));
    }
    check_dim("contrast anchor", bank.dim(), anchor.len())?;
    let a_norm = norm(anchor);
    if !(a_norm > NORM_FLOOR) {
        return Err(HscError::Degenerate("contrast anchor has zero norm".into()));
    }

    // (slot, similarity, row norm) over the denominator set
    let mut terms = Vec::new();
    let mut positives = 0usize;
    for k in 0..bank.len() {
        if !in_denominator(k) {
            continue;
        }
        let row = bank.row(k);
        let r_norm = norm(row);
        if !(r_norm > NORM_FLOOR) {
            return Err(HscError::Degenerate(format!("memory row {k} has zero norm")));
        }
        let s = dot(anchor, row) / (a_norm * r_norm);
        let pos = is_positive(k);
        positives += pos as usize;
        terms.push((k, s, r_norm, pos));
    }
    if positives == 0 {
        return Ok(None);
    }

    let lse = log_sum_exp(terms.iter().map(|t| t.1 / tau));
    let p_count = positives as f64;
    let mut loss = p_count * lse;
    let mut grad = vec![0.0; anchor.len()];
    let inv_a2 = 1.0 / (a_norm * a_norm);
    for &(k, s, r_norm, pos) in &terms {
        let p = (s / tau - lse).exp();
        let mut dl_ds = p_count * p / tau;
        if pos {
            loss -= s / tau;
            dl_ds -= 1.0 / tau;
        }
        if dl_ds == 0.0 {
            continue;
        }
        // ds/da = row / (|a||row|) − s · a / |a|²
        let row = bank.row(k);
        let c_row = dl_ds / (a_norm * r_norm);
        let c_a = dl_ds * s * inv_a2;
        for ((g, r), a) in grad.iter_mut().zip(row).zip(anchor) {
            *g += c_row * r - c_a * a;
        }
    }
    Ok(Some(LossGrad { loss, grad }))
}

/// Scene-level contrast: positives share the anchor's scene label, the
/// denominator runs over the whole bank.
pub fn scene_contrast(
    anchor: &[f64],
    bank: &MemoryBank,
    scene_label: usize,
    tau: f64,
) -> Result<Option<LossGrad>> {
    if bank.is_empty() {
        return Err(HscError::EmptyBank);
    }
    info_nce(anchor, bank, tau, |_| true, |k| bank.scene_labels[k] == scene_label)
}

/// Object-level contrast: positives share scene and class, the denominator is
/// restricted to the anchor's scene.
pub fn object_contrast(
    anchor: &[f64],
    bank: &MemoryBank,
    scene_label: usize,
    class_id: usize,
    tau: f64,
) -> Result<Option<LossGrad>> {
    if bank.is_empty() {
        return Err(HscError::EmptyBank);
    }
    info_nce(
        anchor,
        bank,
        tau,
        |k| bank.scene_labels[k] == scene_label,
        |k| bank.class_ids[k] == class_id,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StreamId;
    use crate::nn::Matrix;

    fn bank(rows: Vec<Vec<f64>>, scenes: Vec<usize>, classes: Vec<usize>) -> MemoryBank {
        let n = rows.len();
        MemoryBank::new(
            StreamId::App,
            0.9,
            Matrix::from_rows(&rows).unwrap(),
            scenes,
            classes,
            (0..n).collect(),
        )
        .unwrap()
    }

    #[test]
    fn reconstruction_values() {
        assert_eq!(reconstruction(&[1.0, 2.0], &[1.0, 2.0]).unwrap().loss, 0.0);
        let r = reconstruction(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(r.loss, 1.0);
        assert_eq!(r.grad, vec![-2.0, 0.0]);
        assert!(reconstruction(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn scene_contrast_two_entries() {
        let b = bank(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0, 1], vec![0, 0]);
        let r = scene_contrast(&[1.0, 0.0], &b, 0, 0.5).unwrap().unwrap();
        let expected = -((2f64).exp() / ((2f64).exp() + 1.0)).ln();
        assert!((r.loss - expected).abs() < 1e-14);
        assert!((r.loss - 0.126_928_011_042_972_5).abs() < 1e-12);
    }

    #[test]
    fn singleton_bank_has_zero_loss() {
        let b = bank(vec![vec![0.6, 0.8]], vec![0], vec![0]);
        let r = scene_contrast(&[0.6, 0.8], &b, 0, 0.5).unwrap().unwrap();
        assert!(r.loss.abs() < 1e-15);
        let r = object_contrast(&[0.6, 0.8], &b, 0, 0, 0.5).unwrap().unwrap();
        assert!(r.loss.abs() < 1e-15);
    }

    #[test]
    fn identical_positives_give_n_log_n() {
        let n = 4;
        let b = bank(vec![vec![1.0, 0.0]; n], vec![0; n], vec![0; n]);
        let r = scene_contrast(&[1.0, 0.0], &b, 0, 0.5).unwrap().unwrap();
        assert!((r.loss - n as f64 * (n as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_positive_set_is_skipped() {
        let b = bank(vec![vec![1.0, 0.0]], vec![1], vec![0]);
        assert!(scene_contrast(&[1.0, 0.0], &b, 0, 0.5).unwrap().is_none());
        assert!(object_contrast(&[1.0, 0.0], &b, 1, 3, 0.5).unwrap().is_none());
    }

    #[test]
    fn object_contrast_ignores_other_scenes() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.6, 0.8]];
        let b = bank(rows.clone(), vec![0, 0, 1], vec![0, 1, 0]);
        let r = object_contrast(&[1.0, 0.0], &b, 0, 0, 0.5).unwrap().unwrap();
        assert!((r.loss - 0.126_928_011_042_972_5).abs() < 1e-12);
        let mut moved = rows;
        moved[2] = vec![-0.28, 0.96];
        let b2 = bank(moved, vec![0, 0, 1], vec![0, 1, 0]);
        let r2 = object_contrast(&[1.0, 0.0], &b2, 0, 0, 0.5).unwrap().unwrap();
        assert_eq!(r.loss, r2.loss);
        assert_eq!(r.grad, r2.grad);
    }

    #[test]
    fn more_similar_positive_lowers_loss() {
        let b1 = bank(vec![vec![0.8, 0.6], vec![0.0, 1.0]], vec![0, 1], vec![0, 0]);
        let b2 = bank(vec![vec![0.96, 0.28], vec![0.0, 1.0]], vec![0, 1], vec![0, 0]);
        let l1 = scene_contrast(&[1.0, 0.0], &b1, 0, 0.5).unwrap().unwrap().loss;
        let l2 = scene_contrast(&[1.0, 0.0], &b2, 0, 0.5).unwrap().unwrap().loss;
        assert!(l2 < l1);
    }

    #[test]
    fn classification_values() {
        let r = linear_classification(&[0.0; 5], 2).unwrap();
        assert!((r.loss - 5f64.ln()).abs() < 1e-15);
        let r = linear_classification(&[0.0, 50.0, 0.0], 1).unwrap();
        assert!(r.loss < 1e-20);
        assert!(linear_classification(&[0.0, 1.0], 2).is_err());
    }

    #[test]
    fn bad_temperature_rejected() {
        let b = bank(vec![vec![1.0, 0.0]], vec![0], vec![0]);
        assert!(scene_contrast(&[1.0, 0.0], &b, 0, 0.0).is_err());
    }
}
