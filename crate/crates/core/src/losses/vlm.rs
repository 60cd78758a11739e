//! Language-side loss kernels: label-smoothed cross-entropy over logits,
//! schema consistency loss over structural token positions, and the
//! composite `ce_ls + 0.2 * (schema + class_balanced_focal)`.

use super::{class_balanced_focal, LossError, VLM_AUX_WEIGHT};
use serde::Serialize;

/// Numerically stable log-softmax.
fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn check_logits(logits: &[f64]) -> Result<(), LossError> {
    if logits.is_empty() || logits.iter().any(|z| !z.is_finite()) {
        return Err(LossError::InvalidLogits);
    }
    Ok(())
}

/// Cross-entropy with label smoothing: softmax the logits, smooth the
/// one-hot target (gold gets `1 - epsilon`, the rest share `epsilon`
/// equally), and take `-sum_k y_k ln p_k`.
pub fn ce_label_smoothing(logits: &[f64], gold: usize, epsilon: f64) -> Result<f64, LossError> {
    let log_p = ce_prepare(logits, gold, epsilon)?;
    let k = logits.len();
    let off = if k > 1 { epsilon / (k - 1) as f64 } else { 0.0 };
    let mut loss = 0.0;
    for (i, lp) in log_p.iter().enumerate() {
        let y = if i == gold { 1.0 - epsilon } else { off };
        loss -= y * lp;
    }
    Ok(loss)
}

/// Gradient of [`ce_label_smoothing`] with respect to the logits:
/// `p_k - y_k` exactly.
pub fn ce_label_smoothing_grad(
    logits: &[f64],
    gold: usize,
    epsilon: f64,
) -> Result<Vec<f64>, LossError> {
    let log_p = ce_prepare(logits, gold, epsilon)?;
    let k = logits.len();
    let off = if k > 1 { epsilon / (k - 1) as f64 } else { 0.0 };
    Ok(log_p
        .iter()
        .enumerate()
        .map(|(i, lp)| lp.exp() - if i == gold { 1.0 - epsilon } else { off })
        .collect())
}

fn ce_prepare(logits: &[f64], gold: usize, epsilon: f64) -> Result<Vec<f64>, LossError> {
    check_logits(logits)?;
    if gold >= logits.len() {
        return Err(LossError::GoldOutOfRange {
            gold,
            classes: logits.len(),
        });
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(LossError::InvalidEpsilon(epsilon));
    }
    if epsilon > 0.0 && logits.len() < 2 {
        return Err(LossError::TooFewClasses);
    }
    Ok(log_softmax(logits))
}

/// Everything the language-side losses need for one output sequence:
/// per-position logits over the vocabulary, gold token ids, the structural
/// token mask, the invalid-token count, and the hyperparameters.
#[derive(Debug, Clone)]
pub struct VlmLossInputs {
    /// One logit row per output position.
    pub logits: Vec<Vec<f64>>,
    /// Gold token id per position.
    pub gold: Vec<usize>,
    /// True at positions holding structural tokens.
    pub structural_mask: Vec<bool>,
    /// Tokens in the output that violate the schema.
    pub invalid_count: usize,
    /// Weight on the invalid-token fraction.
    pub schema_weight: f64,
    /// Per-vocabulary-id class weight, all positive.
    pub class_weights: Vec<f64>,
    pub cb_focal_gamma: f64,
    pub label_smoothing: f64,
}

impl VlmLossInputs {
    pub fn validate(&self) -> Result<(), LossError> {
        let n = self.logits.len();
        if n == 0 {
            return Err(LossError::InvalidSequence("empty output".into()));
        }
        if self.gold.len() != n || self.structural_mask.len() != n {
            return Err(LossError::InvalidSequence(format!(
                "{} logit rows, {} gold ids, {} mask entries",
                n,
                self.gold.len(),
                self.structural_mask.len()
            )));
        }
        let vocab = self.class_weights.len();
        for (t, row) in self.logits.iter().enumerate() {
            check_logits(row)?;
            if row.len() != vocab {
                return Err(LossError::InvalidSequence(format!(
                    "position {t} has {} logits for {vocab} class weights",
                    row.len()
                )));
            }
            if self.gold[t] >= row.len() {
                return Err(LossError::GoldOutOfRange {
                    gold: self.gold[t],
                    classes: row.len(),
                });
            }
        }
        if self
            .class_weights
            .iter()
            .any(|&w| !(w > 0.0) || !w.is_finite())
        {
            return Err(LossError::InvalidClassWeight(f64::NAN));
        }
        if self.invalid_count > n {
            return Err(LossError::InvalidSequence(format!(
                "invalid_count {} exceeds output length {n}",
                self.invalid_count
            )));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(LossError::InvalidEpsilon(self.label_smoothing));
        }
        if !(self.schema_weight >= 0.0) || !(self.cb_focal_gamma >= 0.0) {
            return Err(LossError::InvalidSequence("negative hyperparameter".into()));
        }
        Ok(())
    }
}

/// Schema consistency loss: negative log-probability of the gold token
/// summed over structural positions, plus `schema_weight` times the
/// invalid-token fraction `invalid_count / |y|`.
pub fn schema_loss(inputs: &VlmLossInputs) -> Result<f64, LossError> {
    inputs.validate()?;
    let mut structural = 0.0;
    for (t, &is_structural) in inputs.structural_mask.iter().enumerate() {
        if is_structural {
            structural -= log_softmax(&inputs.logits[t])[inputs.gold[t]];
        }
    }
    let fraction = inputs.invalid_count as f64 / inputs.gold.len() as f64;
    Ok(structural + inputs.schema_weight * fraction)
}

/// The equivalent weighted form `-sum_t w_t ln P(gold_t)` with one weight
/// per position (zero for non-structural positions).
pub fn schema_loss_weighted(
    logits: &[Vec<f64>],
    gold: &[usize],
    weights: &[f64],
) -> Result<f64, LossError> {
    if logits.is_empty() || logits.len() != gold.len() || logits.len() != weights.len() {
        return Err(LossError::InvalidSequence(format!(
            "{} logit rows, {} gold ids, {} weights",
            logits.len(),
            gold.len(),
            weights.len()
        )));
    }
    let mut loss = 0.0;
    for ((row, &g), &w) in logits.iter().zip(gold).zip(weights) {
        check_logits(row)?;
        if g >= row.len() {
            return Err(LossError::GoldOutOfRange {
                gold: g,
                classes: row.len(),
            });
        }
        loss -= w * log_softmax(row)[g];
    }
    Ok(loss)
}

/// Composite language loss and its components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VlmLossBreakdown {
    pub ce_ls: f64,
    pub schema: f64,
    pub cb_focal: f64,
    pub total: f64,
}

/// Compose the three language-side components:
/// `ce_ls + 0.2 * (schema + cb_focal)`. The cross-entropy and focal terms
/// are means over output positions; the schema term follows
/// [`schema_loss`].
pub fn vlm_total_loss(inputs: &VlmLossInputs) -> Result<VlmLossBreakdown, LossError> {
    inputs.validate()?;
    let n = inputs.gold.len() as f64;

    let mut ce_sum = 0.0;
    let mut focal_sum = 0.0;
    for (t, row) in inputs.logits.iter().enumerate() {
        ce_sum += ce_label_smoothing(row, inputs.gold[t], inputs.label_smoothing)?;
        let p_gold = log_softmax(row)[inputs.gold[t]].exp();
        focal_sum += class_balanced_focal(
            p_gold.min(1.0),
            inputs.class_weights[inputs.gold[t]],
            inputs.cb_focal_gamma,
        )?;
    }
    let ce_ls = ce_sum / n;
    let cb_focal = focal_sum / n;
    let schema = schema_loss(inputs)?;
    Ok(VlmLossBreakdown {
        ce_ls,
        schema,
        cb_focal,
        total: vlm_total_from_components(ce_ls, schema, cb_focal),
    })
}

/// `ce_ls + 0.2 * (schema + cb_focal)` from precomputed component values.
pub fn vlm_total_from_components(ce_ls: f64, schema: f64, cb_focal: f64) -> f64 {
    ce_ls + VLM_AUX_WEIGHT * (schema + cb_focal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ce_zero_when_certain_and_unsmoothed() {
        // Effectively one-hot softmax via a huge margin.
        let logits = vec![50.0, 0.0, 0.0];
        let v = ce_label_smoothing(&logits, 0, 0.0).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn ce_uniform_logits_give_ln_k() {
        for k in [2usize, 5, 17] {
            let logits = vec![0.7; k];
            let v = ce_label_smoothing(&logits, 0, 0.0).unwrap();
            assert!((v - (k as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn ce_fixture_with_smoothing() {
        // Direct softmax/inner-product arithmetic on a fixed logit vector.
        let logits = [1.5, -0.25, 0.75, 2.0];
        let max: f64 = 2.0;
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        let eps = 0.1;
        let mut expected = 0.0;
        for (i, z) in logits.iter().enumerate() {
            let y = if i == 2 { 1.0 - eps } else { eps / 3.0 };
            expected -= y * (z - lse);
        }
        let v = ce_label_smoothing(&logits, 2, eps).unwrap();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn ce_rejects_bad_inputs() {
        assert!(ce_label_smoothing(&[], 0, 0.0).is_err());
        assert!(ce_label_smoothing(&[1.0, 2.0], 5, 0.0).is_err());
        assert!(ce_label_smoothing(&[1.0, 2.0], 0, 1.0).is_err());
        assert!(ce_label_smoothing(&[1.0], 0, 0.1).is_err());
        assert!(ce_label_smoothing(&[f64::NAN, 1.0], 0, 0.0).is_err());
    }

    #[test]
    fn ce_grad_is_p_minus_y() {
        let logits = [0.2, -1.0, 0.5];
        let g = ce_label_smoothing_grad(&logits, 1, 0.1).unwrap();
        let sum: f64 = g.iter().sum();
        assert!(sum.abs() < 1e-12, "gradient rows sum to zero");
    }

    fn seq_inputs() -> VlmLossInputs {
        VlmLossInputs {
            logits: vec![
                vec![2.0, 0.0, -1.0],
                vec![0.0, 3.0, 0.5],
                vec![-0.5, 0.0, 1.5],
            ],
            gold: vec![0, 1, 2],
            structural_mask: vec![true, false, true],
            invalid_count: 0,
            schema_weight: 1.0,
            class_weights: vec![1.0, 1.0, 1.0],
            cb_focal_gamma: 2.0,
            label_smoothing: 0.1,
        }
    }

    #[test]
    fn schema_zero_when_structural_tokens_certain() {
        let mut inputs = seq_inputs();
        inputs.logits = vec![
            vec![60.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 60.0],
        ];
        let v = schema_loss(&inputs).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn schema_penalty_alone_is_lambda() {
        let mut inputs = seq_inputs();
        inputs.logits = vec![
            vec![60.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 60.0],
        ];
        inputs.invalid_count = 3;
        inputs.schema_weight = 0.7;
        let v = schema_loss(&inputs).unwrap();
        assert!((v - 0.7).abs() < 1e-12);
    }

    #[test]
    fn schema_fixture_three_structural_positions() {
        let mut inputs = seq_inputs();
        inputs.structural_mask = vec![true, true, true];
        inputs.invalid_count = 1;
        inputs.schema_weight = 2.0;
        // Direct summation with independently computed log-softmax values.
        let mut expected = 0.0;
        for (row, &g) in inputs.logits.iter().zip(&inputs.gold) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            expected -= row[g] - lse;
        }
        expected += 2.0 * (1.0 / 3.0);
        assert!((schema_loss(&inputs).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn schema_weighted_form_matches_masked_sum() {
        let inputs = seq_inputs();
        let weights: Vec<f64> = inputs
            .structural_mask
            .iter()
            .map(|&m| if m { 1.0 } else { 0.0 })
            .collect();
        let base = {
            let mut no_penalty = inputs.clone();
            no_penalty.schema_weight = 0.0;
            schema_loss(&no_penalty).unwrap()
        };
        let weighted = schema_loss_weighted(&inputs.logits, &inputs.gold, &weights).unwrap();
        assert!((base - weighted).abs() < 1e-12);
    }

    #[test]
    fn schema_rejects_empty_output() {
        let mut inputs = seq_inputs();
        inputs.logits.clear();
        inputs.gold.clear();
        inputs.structural_mask.clear();
        assert!(schema_loss(&inputs).is_err());
    }

    #[test]
    fn vlm_total_composition() {
        assert_eq!(vlm_total_from_components(0.0, 0.0, 0.0), 0.0);
        assert!((vlm_total_from_components(1.0, 0.5, 0.5) - 1.2).abs() < 1e-15);
    }

    #[test]
    fn vlm_total_matches_reported_final_row() {
        // Components (0.93, 0.14, 0.19) compose to 0.996, within half a
        // cent of the reported 1.00 total.
        let total = vlm_total_from_components(0.93, 0.14, 0.19);
        assert!((total - 1.00).abs() < 0.005, "{total}");
    }

    #[test]
    fn vlm_total_from_sequence_consistent_with_parts() {
        let inputs = seq_inputs();
        let b = vlm_total_loss(&inputs).unwrap();
        assert!((b.total - vlm_total_from_components(b.ce_ls, b.schema, b.cb_focal)).abs() < 1e-15);
        assert!(b.ce_ls > 0.0 && b.schema > 0.0 && b.cb_focal > 0.0);
    }
}
