//! Lukasiewicz fuzzy semantics and the focal log-product aggregator.
//!
//! Truth values live in `[0, 1]` and are graph nodes, so every connective is
//! differentiable (with subgradients at the clamp kinks):
//!
//! * `not(a)   = 1 - a`
//! * `or(a,b)  = min(1, a + b)`
//! * `and(a,b) = max(0, a + b - 1)`
//! * `implies(a,b) = min(1, 1 - a + b)`
//!
//! `and` is the De Morgan dual of `or` under this negation, and `implies` is
//! the material form `or(not(a), b)` written directly.
//!
//! A clause is a weighted multiset of literal truth values `x_i`; its loss is
//!
//! ```text
//! L = sum_i alpha_i * (1 - x_i)^gamma * (-log x_i)
//! ```
//!
//! With `gamma = 0` and unit weights this is exactly the negative
//! log-product of the literals. The per-class weights `alpha` follow the
//! effective-number-of-samples scheme over expected positive/negative counts
//! in a batch.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::autodiff::{GraphError, NodeId, Tape};

/// Graph node carrying a truth value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truth(pub NodeId);

impl Truth {
    pub fn node(self) -> NodeId {
        self.0
    }
}

/// `1 - a`.
pub fn luk_not(tape: &mut Tape, a: Truth) -> Truth {
    let neg = tape.scale(a.0, -1.0);
    Truth(tape.offset(neg, 1.0))
}

/// `min(1, a + b)`.
pub fn luk_or(tape: &mut Tape, a: Truth, b: Truth) -> Result<Truth, GraphError> {
    let s = tape.add(a.0, b.0)?;
    Ok(Truth(tape.clamp_max(s, 1.0)))
}

/// `max(0, a + b - 1)`.
pub fn luk_and(tape: &mut Tape, a: Truth, b: Truth) -> Result<Truth, GraphError> {
    let s = tape.add(a.0, b.0)?;
    let shifted = tape.offset(s, -1.0);
    Ok(Truth(tape.clamp_min(shifted, 0.0)))
}

/// `min(1, 1 - a + b)`.
pub fn luk_implies(tape: &mut Tape, a: Truth, b: Truth) -> Result<Truth, GraphError> {
    let diff = tape.sub(b.0, a.0)?;
    let shifted = tape.offset(diff, 1.0);
    Ok(Truth(tape.clamp_max(shifted, 1.0)))
}

/// Loss contribution of one literal: `alpha * (1 - x)^gamma * (-log x)`.
pub fn focal_literal_loss(tape: &mut Tape, x: Truth, alpha: f64, gamma: f64) -> NodeId {
    let one_minus = luk_not(tape, x);
    let focal = tape.powc(one_minus.0, gamma);
    let log = tape.log_guarded(x.0);
    let nll = tape.scale(log, -1.0);
    let term = tape.mul(focal, nll).expect("focal factors share shape");
    tape.scale(term, alpha)
}

/// Sum of focal literal losses over a clause, in the given literal order.
pub fn focal_log_product(
    tape: &mut Tape,
    literals: &[(Truth, f64)],
    gamma: f64,
) -> Result<NodeId, GraphError> {
    let terms: Vec<NodeId> = literals
        .iter()
        .map(|(x, alpha)| focal_literal_loss(tape, *x, *alpha, gamma))
        .collect();
    if terms.is_empty() {
        let zero = tape.leaf(crate::autodiff::Tensor::scalar(0.0));
        return Ok(zero);
    }
    let stacked = tape.concat(&terms)?;
    Ok(tape.sum(stacked))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregatorVariant {
    /// Plain negative log-product: `gamma` is forced to 0.
    LogProduct,
    /// Focal weighting with the configured `gamma`.
    FocalLogProduct,
}

/// How clause losses are aggregated and weighted.
#[derive(Debug, Clone, Copy)]
pub struct AggregatorConfig {
    pub variant: AggregatorVariant,
    pub gamma: f64,
    pub use_alpha: bool,
    pub beta: f64,
}

impl AggregatorConfig {
    pub fn focal(gamma: f64, use_alpha: bool, beta: f64) -> Self {
        Self {
            variant: AggregatorVariant::FocalLogProduct,
            gamma,
            use_alpha,
            beta,
        }
    }

    pub fn effective_gamma(&self) -> f64 {
        match self.variant {
            AggregatorVariant::LogProduct => 0.0,
            AggregatorVariant::FocalLogProduct => self.gamma,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum WeightError {
    #[error("batch size must be even and positive, got {0}")]
    BadBatchSize(usize),
    #[error("class frequency must lie in [0, 1], got {0}")]
    BadFrequency(f64),
    #[error("beta must lie in [0, 1), got {0}")]
    BadBeta(f64),
    #[error("foreground fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
}

/// Effective-number weight for a sample count: `(1 - beta) / (1 - beta^n)`,
/// with the convention that a zero count maps to weight 0.
fn effective_weight(count: f64, beta: f64) -> f64 {
    if count <= 0.0 {
        return 0.0;
    }
    if beta == 0.0 {
        return 1.0;
    }
    (1.0 - beta) / (1.0 - beta.powf(count))
}

/// Positive/negative literal weights for a foreground class that occupies a
/// fraction `p_c` of foreground boxes, with foreground expected to fill
/// `fg_fraction` of a size-`n` batch.
///
/// Expected counts:
/// `pos_c = fg_fraction * n * p_c`,
/// `neg_c = (1 - fg_fraction) * n + fg_fraction * n * (1 - p_c)`.
pub fn class_weights_with_fraction(
    p_c: f64,
    n: usize,
    beta: f64,
    fg_fraction: f64,
) -> Result<(f64, f64), WeightError> {
    if n == 0 || n % 2 != 0 {
        return Err(WeightError::BadBatchSize(n));
    }
    if !(0.0..=1.0).contains(&p_c) || !p_c.is_finite() {
        return Err(WeightError::BadFrequency(p_c));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(WeightError::BadBeta(beta));
    }
    if !(fg_fraction > 0.0 && fg_fraction < 1.0) {
        return Err(WeightError::BadFraction(fg_fraction));
    }
    let nf = n as f64;
    let pos_c = fg_fraction * nf * p_c;
    let neg_c = (1.0 - fg_fraction) * nf + fg_fraction * nf * (1.0 - p_c);
    Ok((effective_weight(pos_c, beta), effective_weight(neg_c, beta)))
}

/// [`class_weights_with_fraction`] with the default half-foreground batch.
pub fn class_weights(p_c: f64, n: usize, beta: f64) -> Result<(f64, f64), WeightError> {
    class_weights_with_fraction(p_c, n, beta, 0.5)
}

/// Per-class literal weights derived from dataset-level class frequencies.
#[derive(Debug, Clone)]
pub struct ClassStats {
    pub batch_size: usize,
    pub beta: f64,
    pub fg_fraction: f64,
    pub entries: BTreeMap<String, ClassWeightEntry>,
    /// Weights for a background clause: positives are the background boxes.
    pub background: ClassWeightEntry,
}

#[derive(Debug, Clone, Copy)]
pub struct ClassWeightEntry {
    pub freq: f64,
    pub pos_count: f64,
    pub neg_count: f64,
    pub alpha_pos: f64,
    pub alpha_neg: f64,
}

impl ClassStats {
    /// `counts` holds foreground box counts per class; frequencies are their
    /// normalised fractions. Classes absent from `counts` get frequency 0.
    pub fn compute(
        classes: &[String],
        counts: &BTreeMap<String, usize>,
        batch_size: usize,
        beta: f64,
        fg_fraction: f64,
    ) -> Result<Self, WeightError> {
        let total: usize = classes.iter().map(|c| counts.get(c).copied().unwrap_or(0)).sum();
        let mut entries = BTreeMap::new();
        for class in classes {
            let count = counts.get(class).copied().unwrap_or(0);
            let freq = if total == 0 {
                0.0
            } else {
                count as f64 / total as f64
            };
            let (alpha_pos, alpha_neg) =
                class_weights_with_fraction(freq, batch_size, beta, fg_fraction)?;
            let nf = batch_size as f64;
            entries.insert(
                class.clone(),
                ClassWeightEntry {
                    freq,
                    pos_count: fg_fraction * nf * freq,
                    neg_count: (1.0 - fg_fraction) * nf + fg_fraction * nf * (1.0 - freq),
                    alpha_pos,
                    alpha_neg,
                },
            );
        }
        let nf = batch_size as f64;
        let bg_pos = (1.0 - fg_fraction) * nf;
        let bg_neg = fg_fraction * nf;
        let background = ClassWeightEntry {
            freq: 1.0 - fg_fraction,
            pos_count: bg_pos,
            neg_count: bg_neg,
            alpha_pos: effective_weight(bg_pos, beta),
            alpha_neg: effective_weight(bg_neg, beta),
        };
        Ok(Self {
            batch_size,
            beta,
            fg_fraction,
            entries,
            background,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn truth(tape: &mut Tape, x: f64) -> Truth {
        Truth(tape.leaf(Tensor::scalar(x)))
    }

    fn eval(tape: &mut Tape, t: Truth) -> f64 {
        tape.forward().unwrap();
        tape.value(t.0).item()
    }

    #[test]
    fn connective_values_match_definitions() {
        let mut tape = Tape::new();
        let a = truth(&mut tape, 0.3);
        let b = truth(&mut tape, 0.9);
        let n = luk_not(&mut tape, a);
        let o = luk_or(&mut tape, a, b).unwrap();
        let c = luk_and(&mut tape, a, b).unwrap();
        let i = luk_implies(&mut tape, b, a).unwrap();
        tape.forward().unwrap();
        assert!((tape.value(n.0).item() - 0.7).abs() < 1e-15);
        assert_eq!(tape.value(o.0).item(), 1.0);
        assert!((tape.value(c.0).item() - 0.2).abs() < 1e-15);
        // implies(0.9, 0.3) = min(1, 1 - 0.9 + 0.3) = 0.4
        assert!((tape.value(i.0).item() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn implies_with_false_antecedent_is_true() {
        let mut tape = Tape::new();
        let a = truth(&mut tape, 0.0);
        let b = truth(&mut tape, 0.0);
        let i = luk_implies(&mut tape, a, b).unwrap();
        assert_eq!(eval(&mut tape, i), 1.0);
    }

    #[test]
    fn double_negation_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::new();
        let mut checks = Vec::new();
        for _ in 0..1000 {
            let x: f64 = rng.gen();
            let t = truth(&mut tape, x);
            let nn = luk_not(&mut tape, t);
            let back = luk_not(&mut tape, nn);
            checks.push((x, back));
        }
        tape.forward().unwrap();
        for (x, back) in checks {
            assert_eq!(tape.value(back.0).item(), x);
        }
    }

    #[test]
    fn or_identity_and_absorption() {
        let mut tape = Tape::new();
        let x = truth(&mut tape, 0.42);
        let zero = truth(&mut tape, 0.0);
        let one = truth(&mut tape, 1.0);
        let idl = luk_or(&mut tape, x, zero).unwrap();
        let absorb = luk_or(&mut tape, x, one).unwrap();
        tape.forward().unwrap();
        assert_eq!(tape.value(idl.0).item(), 0.42);
        assert_eq!(tape.value(absorb.0).item(), 1.0);
    }

    #[test]
    fn or_commutative_and_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::new();
        let mut checks = Vec::new();
        for _ in 0..300 {
            let (a, b, c): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
            let (ta, tb, tc) = (
                truth(&mut tape, a),
                truth(&mut tape, b),
                truth(&mut tape, c),
            );
            let ab = luk_or(&mut tape, ta, tb).unwrap();
            let ba = luk_or(&mut tape, tb, ta).unwrap();
            let ab_c = {
                let l = luk_or(&mut tape, ab, tc).unwrap();
                l
            };
            let a_bc = {
                let bc = luk_or(&mut tape, tb, tc).unwrap();
                luk_or(&mut tape, ta, bc).unwrap()
            };
            checks.push((ab, ba, ab_c, a_bc));
        }
        tape.forward().unwrap();
        for (ab, ba, ab_c, a_bc) in checks {
            assert_eq!(tape.value(ab.0).item(), tape.value(ba.0).item());
            assert_eq!(tape.value(ab_c.0).item(), tape.value(a_bc.0).item());
        }
    }

    #[test]
    fn de_morgan_holds_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut tape = Tape::new();
        let mut checks = Vec::new();
        for _ in 0..2000 {
            let (a, b): (f64, f64) = (rng.gen(), rng.gen());
            let (ta, tb) = (truth(&mut tape, a), truth(&mut tape, b));
            let and_ab = luk_and(&mut tape, ta, tb).unwrap();
            let na = luk_not(&mut tape, ta);
            let nb = luk_not(&mut tape, tb);
            let or_n = luk_or(&mut tape, na, nb).unwrap();
            let rhs = luk_not(&mut tape, or_n);
            checks.push((and_ab, rhs));
        }
        tape.forward().unwrap();
        for (lhs, rhs) in checks {
            let d = (tape.value(lhs.0).item() - tape.value(rhs.0).item()).abs();
            assert!(d < 1e-12, "De Morgan violated by {d}");
        }
    }

    #[test]
    fn connectives_stay_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let mut nodes = Vec::new();
        for _ in 0..500 {
            let (a, b): (f64, f64) = (rng.gen(), rng.gen());
            let (ta, tb) = (truth(&mut tape, a), truth(&mut tape, b));
            nodes.push(luk_or(&mut tape, ta, tb).unwrap());
            nodes.push(luk_and(&mut tape, ta, tb).unwrap());
            nodes.push(luk_implies(&mut tape, ta, tb).unwrap());
            nodes.push(luk_not(&mut tape, ta));
        }
        tape.forward().unwrap();
        for n in nodes {
            let v = tape.value(n.0).item();
            assert!((0.0..=1.0).contains(&v), "value {v} outside [0, 1]");
        }
    }

    #[test]
    fn focal_loss_single_literal_values() {
        // x = 0.5, gamma = 0: loss = -ln 0.5.
        // x = 0.5, gamma = 2: loss = 0.25 * -ln 0.5.
        let mut tape = Tape::new();
        let x = truth(&mut tape, 0.5);
        let plain = focal_log_product(&mut tape, &[(x, 1.0)], 0.0).unwrap();
        let focal = focal_log_product(&mut tape, &[(x, 1.0)], 2.0).unwrap();
        tape.forward().unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((tape.value(plain).item() - ln2).abs() < 1e-15);
        assert!((tape.value(focal).item() - 0.25 * ln2).abs() < 1e-15);
    }

    #[test]
    fn focal_loss_is_zero_at_full_truth() {
        let mut tape = Tape::new();
        let x = truth(&mut tape, 1.0);
        let loss = focal_log_product(&mut tape, &[(x, 3.0)], 2.0).unwrap();
        tape.forward().unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
    }

    #[test]
    fn gamma_zero_unit_alpha_equals_log_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut tape = Tape::new();
        let mut literals = Vec::new();
        let mut xs = Vec::new();
        for _ in 0..64 {
            let x: f64 = rng.gen_range(0.01..1.0);
            xs.push(x);
            literals.push((truth(&mut tape, x), 1.0));
        }
        let loss = focal_log_product(&mut tape, &literals, 0.0).unwrap();
        tape.forward().unwrap();
        let reference: f64 = xs.iter().map(|x| -x.ln()).sum();
        assert!(
            (tape.value(loss).item() - reference).abs() < 1e-12,
            "{} vs {}",
            tape.value(loss).item(),
            reference
        );
    }

    #[test]
    fn loss_decreases_as_truth_increases() {
        let mut tape = Tape::new();
        let lo = truth(&mut tape, 0.3);
        let hi = truth(&mut tape, 0.6);
        let l_lo = focal_log_product(&mut tape, &[(lo, 1.0)], 2.0).unwrap();
        let l_hi = focal_log_product(&mut tape, &[(hi, 1.0)], 2.0).unwrap();
        tape.forward().unwrap();
        assert!(tape.value(l_hi).item() < tape.value(l_lo).item());
    }

    #[test]
    fn guarded_log_keeps_zero_truth_finite() {
        let mut tape = Tape::new();
        let x = truth(&mut tape, 0.0);
        let loss = focal_log_product(&mut tape, &[(x, 1.0)], 0.0).unwrap();
        tape.forward().unwrap();
        let v = tape.value(loss).item();
        assert!(v.is_finite());
        assert!((v - -(1e-7f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn class_weight_closed_forms() {
        // N = 128, p = 0.25, beta = 0.999: pos = 16, neg = 112.
        let (ap, an) = class_weights(0.25, 128, 0.999).unwrap();
        let expect_pos = (1.0 - 0.999f64) / (1.0 - 0.999f64.powf(16.0));
        let expect_neg = (1.0 - 0.999f64) / (1.0 - 0.999f64.powf(112.0));
        assert!((ap - expect_pos).abs() < 1e-15);
        assert!((an - expect_neg).abs() < 1e-15);
        assert!(an < ap);
    }

    #[test]
    fn class_weight_edge_cases() {
        // Absent class: alpha_pos = 0 by convention, negatives span the batch.
        let (ap, an) = class_weights(0.0, 128, 0.999).unwrap();
        assert_eq!(ap, 0.0);
        let expect_neg = (1.0 - 0.999f64) / (1.0 - 0.999f64.powf(128.0));
        assert!((an - expect_neg).abs() < 1e-15);

        // A single positive has weight exactly 1: (1-b)/(1-b^1) = 1.
        let (ap1, _) = class_weights(2.0 / 128.0, 128, 0.999).unwrap();
        assert_eq!(ap1, 1.0);
    }

    #[test]
    fn rarer_class_gets_larger_positive_weight() {
        let (ap_rare, _) = class_weights(0.05, 128, 0.999).unwrap();
        let (ap_common, _) = class_weights(0.5, 128, 0.999).unwrap();
        assert!(ap_rare > ap_common);
    }

    #[test]
    fn class_weights_validate_inputs() {
        assert_eq!(
            class_weights(0.5, 0, 0.999).unwrap_err(),
            WeightError::BadBatchSize(0)
        );
        assert_eq!(
            class_weights(0.5, 127, 0.999).unwrap_err(),
            WeightError::BadBatchSize(127)
        );
        assert!(matches!(
            class_weights(1.5, 128, 0.999).unwrap_err(),
            WeightError::BadFrequency(_)
        ));
        assert!(matches!(
            class_weights(0.5, 128, 1.0).unwrap_err(),
            WeightError::BadBeta(_)
        ));
    }

    #[test]
    fn class_stats_frequencies_sum_to_one() {
        let classes: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let mut counts = BTreeMap::new();
        counts.insert("a".to_string(), 10);
        counts.insert("b".to_string(), 30);
        counts.insert("c".to_string(), 60);
        let stats = ClassStats::compute(&classes, &counts, 128, 0.999, 0.5).unwrap();
        let total: f64 = stats.entries.values().map(|e| e.freq).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(stats.entries["a"].alpha_pos > stats.entries["c"].alpha_pos);
        // Background clause weights: pos = neg = N/2 under the default split.
        assert_eq!(stats.background.pos_count, 64.0);
        assert_eq!(stats.background.alpha_pos, stats.background.alpha_neg);
    }
}
