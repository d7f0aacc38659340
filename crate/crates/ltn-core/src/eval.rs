//! Inference scoring and ranked-matching average precision, plus tape-free
//! satisfaction measurements for auditing a trained model against its theory.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::data::Dataset;
use crate::detect::{
    ground_pair, BoundingBox, DetectError, ProposalEmbedding, BACKGROUND_LABEL, PARTOF_PREDICATE,
};
use crate::fol::{Formula, KnowledgeBase, Term};
use crate::ground::PredicateSet;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("predicate `{name}` expects input dimension {expected}, dataset embeds {actual}")]
    DimensionMismatch {
        name: String,
        expected: usize,
        actual: usize,
    },
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("no parameters for predicate `{0}`")]
    UnknownPredicate(String),
    #[error("constant `{0}` does not name a proposal index")]
    BadConstant(String),
    #[error("nested quantifier in measured axiom")]
    NestedQuantifier,
}

/// One scored proposal: the truth value of an is-a predicate at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub image_id: String,
    pub bbox: BoundingBox,
    pub class: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAp {
    pub class: String,
    pub ap: f64,
    pub n_gt: usize,
    pub n_det: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class: Vec<ClassAp>,
    /// Unweighted mean AP over classes with at least one ground truth.
    pub map: f64,
}

/// Scores every proposal with every is-a predicate, background included.
/// The part-of predicate is not a detection class and is never scored here.
pub fn score_dataset(
    set: &PredicateSet,
    dataset: &Dataset,
) -> Result<Vec<Detection>, EvalError> {
    for (name, params) in &set.preds {
        if name != PARTOF_PREDICATE && params.input_dim != dataset.embed_dim {
            return Err(EvalError::DimensionMismatch {
                name: name.clone(),
                expected: params.input_dim,
                actual: dataset.embed_dim,
            });
        }
    }
    let mut out = Vec::new();
    for image in &dataset.images {
        for p in &image.proposals {
            for (name, params) in &set.preds {
                if name == PARTOF_PREDICATE {
                    continue;
                }
                out.push(Detection {
                    image_id: image.id.clone(),
                    bbox: p.bbox,
                    class: name.clone(),
                    score: params.eval(&p.z),
                });
            }
        }
    }
    Ok(out)
}

/// All-point interpolated average precision with greedy matching. Detections
/// are ranked by descending score, ties keep slice order; each detection
/// matches the highest-overlap ground truth of its image, counts as a true
/// positive when that overlap reaches the threshold and the ground truth is
/// still free, and as a false positive otherwise.
pub fn average_precision(
    detections: &[Detection],
    ground_truth: &BTreeMap<String, Vec<BoundingBox>>,
    iou_threshold: f64,
) -> f64 {
    let n_gt: usize = ground_truth.values().map(Vec::len).sum();
    if n_gt == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));

    let mut taken: BTreeMap<&str, Vec<bool>> = ground_truth
        .iter()
        .map(|(id, boxes)| (id.as_str(), vec![false; boxes.len()]))
        .collect();
    let mut recalls = Vec::with_capacity(order.len());
    let mut precisions = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, &i) in order.iter().enumerate() {
        let det = &detections[i];
        let mut best: Option<(usize, f64)> = None;
        if let Some(boxes) = ground_truth.get(&det.image_id) {
            for (g, gt_box) in boxes.iter().enumerate() {
                let overlap = det.bbox.iou(gt_box);
                if best.is_none_or(|(_, b)| overlap > b) {
                    best = Some((g, overlap));
                }
            }
        }
        if let Some((g, overlap)) = best {
            let free = &mut taken.get_mut(det.image_id.as_str()).unwrap()[g];
            if overlap >= iou_threshold && !*free {
                *free = true;
                tp += 1;
            }
        }
        recalls.push(tp as f64 / n_gt as f64);
        precisions.push(tp as f64 / (rank + 1) as f64);
    }

    let mut mrec = Vec::with_capacity(recalls.len() + 2);
    mrec.push(0.0);
    mrec.extend(recalls);
    mrec.push(1.0);
    let mut mpre = Vec::with_capacity(precisions.len() + 2);
    mpre.push(0.0);
    mpre.extend(precisions);
    mpre.push(0.0);
    // Precision envelope, then the exact area under it.
    for i in (0..mpre.len() - 1).rev() {
        mpre[i] = mpre[i].max(mpre[i + 1]);
    }
    let mut ap = 0.0;
    for i in 0..mrec.len() - 1 {
        if mrec[i + 1] > mrec[i] {
            ap += (mrec[i + 1] - mrec[i]) * mpre[i + 1];
        }
    }
    ap
}

/// Scores the dataset and reports per-class AP at the given IoU threshold.
/// Ground truth is every foreground proposal under its own label; the
/// background predicate is scored but reported under no class. Classes
/// without ground truth carry AP 0 and stay out of the mean.
pub fn evaluate(
    set: &PredicateSet,
    dataset: &Dataset,
    iou_threshold: f64,
) -> Result<EvalReport, EvalError> {
    let detections = score_dataset(set, dataset)?;

    let mut gt: BTreeMap<&str, BTreeMap<String, Vec<BoundingBox>>> = BTreeMap::new();
    for image in &dataset.images {
        for p in &image.proposals {
            if !p.is_background() {
                gt.entry(p.label.as_str())
                    .or_default()
                    .entry(image.id.clone())
                    .or_default()
                    .push(p.bbox);
            }
        }
    }

    let mut per_class = Vec::new();
    let mut ap_sum = 0.0;
    let mut ap_count = 0usize;
    for name in set.preds.keys() {
        if name == PARTOF_PREDICATE || name == BACKGROUND_LABEL {
            continue;
        }
        let class_dets: Vec<Detection> = detections
            .iter()
            .filter(|d| &d.class == name)
            .cloned()
            .collect();
        let empty = BTreeMap::new();
        let class_gt = gt.get(name.as_str()).unwrap_or(&empty);
        let n_gt: usize = class_gt.values().map(Vec::len).sum();
        let ap = average_precision(&class_dets, class_gt, iou_threshold);
        if n_gt > 0 {
            ap_sum += ap;
            ap_count += 1;
        }
        per_class.push(ClassAp {
            class: name.clone(),
            ap,
            n_gt,
            n_det: class_dets.len(),
        });
    }
    let map = if ap_count > 0 {
        ap_sum / ap_count as f64
    } else {
        0.0
    };
    Ok(EvalReport { per_class, map })
}

/// One `class AP n_gt n_det` line per class, then the `mAP` line,
/// tab separated.
pub fn report_to_text(report: &EvalReport) -> String {
    let mut out = String::new();
    for c in &report.per_class {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", c.class, c.ap, c.n_gt, c.n_det));
    }
    out.push_str(&format!("mAP\t{}\n", report.map));
    out
}

fn luk_not(a: f64) -> f64 {
    1.0 - a
}

fn luk_and(a: f64, b: f64) -> f64 {
    (a + b - 1.0).max(0.0)
}

fn luk_or(a: f64, b: f64) -> f64 {
    (a + b).min(1.0)
}

fn luk_implies(a: f64, b: f64) -> f64 {
    (1.0 - a + b).min(1.0)
}

/// Tape-free formula evaluation over one image's proposals. Scores flow
/// through the same straight-line predicate path the detections use, so this
/// is an independent check on anything the compiled graph reports.
struct ScalarScorer<'a> {
    set: &'a PredicateSet,
    proposals: &'a [ProposalEmbedding],
    image_width: f64,
    image_height: f64,
    cache: HashMap<(String, Vec<usize>), f64>,
}

impl<'a> ScalarScorer<'a> {
    fn atom(&mut self, pred: &str, idxs: &[usize]) -> Result<f64, EvalError> {
        let key = (pred.to_string(), idxs.to_vec());
        if let Some(&v) = self.cache.get(&key) {
            return Ok(v);
        }
        let params = self
            .set
            .preds
            .get(pred)
            .ok_or_else(|| EvalError::UnknownPredicate(pred.to_string()))?;
        let input = match idxs {
            [i] => self.proposals[*i].z.clone(),
            [m, l] => ground_pair(
                &self.proposals[*m],
                &self.proposals[*l],
                self.image_width,
                self.image_height,
            )?,
            _ => {
                return Err(EvalError::UnknownPredicate(pred.to_string()));
            }
        };
        if input.len() != params.input_dim {
            return Err(EvalError::DimensionMismatch {
                name: pred.to_string(),
                expected: params.input_dim,
                actual: input.len(),
            });
        }
        let v = params.eval(&input);
        self.cache.insert(key, v);
        Ok(v)
    }

    fn body(
        &mut self,
        f: &Formula,
        bindings: &BTreeMap<&str, usize>,
    ) -> Result<f64, EvalError> {
        match f {
            Formula::Atom { pred, args } => {
                let mut idxs = Vec::with_capacity(args.len());
                for arg in args {
                    let i = match arg {
                        Term::Variable(v) => *bindings
                            .get(v.as_str())
                            .ok_or_else(|| EvalError::BadConstant(v.clone()))?,
                        Term::Constant(c) => c
                            .parse::<usize>()
                            .ok()
                            .filter(|&i| i < self.proposals.len())
                            .ok_or_else(|| EvalError::BadConstant(c.clone()))?,
                    };
                    idxs.push(i);
                }
                self.atom(pred, &idxs)
            }
            Formula::Not(a) => Ok(luk_not(self.body(a, bindings)?)),
            Formula::And(a, b) => Ok(luk_and(self.body(a, bindings)?, self.body(b, bindings)?)),
            Formula::Or(a, b) => Ok(luk_or(self.body(a, bindings)?, self.body(b, bindings)?)),
            Formula::Implies(a, b) => {
                Ok(luk_implies(self.body(a, bindings)?, self.body(b, bindings)?))
            }
            Formula::ForAll { .. } => Err(EvalError::NestedQuantifier),
        }
    }

    /// Instantiation truths of one axiom. Quantified variables range over
    /// every proposal, distinct variables never binding the same index,
    /// mirroring the training-time grounding.
    fn axiom_truths(&mut self, axiom: &Formula, out: &mut Vec<f64>) -> Result<(), EvalError> {
        match axiom {
            Formula::ForAll { vars, body } => {
                let n = self.proposals.len();
                let k = vars.len();
                if k == 0 {
                    out.push(self.body(body, &BTreeMap::new())?);
                    return Ok(());
                }
                let mut choice = vec![0usize; k];
                let mut depth = 0usize;
                // Iterative enumeration of injective assignments.
                'outer: loop {
                    if depth == k {
                        let bindings: BTreeMap<&str, usize> = vars
                            .iter()
                            .map(String::as_str)
                            .zip(choice.iter().copied())
                            .collect();
                        out.push(self.body(body, &bindings)?);
                        depth -= 1;
                        choice[depth] += 1;
                    }
                    while choice[depth] < n && choice[..depth].contains(&choice[depth]) {
                        choice[depth] += 1;
                    }
                    if choice[depth] >= n {
                        if depth == 0 {
                            break 'outer;
                        }
                        choice[depth] = 0;
                        depth -= 1;
                        choice[depth] += 1;
                    } else {
                        depth += 1;
                        if depth < k {
                            choice[depth] = 0;
                        }
                    }
                }
                Ok(())
            }
            other => {
                out.push(self.body(other, &BTreeMap::new())?);
                Ok(())
            }
        }
    }
}

/// Mean truth of each axiom over all its instantiations across the dataset,
/// keyed by the axiom's text. An axiom with no instantiation anywhere (too
/// few proposals for its variables) reads vacuously true.
pub fn axiom_satisfaction(
    set: &PredicateSet,
    kb: &KnowledgeBase,
    dataset: &Dataset,
) -> Result<BTreeMap<String, f64>, EvalError> {
    let mut out = BTreeMap::new();
    for axiom in &kb.axioms {
        let mut truths = Vec::new();
        for image in &dataset.images {
            let mut scorer = ScalarScorer {
                set,
                proposals: &image.proposals,
                image_width: image.width,
                image_height: image.height,
                cache: HashMap::new(),
            };
            scorer.axiom_truths(axiom, &mut truths)?;
        }
        let mean = if truths.is_empty() {
            1.0
        } else {
            truths.iter().sum::<f64>() / truths.len() as f64
        };
        out.insert(axiom.to_string(), mean);
    }
    Ok(out)
}

/// Unweighted mean over the per-axiom satisfactions.
pub fn mean_satisfaction(per_axiom: &BTreeMap<String, f64>) -> f64 {
    if per_axiom.is_empty() {
        return 1.0;
    }
    per_axiom.values().sum::<f64>() / per_axiom.len() as f64
}

/// Mean literal truth of each class-membership example clause over the whole
/// dataset: the predicate's score on its own proposals and the negated score
/// everywhere else, keyed `expl/isa/{class}`.
pub fn expl_clause_truths(
    set: &PredicateSet,
    dataset: &Dataset,
    classes: &[String],
    include_bg: bool,
) -> Result<BTreeMap<String, f64>, EvalError> {
    let mut roster: Vec<String> = classes.to_vec();
    if include_bg {
        roster.push(BACKGROUND_LABEL.to_string());
    }
    let mut out = BTreeMap::new();
    for class in &roster {
        let params = set
            .preds
            .get(class)
            .ok_or_else(|| EvalError::UnknownPredicate(class.clone()))?;
        if params.input_dim != dataset.embed_dim {
            return Err(EvalError::DimensionMismatch {
                name: class.clone(),
                expected: params.input_dim,
                actual: dataset.embed_dim,
            });
        }
        let mut sum = 0.0;
        let mut n = 0usize;
        for image in &dataset.images {
            for p in &image.proposals {
                let score = params.eval(&p.z);
                sum += if &p.label == class { score } else { 1.0 - score };
                n += 1;
            }
        }
        let mean = if n == 0 { 1.0 } else { sum / n as f64 };
        out.insert(format!("expl/isa/{class}"), mean);
    }
    Ok(out)
}
