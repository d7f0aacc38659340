//! Detection-flavored grounding construction.
//!
//! Proposals carry a feature embedding plus a bounding box. Unary (is-a)
//! predicates see the embedding alone, so class membership is invariant to
//! where the box sits. Binary part-of atoms see both embeddings, both boxes
//! normalized to the image extent, and the containment ratio of the first
//! box in the second.
//!
//! The example theory is one-vs-all: per class, one clause holding a
//! positive literal for every proposal labelled with that class and a
//! negated literal for every other proposal. Part-of literals are labelled
//! geometrically: an ontology-consistent pair whose part box sits almost
//! entirely inside the whole box is positive, a label-inconsistent or
//! clearly non-nested pair is negative, anything in between is left out.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::fol::{Formula, KnowledgeBase, PredicateSymbol};
use crate::fuzzy::ClassStats;
use crate::ground::{GroundLiteral, GroundingSource};

/// Label marking a background proposal in dataset files.
pub const BACKGROUND_LABEL: &str = "bg";

/// Predicate name of the part-of relation.
pub const PARTOF_PREDICATE: &str = "partOf";

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("degenerate box ({x1}, {y1}, {x2}, {y2}): corners must satisfy x2 > x1, y2 > y1")]
    DegenerateBox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("non-finite box coordinate")]
    NonFiniteBox,
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("no foreground proposals: image must be skipped")]
    NoForeground,
    #[error("batch policy requests zero foreground slots")]
    ZeroForegroundSlots,
    #[error("proposal labelled `{0}` matches no declared class")]
    UnknownLabel(String),
    #[error("ontology references undeclared class `{0}`")]
    UnknownOntologyClass(String),
    #[error("class `{0}` appears as both a whole and a part")]
    WholePartOverlap(String),
}

/// Axis-aligned box with corner coordinates, positive area enforced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, DetectError> {
        if ![x1, y1, x2, y2].iter().all(|c| c.is_finite()) {
            return Err(DetectError::NonFiniteBox);
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(DetectError::DegenerateBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn intersection_area(&self, other: &BoundingBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection_area(other);
        inter / (self.area() + other.area() - inter)
    }

    /// Corner coordinates scaled into the unit square of a W-by-H image.
    pub fn normalized(&self, width: f64, height: f64) -> [f64; 4] {
        [
            self.x1 / width,
            self.y1 / height,
            self.x2 / width,
            self.y2 / height,
        ]
    }
}

/// Fraction of the first box covered by the second; asymmetric.
pub fn containment_ratio(b_m: &BoundingBox, b_l: &BoundingBox) -> f64 {
    b_m.intersection_area(b_l) / b_m.area()
}

/// One region proposal: feature embedding, box, and an assigned label
/// (a class name or [`BACKGROUND_LABEL`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalEmbedding {
    pub bbox: BoundingBox,
    pub z: Vec<f64>,
    pub label: String,
}

impl ProposalEmbedding {
    pub fn is_background(&self) -> bool {
        self.label == BACKGROUND_LABEL
    }
}

/// Is-a input: the embedding alone, never the coordinates.
pub fn ground_object(p: &ProposalEmbedding) -> Vec<f64> {
    p.z.clone()
}

/// Part-of input `<z_m, b_m, z_l, b_l, ir(m, l)>` of length `2d + 9`,
/// boxes normalized by the image extent.
pub fn ground_pair(
    p_m: &ProposalEmbedding,
    p_l: &ProposalEmbedding,
    image_width: f64,
    image_height: f64,
) -> Result<Vec<f64>, DetectError> {
    if p_m.z.len() != p_l.z.len() {
        return Err(DetectError::DimensionMismatch(p_m.z.len(), p_l.z.len()));
    }
    let mut v = Vec::with_capacity(2 * p_m.z.len() + 9);
    v.extend_from_slice(&p_m.z);
    v.extend_from_slice(&p_m.bbox.normalized(image_width, image_height));
    v.extend_from_slice(&p_l.z);
    v.extend_from_slice(&p_l.bbox.normalized(image_width, image_height));
    v.push(containment_ratio(&p_m.bbox, &p_l.bbox));
    Ok(v)
}

/// Dimension of [`ground_pair`] output for embedding dimension `d`.
pub fn pair_dim(embed_dim: usize) -> usize {
    2 * embed_dim + 9
}

/// Grounding vectors for a roster of proposals within one image.
pub struct ProposalSource<'a> {
    pub proposals: Vec<&'a ProposalEmbedding>,
    pub image_width: f64,
    pub image_height: f64,
}

impl GroundingSource for ProposalSource<'_> {
    fn len(&self) -> usize {
        self.proposals.len()
    }

    fn unary(&self, i: usize) -> Tensor {
        Tensor::vector(ground_object(self.proposals[i])).unwrap()
    }

    fn pair(&self, m: usize, l: usize) -> Tensor {
        let v = ground_pair(
            self.proposals[m],
            self.proposals[l],
            self.image_width,
            self.image_height,
        )
        .expect("uniform embedding dimension is validated at ingestion");
        Tensor::vector(v).unwrap()
    }
}

/// Whole-class to part-class mapping. Whole and part sets are disjoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PartOntology {
    pub wholes: BTreeMap<String, Vec<String>>,
}

impl PartOntology {
    pub fn is_empty(&self) -> bool {
        self.wholes.is_empty()
    }

    pub fn whole_classes(&self) -> Vec<String> {
        self.wholes.keys().cloned().collect()
    }

    pub fn part_classes(&self) -> Vec<String> {
        let mut parts: Vec<String> = self.wholes.values().flatten().cloned().collect();
        parts.sort();
        parts.dedup();
        parts
    }

    /// True when `part_label` is a declared part of `whole_label`.
    pub fn is_part_of(&self, part_label: &str, whole_label: &str) -> bool {
        self.wholes
            .get(whole_label)
            .is_some_and(|parts| parts.iter().any(|p| p == part_label))
    }

    pub fn validate(&self, classes: &[String]) -> Result<(), DetectError> {
        let declared: std::collections::BTreeSet<&str> =
            classes.iter().map(|c| c.as_str()).collect();
        for (whole, parts) in &self.wholes {
            if !declared.contains(whole.as_str()) {
                return Err(DetectError::UnknownOntologyClass(whole.clone()));
            }
            for p in parts {
                if !declared.contains(p.as_str()) {
                    return Err(DetectError::UnknownOntologyClass(p.clone()));
                }
            }
        }
        let parts = self.part_classes();
        for whole in self.wholes.keys() {
            if parts.iter().any(|p| p == whole) {
                return Err(DetectError::WholePartOverlap(whole.clone()));
            }
        }
        Ok(())
    }
}

/// Per-image selection policy: how many foreground and background boxes to
/// draw, and the seed of the draw.
#[derive(Debug, Clone, Copy)]
pub struct BatchPolicy {
    pub fg_count: usize,
    pub bg_count: usize,
    pub seed: u64,
}

/// Indices (into the proposal list) chosen for one batch, foreground first.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSelection {
    pub fg: Vec<usize>,
    pub bg: Vec<usize>,
}

impl BatchSelection {
    pub fn len(&self) -> usize {
        self.fg.len() + self.bg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fg.is_empty() && self.bg.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.fg.iter().chain(self.bg.iter()).copied().collect()
    }
}

fn shuffle(indices: &mut [usize], rng: &mut ChaCha8Rng) {
    // Fisher-Yates, spelled out so the draw sequence is pinned by this
    // crate rather than by a rand helper that may change between releases.
    for i in (1..indices.len()).rev() {
        let j = rng.gen_range(0..=i);
        indices.swap(i, j);
    }
}

/// Draws a batch honoring the foreground:background ratio. When foreground
/// is scarce the background quota is scaled down to keep the ratio; when
/// background is scarce whatever is available is taken.
pub fn make_batch(
    proposals: &[ProposalEmbedding],
    policy: &BatchPolicy,
) -> Result<BatchSelection, DetectError> {
    if policy.fg_count == 0 {
        return Err(DetectError::ZeroForegroundSlots);
    }
    let mut fg: Vec<usize> = Vec::new();
    let mut bg: Vec<usize> = Vec::new();
    for (i, p) in proposals.iter().enumerate() {
        if p.is_background() {
            bg.push(i);
        } else {
            fg.push(i);
        }
    }
    if fg.is_empty() {
        return Err(DetectError::NoForeground);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    shuffle(&mut fg, &mut rng);
    shuffle(&mut bg, &mut rng);
    let fg_take = fg.len().min(policy.fg_count);
    let bg_target = if fg_take < policy.fg_count {
        fg_take * policy.bg_count / policy.fg_count
    } else {
        policy.bg_count
    };
    let bg_take = bg.len().min(bg_target);
    fg.truncate(fg_take);
    bg.truncate(bg_take);
    Ok(BatchSelection { fg, bg })
}

/// One named clause of weighted ground literals.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedClause {
    pub name: String,
    pub literals: Vec<(GroundLiteral, f64)>,
}

/// One-vs-all is-a clauses over the roster `labels[i]` of batch position
/// `i`. Weights come from `stats` when given, else 1. With `include_bg` an
/// extra clause trains a background predicate on the background positions.
pub fn build_expl_isa(
    labels: &[String],
    classes: &[String],
    include_bg: bool,
    stats: Option<&ClassStats>,
) -> Result<Vec<NamedClause>, DetectError> {
    for label in labels {
        if label != BACKGROUND_LABEL && !classes.contains(label) {
            return Err(DetectError::UnknownLabel(label.clone()));
        }
    }
    let mut clauses = Vec::with_capacity(classes.len() + usize::from(include_bg));
    for class in classes {
        let (alpha_pos, alpha_neg) = match stats {
            Some(s) => {
                let e = &s.entries[class];
                (e.alpha_pos, e.alpha_neg)
            }
            None => (1.0, 1.0),
        };
        let literals = labels
            .iter()
            .enumerate()
            .map(|(i, label)| {
                let positive = label == class;
                (
                    GroundLiteral {
                        predicate: class.clone(),
                        args: vec![i],
                        negated: !positive,
                    },
                    if positive { alpha_pos } else { alpha_neg },
                )
            })
            .collect();
        clauses.push(NamedClause {
            name: format!("expl/isa/{class}"),
            literals,
        });
    }
    if include_bg {
        let (alpha_pos, alpha_neg) = match stats {
            Some(s) => (s.background.alpha_pos, s.background.alpha_neg),
            None => (1.0, 1.0),
        };
        let literals = labels
            .iter()
            .enumerate()
            .map(|(i, label)| {
                let positive = label == BACKGROUND_LABEL;
                (
                    GroundLiteral {
                        predicate: BACKGROUND_LABEL.to_string(),
                        args: vec![i],
                        negated: !positive,
                    },
                    if positive { alpha_pos } else { alpha_neg },
                )
            })
            .collect();
        clauses.push(NamedClause {
            name: format!("expl/isa/{BACKGROUND_LABEL}"),
            literals,
        });
    }
    Ok(clauses)
}

/// Containment thresholds turning geometry into part-of literal labels.
#[derive(Debug, Clone, Copy)]
pub struct PartofPolicy {
    /// Consistent pairs at or above this containment are positives.
    pub positive_ir: f64,
    /// Pairs at or below this containment are negatives.
    pub negative_ir: f64,
}

impl Default for PartofPolicy {
    fn default() -> Self {
        Self {
            positive_ir: 0.7,
            negative_ir: 0.1,
        }
    }
}

/// Part-of literals over every ordered proposal pair of a batch. The atom
/// reads "position m is part of position l". A pair is positive when the
/// ontology allows the label pair and the part box lies inside the whole
/// box (ir at or above the positive threshold); negative when the labels
/// are inconsistent or the boxes barely overlap; otherwise excluded.
pub fn build_expl_partof(
    proposals: &[&ProposalEmbedding],
    ontology: &PartOntology,
    policy: &PartofPolicy,
) -> NamedClause {
    let mut literals = Vec::new();
    for m in 0..proposals.len() {
        for l in 0..proposals.len() {
            if m == l {
                continue;
            }
            let consistent =
                ontology.is_part_of(&proposals[m].label, &proposals[l].label);
            let ir = containment_ratio(&proposals[m].bbox, &proposals[l].bbox);
            let negated = if consistent && ir >= policy.positive_ir {
                false
            } else if !consistent || ir <= policy.negative_ir {
                true
            } else {
                continue;
            };
            literals.push((
                GroundLiteral {
                    predicate: PARTOF_PREDICATE.to_string(),
                    args: vec![m, l],
                    negated,
                },
                1.0,
            ));
        }
    }
    NamedClause {
        name: "expl/partof".to_string(),
        literals,
    }
}

/// Prior knowledge base: pairwise mutual exclusion over the classes (plus
/// the background predicate when enabled), and for a part ontology the
/// whole-to-parts axioms along with part-in-part and whole-in-whole bans.
pub fn build_prior_theory(
    classes: &[String],
    ontology: Option<&PartOntology>,
    mutual_exclusion: bool,
    include_bg: bool,
) -> Result<KnowledgeBase, DetectError> {
    let mut kb = KnowledgeBase::default();
    let mut roster: Vec<String> = classes.to_vec();
    if include_bg {
        roster.push(BACKGROUND_LABEL.to_string());
    }
    for class in &roster {
        kb.predicates.push(PredicateSymbol {
            name: class.clone(),
            arity: 1,
        });
    }
    let has_ontology = ontology.is_some_and(|o| !o.is_empty());
    if has_ontology {
        kb.predicates.push(PredicateSymbol {
            name: PARTOF_PREDICATE.to_string(),
            arity: 2,
        });
    }
    if mutual_exclusion {
        for i in 0..roster.len() {
            for j in (i + 1)..roster.len() {
                kb.axioms.push(Formula::forall(
                    vec!["x"],
                    Formula::implies(
                        Formula::atom_var(&roster[i], "x"),
                        Formula::not(Formula::atom_var(&roster[j], "x")),
                    ),
                ));
            }
        }
    }
    if let Some(ontology) = ontology.filter(|o| !o.is_empty()) {
        ontology.validate(classes)?;
        let part_of_y_x = || {
            Formula::atom(
                PARTOF_PREDICATE,
                vec![
                    crate::fol::Term::Variable("y".into()),
                    crate::fol::Term::Variable("x".into()),
                ],
            )
        };
        for (whole, parts) in &ontology.wholes {
            let disjunction = Formula::or_chain(
                parts
                    .iter()
                    .map(|p| Formula::atom_var(p, "y"))
                    .collect(),
            );
            kb.axioms.push(Formula::forall(
                vec!["x", "y"],
                Formula::implies(
                    Formula::and(Formula::atom_var(whole, "x"), part_of_y_x()),
                    disjunction,
                ),
            ));
        }
        let parts = ontology.part_classes();
        for p in &parts {
            for q in &parts {
                kb.axioms.push(Formula::forall(
                    vec!["x", "y"],
                    Formula::implies(
                        Formula::and(Formula::atom_var(p, "x"), part_of_y_x()),
                        Formula::not(Formula::atom_var(q, "y")),
                    ),
                ));
            }
        }
        let wholes = ontology.whole_classes();
        for w in &wholes {
            for v in &wholes {
                kb.axioms.push(Formula::forall(
                    vec!["x", "y"],
                    Formula::implies(
                        Formula::and(Formula::atom_var(w, "x"), part_of_y_x()),
                        Formula::not(Formula::atom_var(v, "y")),
                    ),
                ));
            }
        }
    }
    Ok(kb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fol;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2).unwrap()
    }

    fn proposal(label: &str, z: Vec<f64>, bbox: BoundingBox) -> ProposalEmbedding {
        ProposalEmbedding {
            bbox,
            z,
            label: label.to_string(),
        }
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn degenerate_boxes_are_rejected() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, 0.0).is_err());
        assert!(BoundingBox::new(2.0, 0.0, 1.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, f64::NAN, 1.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn iou_matches_hand_arithmetic() {
        let a = bb(0.0, 0.0, 2.0, 2.0);
        assert_eq!(a.iou(&a), 1.0);
        let far = bb(10.0, 10.0, 11.0, 11.0);
        assert_eq!(a.iou(&far), 0.0);
        let b = bb(1.0, 0.0, 3.0, 2.0);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn containment_matches_hand_arithmetic() {
        let a = bb(0.0, 0.0, 2.0, 2.0);
        let b = bb(1.0, 0.0, 3.0, 2.0);
        assert_eq!(containment_ratio(&a, &a), 1.0);
        assert!((containment_ratio(&a, &b) - 0.5).abs() < 1e-12);
        let far = bb(10.0, 10.0, 11.0, 11.0);
        assert_eq!(containment_ratio(&a, &far), 0.0);
    }

    #[test]
    fn containment_is_translation_invariant() {
        let a = bb(0.0, 0.0, 2.0, 3.0);
        let b = bb(1.0, 1.0, 4.0, 2.5);
        let base = containment_ratio(&a, &b);
        for (dx, dy) in [(5.0, -2.0), (-1.5, 7.25), (100.0, 100.0)] {
            let at = bb(a.x1 + dx, a.y1 + dy, a.x2 + dx, a.y2 + dy);
            let bt = bb(b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy);
            assert!((containment_ratio(&at, &bt) - base).abs() < 1e-12);
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded_by_containments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let mut corner = || {
                let x1: f64 = rng.gen_range(-5.0..5.0);
                let y1: f64 = rng.gen_range(-5.0..5.0);
                let w: f64 = rng.gen_range(0.1..6.0);
                let h: f64 = rng.gen_range(0.1..6.0);
                bb(x1, y1, x1 + w, y1 + h)
            };
            let a = corner();
            let b = corner();
            let iou = a.iou(&b);
            assert!((iou - b.iou(&a)).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&iou));
            let bound = containment_ratio(&a, &b).min(containment_ratio(&b, &a));
            assert!(iou <= bound + 1e-12);
        }
    }

    #[test]
    fn object_grounding_ignores_the_box() {
        let z = vec![0.25, -1.5, 3.0];
        let p1 = proposal("cat", z.clone(), bb(0.0, 0.0, 10.0, 10.0));
        let p2 = proposal("cat", z.clone(), bb(50.0, 3.0, 51.0, 9.0));
        assert_eq!(ground_object(&p1), z);
        assert_eq!(ground_object(&p1), ground_object(&p2));
    }

    #[test]
    fn pair_grounding_layout_and_nesting() {
        let part = proposal("tail", vec![1.0, 2.0], bb(2.0, 2.0, 4.0, 4.0));
        let whole = proposal("cat", vec![3.0, 4.0], bb(0.0, 0.0, 8.0, 8.0));
        let v = ground_pair(&part, &whole, 16.0, 8.0).unwrap();
        assert_eq!(v.len(), pair_dim(2));
        assert_eq!(&v[0..2], &[1.0, 2.0]);
        assert_eq!(&v[2..6], &[2.0 / 16.0, 2.0 / 8.0, 4.0 / 16.0, 4.0 / 8.0]);
        assert_eq!(&v[6..8], &[3.0, 4.0]);
        // Part fully inside the whole: containment hits 1 exactly.
        assert_eq!(v[12], 1.0);
        // Reversed order measures how much of the whole the part covers.
        let r = ground_pair(&whole, &part, 16.0, 8.0).unwrap();
        assert!((r[12] - 4.0 / 64.0).abs() < 1e-12);
        assert_ne!(v, r);
    }

    #[test]
    fn pair_grounding_rejects_mixed_dims() {
        let a = proposal("a", vec![1.0], bb(0.0, 0.0, 1.0, 1.0));
        let b = proposal("b", vec![1.0, 2.0], bb(0.0, 0.0, 1.0, 1.0));
        assert_eq!(
            ground_pair(&a, &b, 1.0, 1.0),
            Err(DetectError::DimensionMismatch(1, 2))
        );
    }

    fn roster(fg: usize, bg: usize) -> Vec<ProposalEmbedding> {
        let mut out = Vec::new();
        for i in 0..fg {
            out.push(proposal(
                "cat",
                vec![i as f64],
                bb(0.0, 0.0, 1.0 + i as f64, 1.0),
            ));
        }
        for i in 0..bg {
            out.push(proposal(
                BACKGROUND_LABEL,
                vec![-(i as f64)],
                bb(5.0, 5.0, 6.0 + i as f64, 6.0),
            ));
        }
        out
    }

    #[test]
    fn batch_honors_ratio_when_ample() {
        let proposals = roster(60, 300);
        let policy = BatchPolicy {
            fg_count: 32,
            bg_count: 96,
            seed: 9,
        };
        let batch = make_batch(&proposals, &policy).unwrap();
        assert_eq!(batch.fg.len(), 32);
        assert_eq!(batch.bg.len(), 96);
        assert_eq!(batch.len(), 128);
        assert!(batch.fg.iter().all(|&i| !proposals[i].is_background()));
        assert!(batch.bg.iter().all(|&i| proposals[i].is_background()));

        let small = make_batch(
            &proposals,
            &BatchPolicy {
                fg_count: 16,
                bg_count: 16,
                seed: 9,
            },
        )
        .unwrap();
        assert_eq!(small.len(), 32);
    }

    #[test]
    fn batch_scales_background_down_with_scarce_foreground() {
        let proposals = roster(8, 300);
        let policy = BatchPolicy {
            fg_count: 32,
            bg_count: 96,
            seed: 1,
        };
        let batch = make_batch(&proposals, &policy).unwrap();
        assert_eq!(batch.fg.len(), 8);
        // 8 foreground at a 1:3 ratio.
        assert_eq!(batch.bg.len(), 24);
    }

    #[test]
    fn batch_is_seed_deterministic() {
        let proposals = roster(40, 200);
        let policy = BatchPolicy {
            fg_count: 32,
            bg_count: 96,
            seed: 77,
        };
        let a = make_batch(&proposals, &policy).unwrap();
        let b = make_batch(&proposals, &policy).unwrap();
        assert_eq!(a, b);
        let c = make_batch(
            &proposals,
            &BatchPolicy {
                seed: 78,
                ..policy
            },
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn batch_without_foreground_is_an_error() {
        let proposals = roster(0, 10);
        let policy = BatchPolicy {
            fg_count: 32,
            bg_count: 96,
            seed: 0,
        };
        assert_eq!(
            make_batch(&proposals, &policy),
            Err(DetectError::NoForeground)
        );
    }

    #[test]
    fn one_vs_all_clauses_partition_the_batch() {
        let labels = names(&["c1", "c1", "c2", BACKGROUND_LABEL]);
        let classes = names(&["c1", "c2"]);
        let clauses = build_expl_isa(&labels, &classes, false, None).unwrap();
        assert_eq!(clauses.len(), 2);
        let count = |c: &NamedClause, negated: bool| {
            c.literals
                .iter()
                .filter(|(l, _)| l.negated == negated)
                .count()
        };
        assert_eq!(clauses[0].name, "expl/isa/c1");
        assert_eq!(count(&clauses[0], false), 2);
        assert_eq!(count(&clauses[0], true), 2);
        assert_eq!(clauses[1].name, "expl/isa/c2");
        assert_eq!(count(&clauses[1], false), 1);
        assert_eq!(count(&clauses[1], true), 3);
        for clause in &clauses {
            let mut seen: Vec<usize> = clause.literals.iter().map(|(l, _)| l.args[0]).collect();
            seen.sort();
            assert_eq!(seen, vec![0, 1, 2, 3]);
        }

        let with_bg = build_expl_isa(&labels, &classes, true, None).unwrap();
        assert_eq!(with_bg.len(), 3);
        assert_eq!(with_bg[2].name, "expl/isa/bg");
        assert_eq!(count(&with_bg[2], false), 1);
        assert_eq!(count(&with_bg[2], true), 3);
    }

    #[test]
    fn class_missing_from_batch_yields_pure_negative_clause() {
        let labels = names(&["c1", BACKGROUND_LABEL]);
        let classes = names(&["c1", "c2"]);
        let clauses = build_expl_isa(&labels, &classes, false, None).unwrap();
        assert!(clauses[1].literals.iter().all(|(l, _)| l.negated));
    }

    #[test]
    fn unknown_label_is_rejected() {
        let labels = names(&["mystery"]);
        let classes = names(&["c1"]);
        assert_eq!(
            build_expl_isa(&labels, &classes, false, None),
            Err(DetectError::UnknownLabel("mystery".into()))
        );
    }

    #[test]
    fn alpha_weights_follow_class_stats() {
        let classes = names(&["c1", "c2"]);
        let mut counts = BTreeMap::new();
        counts.insert("c1".to_string(), 30usize);
        counts.insert("c2".to_string(), 10usize);
        let stats = ClassStats::compute(&classes, &counts, 128, 0.999, 0.5).unwrap();
        let labels = names(&["c1", "c2", BACKGROUND_LABEL]);
        let clauses = build_expl_isa(&labels, &classes, true, Some(&stats)).unwrap();
        let c1 = &clauses[0];
        assert_eq!(c1.literals[0].1, stats.entries["c1"].alpha_pos);
        assert_eq!(c1.literals[1].1, stats.entries["c1"].alpha_neg);
        let bg = &clauses[2];
        assert_eq!(bg.literals[2].1, stats.background.alpha_pos);
        assert_eq!(bg.literals[0].1, stats.background.alpha_neg);
        // Rarer class weighted higher on its positives.
        assert!(stats.entries["c2"].alpha_pos > stats.entries["c1"].alpha_pos);
    }

    fn cat_ontology() -> PartOntology {
        let mut wholes = BTreeMap::new();
        wholes.insert("cat".to_string(), vec!["tail".to_string(), "head".to_string()]);
        PartOntology { wholes }
    }

    #[test]
    fn partof_literals_follow_geometry_and_ontology() {
        let whole = proposal("cat", vec![0.0], bb(0.0, 0.0, 10.0, 10.0));
        let part_in = proposal("tail", vec![1.0], bb(1.0, 1.0, 3.0, 3.0));
        let part_out = proposal("tail", vec![2.0], bb(40.0, 40.0, 42.0, 42.0));
        let straddle = proposal("tail", vec![3.0], bb(8.0, 8.0, 14.0, 14.0));
        let wrong = proposal("dog", vec![4.0], bb(2.0, 2.0, 4.0, 4.0));
        let refs: Vec<&ProposalEmbedding> = vec![&whole, &part_in, &part_out, &straddle, &wrong];
        let clause = build_expl_partof(&refs, &cat_ontology(), &PartofPolicy::default());
        assert_eq!(clause.name, "expl/partof");
        let find = |m: usize, l: usize| {
            clause
                .literals
                .iter()
                .find(|(lit, _)| lit.args == vec![m, l])
                .map(|(lit, _)| lit.negated)
        };
        // Nested, consistent pair: positive.
        assert_eq!(find(1, 0), Some(false));
        // Disjoint though consistent: negative.
        assert_eq!(find(2, 0), Some(true));
        // Straddling (ir = 1/9) though consistent: between thresholds, excluded.
        let ir = containment_ratio(&straddle.bbox, &whole.bbox);
        assert!(ir > 0.1 && ir < 0.7, "fixture drifted: ir = {ir}");
        assert_eq!(find(3, 0), None);
        // Nested but label-inconsistent: negative.
        assert_eq!(find(4, 0), Some(true));
        // The whole is never part of its part.
        assert_eq!(find(0, 1), Some(true));
    }

    #[test]
    fn mutual_exclusion_counts_are_quadratic() {
        for k in [2usize, 5, 20] {
            let classes: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
            let kb = build_prior_theory(&classes, None, true, false).unwrap();
            assert_eq!(kb.axioms.len(), k * (k - 1) / 2);
            assert!(fol::validate(&kb).is_empty());
        }
        let classes = names(&["c0", "c1"]);
        let kb = build_prior_theory(&classes, None, true, false).unwrap();
        assert_eq!(kb.axioms[0].to_string(), "forall x: c0(x) -> ~c1(x)");
    }

    #[test]
    fn background_joins_the_exclusion_roster() {
        let classes = names(&["c0", "c1"]);
        let kb = build_prior_theory(&classes, None, true, true).unwrap();
        // 3 predicates pair up into 3 clauses.
        assert_eq!(kb.axioms.len(), 3);
        assert!(kb
            .axioms
            .iter()
            .any(|a| a.to_string() == "forall x: c0(x) -> ~bg(x)"));
    }

    #[test]
    fn ontology_axioms_have_the_expected_shapes() {
        let classes = names(&["cat", "tail", "head"]);
        let kb = build_prior_theory(&classes, Some(&cat_ontology()), false, false).unwrap();
        assert!(fol::validate(&kb).is_empty());
        let printed: Vec<String> = kb.axioms.iter().map(|a| a.to_string()).collect();
        assert!(printed
            .contains(&"forall x, y: cat(x) & partOf(y, x) -> tail(y) | head(y)".to_string()));
        // 1 mereology + 4 part-in-part + 1 whole-in-whole.
        assert_eq!(kb.axioms.len(), 6);
        assert!(printed
            .contains(&"forall x, y: tail(x) & partOf(y, x) -> ~head(y)".to_string()));
        assert!(printed
            .contains(&"forall x, y: cat(x) & partOf(y, x) -> ~cat(y)".to_string()));
    }

    #[test]
    fn ontology_validation_catches_bad_references() {
        let classes = names(&["cat", "tail"]);
        let mut wholes = BTreeMap::new();
        wholes.insert("cat".to_string(), vec!["wing".to_string()]);
        let bad = PartOntology { wholes };
        assert_eq!(
            build_prior_theory(&classes, Some(&bad), false, false),
            Err(DetectError::UnknownOntologyClass("wing".into()))
        );

        let mut overlap = BTreeMap::new();
        overlap.insert("cat".to_string(), vec!["tail".to_string()]);
        overlap.insert("tail".to_string(), vec!["cat".to_string()]);
        let bad = PartOntology { wholes: overlap };
        let classes = names(&["cat", "tail"]);
        assert!(matches!(
            build_prior_theory(&classes, Some(&bad), false, false),
            Err(DetectError::WholePartOverlap(_))
        ));
    }
}
