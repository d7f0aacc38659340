//! Synthetic proposal datasets: Gaussian embedding clusters per class, with
//! optional part boxes nested strictly inside whole boxes.
//!
//! Class means sit on scaled coordinate axes, so any two classes are at
//! least `separation` apart while background embeddings scatter around the
//! origin. With parts enabled, each whole class `cI` owns part classes
//! `cI_p0..`, every generated part box lies fully inside its whole box, and
//! the emitted ontology maps each whole to its parts.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::data::{Dataset, ImageRecord};
use crate::detect::{BoundingBox, PartOntology, ProposalEmbedding, BACKGROUND_LABEL};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid spec: {0}")]
    Invalid(String),
}

/// Shape of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Number of whole (top-level) classes.
    pub classes: usize,
    pub embed_dim: usize,
    /// Minimum distance between any two class means.
    pub separation: f64,
    /// Stddev of each class cluster.
    pub cluster_scale: f64,
    /// Stddev of the background distribution around the origin.
    pub background_scale: f64,
    pub images: usize,
    pub proposals_per_image: usize,
    /// Part classes generated per whole class; 0 disables the part layout.
    pub parts_per_whole: usize,
    /// Square image extent in pixels.
    pub image_size: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            embed_dim: 4,
            separation: 5.0,
            cluster_scale: 0.5,
            background_scale: 2.0,
            images: 20,
            proposals_per_image: 8,
            parts_per_whole: 0,
            image_size: 100.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::Invalid(m));
        if self.classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.embed_dim < 2 {
            return fail(format!("need embed_dim >= 2, got {}", self.embed_dim));
        }
        if !(self.separation > 0.0) {
            return fail(format!("separation must be positive, got {}", self.separation));
        }
        if !(self.cluster_scale > 0.0) || !(self.background_scale > 0.0) {
            return fail("scales must be positive".to_string());
        }
        if self.images == 0 {
            return fail("need at least one image".to_string());
        }
        if self.proposals_per_image < self.parts_per_whole + 2 {
            return fail(format!(
                "need at least {} proposals per image (one whole, its parts, one background)",
                self.parts_per_whole + 2
            ));
        }
        if !(self.image_size > 0.0) {
            return fail("image_size must be positive".to_string());
        }
        Ok(())
    }

    /// Parses the flat `key = value` spec format; unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self, SynthError> {
        let mut spec = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| SynthError::Parse {
                line: lineno,
                message: "expected `key = value`".to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| SynthError::Parse {
                line: lineno,
                message: format!("bad {what} value `{value}`"),
            };
            match key {
                "classes" => spec.classes = value.parse().map_err(|_| bad("integer"))?,
                "embed_dim" => spec.embed_dim = value.parse().map_err(|_| bad("integer"))?,
                "separation" => spec.separation = value.parse().map_err(|_| bad("number"))?,
                "cluster_scale" => {
                    spec.cluster_scale = value.parse().map_err(|_| bad("number"))?
                }
                "background_scale" => {
                    spec.background_scale = value.parse().map_err(|_| bad("number"))?
                }
                "images" => spec.images = value.parse().map_err(|_| bad("integer"))?,
                "proposals_per_image" => {
                    spec.proposals_per_image = value.parse().map_err(|_| bad("integer"))?
                }
                "parts_per_whole" => {
                    spec.parts_per_whole = value.parse().map_err(|_| bad("integer"))?
                }
                "image_size" => spec.image_size = value.parse().map_err(|_| bad("number"))?,
                other => {
                    return Err(SynthError::Parse {
                        line: lineno,
                        message: format!("unknown key `{other}`"),
                    })
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "classes = {}", self.classes).unwrap();
        writeln!(out, "embed_dim = {}", self.embed_dim).unwrap();
        writeln!(out, "separation = {}", self.separation).unwrap();
        writeln!(out, "cluster_scale = {}", self.cluster_scale).unwrap();
        writeln!(out, "background_scale = {}", self.background_scale).unwrap();
        writeln!(out, "images = {}", self.images).unwrap();
        writeln!(out, "proposals_per_image = {}", self.proposals_per_image).unwrap();
        writeln!(out, "parts_per_whole = {}", self.parts_per_whole).unwrap();
        writeln!(out, "image_size = {}", self.image_size).unwrap();
        out
    }

    /// Whole class names, then part names grouped by whole.
    pub fn class_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.classes).map(|i| format!("c{i}")).collect();
        for i in 0..self.classes {
            for p in 0..self.parts_per_whole {
                names.push(format!("c{i}_p{p}"));
            }
        }
        names
    }

    pub fn ontology(&self) -> PartOntology {
        let mut wholes = std::collections::BTreeMap::new();
        if self.parts_per_whole > 0 {
            for i in 0..self.classes {
                wholes.insert(
                    format!("c{i}"),
                    (0..self.parts_per_whole)
                        .map(|p| format!("c{i}_p{p}"))
                        .collect(),
                );
            }
        }
        PartOntology { wholes }
    }

    /// Mean embedding of class index `j` (in [`class_names`] order): the
    /// axis `j mod d` scaled by `separation` and stacked outward for every
    /// wrap around the axes.
    pub fn class_mean(&self, j: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.embed_dim];
        let axis = j % self.embed_dim;
        let ring = (j / self.embed_dim + 1) as f64;
        mean[axis] = self.separation * ring;
        mean
    }
}

/// A generated dataset with its class list and ontology sidecars.
pub struct SyntheticData {
    pub dataset: Dataset,
    pub classes: Vec<String>,
    pub ontology: PartOntology,
}

fn draw_vec(mean: &[f64], scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, scale).unwrap();
    mean.iter().map(|m| m + normal.sample(rng)).collect()
}

/// A box of side length in `[lo, hi]` (fractions of `extent`) placed
/// uniformly inside `[0, extent]²`.
fn random_box(extent: f64, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> BoundingBox {
    let w = rng.gen_range(lo * extent..=hi * extent);
    let h = rng.gen_range(lo * extent..=hi * extent);
    let x1 = rng.gen_range(0.0..=(extent - w));
    let y1 = rng.gen_range(0.0..=(extent - h));
    BoundingBox::new(x1, y1, x1 + w, y1 + h).unwrap()
}

/// A box strictly inside `outer`, spanning 20% to 40% of each side.
fn nested_box(outer: &BoundingBox, rng: &mut ChaCha8Rng) -> BoundingBox {
    let ow = outer.x2 - outer.x1;
    let oh = outer.y2 - outer.y1;
    let w = rng.gen_range(0.2 * ow..=0.4 * ow);
    let h = rng.gen_range(0.2 * oh..=0.4 * oh);
    let x1 = outer.x1 + rng.gen_range(0.0..=(ow - w));
    let y1 = outer.y1 + rng.gen_range(0.0..=(oh - h));
    BoundingBox::new(x1, y1, x1 + w, y1 + h).unwrap()
}

/// Generates the dataset for `spec`, deterministically in `seed`. Every
/// image holds at least one whole object (with its parts when enabled) and
/// at least one background proposal; whole objects fill about half the
/// proposal budget, background the rest.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class_names = spec.class_names();
    let group = 1 + spec.parts_per_whole;
    let mut images = Vec::with_capacity(spec.images);
    for img in 0..spec.images {
        let mut proposals = Vec::with_capacity(spec.proposals_per_image);
        let fg_budget = spec.proposals_per_image / 2;
        let groups = (fg_budget / group).max(1);
        for _ in 0..groups {
            let class = rng.gen_range(0..spec.classes);
            let whole_box = random_box(spec.image_size, 0.25, 0.5, &mut rng);
            let z = draw_vec(&spec.class_mean(class), spec.cluster_scale, &mut rng);
            proposals.push(ProposalEmbedding {
                bbox: whole_box,
                z,
                label: class_names[class].clone(),
            });
            for p in 0..spec.parts_per_whole {
                let part_index = spec.classes + class * spec.parts_per_whole + p;
                let z = draw_vec(&spec.class_mean(part_index), spec.cluster_scale, &mut rng);
                proposals.push(ProposalEmbedding {
                    bbox: nested_box(&whole_box, &mut rng),
                    z,
                    label: class_names[part_index].clone(),
                });
            }
        }
        while proposals.len() < spec.proposals_per_image {
            let z = draw_vec(&vec![0.0; spec.embed_dim], spec.background_scale, &mut rng);
            proposals.push(ProposalEmbedding {
                bbox: random_box(spec.image_size, 0.05, 0.3, &mut rng),
                z,
                label: BACKGROUND_LABEL.to_string(),
            });
        }
        images.push(ImageRecord {
            id: format!("img{img:04}"),
            width: spec.image_size,
            height: spec.image_size,
            proposals,
        });
    }
    Ok(SyntheticData {
        dataset: Dataset {
            images,
            embed_dim: spec.embed_dim,
        },
        classes: class_names,
        ontology: spec.ontology(),
    })
}
