//! End-to-end training: grounds the example and prior theories over each
//! image batch on a fresh tape, backpropagates the aggregate loss, and steps
//! Adam on the flat parameter map.

use std::collections::BTreeMap;
use std::fs;

use thiserror::Error;

use crate::autodiff::{
    save_params, AdamHyper, AdamOptimizer, CheckpointError, GraphError, OptimError, Tensor,
};
use crate::config::ExperimentConfig;
use crate::data::{load_classes, load_ontology, DataError, Dataset};
use crate::detect::{
    build_expl_isa, build_expl_partof, build_prior_theory, make_batch, pair_dim, BatchPolicy,
    DetectError, PartOntology, PartofPolicy, ProposalSource, BACKGROUND_LABEL, PARTOF_PREDICATE,
};
use crate::fol::{parse_axioms, validate, KnowledgeBase, ParseError, PredicateSymbol};
use crate::fuzzy::{AggregatorConfig, ClassStats, WeightError};
use crate::ground::{
    derive_seed, GroundError, GroundingEnvironment, PredicateSet, TheoryCompiler,
};
use crate::autodiff::Tape;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("axioms file: {0}")]
    Axioms(#[from] ParseError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("axiom predicate `{0}` has no grounding in this run")]
    UngroundedAxiomPredicate(String),
    #[error("axiom predicate `{name}` declared with arity {extra}, run uses {base}")]
    AxiomArityMismatch {
        name: String,
        base: usize,
        extra: usize,
    },
    #[error("duplicate axiom `{0}`")]
    DuplicateAxiom(String),
    #[error("invalid theory: {0}")]
    InvalidTheory(String),
    #[error("part ontology is empty but mereology or part-of examples are on")]
    EmptyOntology,
    #[error("non-finite loss in epoch {epoch}, image `{image}`, clause `{clause}`")]
    NonFiniteLoss {
        epoch: usize,
        image: String,
        clause: String,
    },
    #[error("no image produced a trainable batch")]
    NoTrainableBatches,
}

/// Per-epoch loss means over the batches actually processed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub expl_loss: f64,
    pub prior_loss: f64,
    pub l2: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final parameters keyed `{predicate}:W|V|u|b`.
    pub params: BTreeMap<String, Tensor>,
    pub metrics: Vec<EpochMetrics>,
    /// Images skipped for lack of foreground, summed over epochs.
    pub skipped_batches: usize,
    pub classes: Vec<String>,
    /// The composed prior theory, including any merged extra axioms.
    pub knowledge: KnowledgeBase,
}

/// One metrics line per epoch: epoch, example loss, prior loss, l2, total,
/// learning rate, tab separated.
pub fn metrics_to_text(metrics: &[EpochMetrics]) -> String {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            m.epoch, m.expl_loss, m.prior_loss, m.l2, m.total, m.lr
        ));
    }
    out
}

/// Prior knowledge for a run: the generated class and ontology axioms plus
/// any extra axioms file, checked against the grounded predicate roster.
pub fn compose_prior(
    cfg: &ExperimentConfig,
    classes: &[String],
    ontology: Option<&PartOntology>,
) -> Result<KnowledgeBase, TrainError> {
    let prior_ontology = if cfg.mereology { ontology } else { None };
    let mut kb = build_prior_theory(
        classes,
        prior_ontology,
        cfg.mutual_exclusion,
        cfg.variant.include_bg(),
    )?;
    let has_partof = ontology.is_some_and(|o| !o.is_empty()) && (cfg.mereology || cfg.partof_expl);
    if has_partof && kb.predicate(PARTOF_PREDICATE).is_none() {
        kb.predicates.push(PredicateSymbol {
            name: PARTOF_PREDICATE.to_string(),
            arity: 2,
        });
    }
    if !cfg.axioms.is_empty() {
        let extra = parse_axioms(&fs::read_to_string(&cfg.axioms)?)?;
        for p in &extra.predicates {
            match kb.predicate(&p.name) {
                None => return Err(TrainError::UngroundedAxiomPredicate(p.name.clone())),
                Some(base) if base.arity != p.arity => {
                    return Err(TrainError::AxiomArityMismatch {
                        name: p.name.clone(),
                        base: base.arity,
                        extra: p.arity,
                    })
                }
                Some(_) => {}
            }
        }
        kb.axioms.extend(extra.axioms);
    }
    // Axiom text doubles as the clause name, so repeats must be caught here.
    let mut seen = std::collections::BTreeSet::new();
    for axiom in &kb.axioms {
        let text = axiom.to_string();
        if !seen.insert(text.clone()) {
            return Err(TrainError::DuplicateAxiom(text));
        }
    }
    let diagnostics = validate(&kb);
    if let Some(d) = diagnostics.first() {
        return Err(TrainError::InvalidTheory(d.to_string()));
    }
    Ok(kb)
}

pub fn train(cfg: &ExperimentConfig) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let dataset = Dataset::load(&cfg.dataset)?;
    let classes = load_classes(&cfg.classes)?;
    let ontology = if cfg.ontology.is_empty() {
        None
    } else {
        Some(load_ontology(&cfg.ontology)?)
    };
    if let Some(o) = &ontology {
        o.validate(&classes)?;
    }
    for label in dataset.labels_used() {
        if label != BACKGROUND_LABEL && !classes.contains(&label) {
            return Err(DetectError::UnknownLabel(label).into());
        }
    }
    if (cfg.mereology || cfg.partof_expl) && ontology.as_ref().is_none_or(|o| o.is_empty()) {
        return Err(TrainError::EmptyOntology);
    }

    let kb = compose_prior(cfg, &classes, ontology.as_ref())?;
    if !cfg.axioms_out.is_empty() {
        fs::write(&cfg.axioms_out, kb.to_text())?;
    }

    let include_bg = cfg.variant.include_bg();
    let stats = if cfg.variant.use_alpha() {
        Some(ClassStats::compute(
            &classes,
            &dataset.class_counts(),
            cfg.batch_fg + cfg.batch_bg,
            cfg.beta,
            cfg.fg_fraction,
        )?)
    } else {
        None
    };

    let mut roster: Vec<(String, usize)> = classes
        .iter()
        .map(|c| (c.clone(), dataset.embed_dim))
        .collect();
    if include_bg {
        roster.push((BACKGROUND_LABEL.to_string(), dataset.embed_dim));
    }
    let ground_partof = kb.predicate(PARTOF_PREDICATE).is_some();
    if ground_partof {
        roster.push((PARTOF_PREDICATE.to_string(), pair_dim(dataset.embed_dim)));
    }
    let init = PredicateSet::init(&roster, cfg.kernels, cfg.seed);
    let mut params = init.to_tensors();

    let mut optimizer = AdamOptimizer::new(AdamHyper::default());
    let agg = AggregatorConfig::focal(cfg.gamma, cfg.variant.use_alpha(), cfg.beta);
    let partof_policy = PartofPolicy {
        positive_ir: cfg.partof_pos_ir,
        negative_ir: cfg.partof_neg_ir,
    };

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut skipped_total = 0usize;
    for epoch in 1..=cfg.epochs {
        let lr = if epoch <= cfg.lr_drop_epoch {
            cfg.lr
        } else {
            cfg.lr_after_drop
        };
        let mut sums = [0.0f64; 4];
        let mut batches = 0usize;
        for image in &dataset.images {
            let policy = BatchPolicy {
                fg_count: cfg.batch_fg,
                bg_count: cfg.batch_bg,
                seed: derive_seed(cfg.seed, &format!("{}/epoch{epoch}", image.id)),
            };
            let selection = match make_batch(&image.proposals, &policy) {
                Ok(s) => s,
                Err(DetectError::NoForeground) => {
                    skipped_total += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let picked: Vec<&crate::detect::ProposalEmbedding> = selection
                .indices()
                .iter()
                .map(|&i| &image.proposals[i])
                .collect();
            let labels: Vec<String> = picked.iter().map(|p| p.label.clone()).collect();

            let mut tape = Tape::new();
            let set = PredicateSet::from_tensors(&params)?;
            let grounded = set.insert_into_tape(&mut tape);
            let source = ProposalSource {
                proposals: picked.clone(),
                image_width: image.width,
                image_height: image.height,
            };
            let env = GroundingEnvironment::new(&source, grounded);
            let mut compiler = TheoryCompiler::new(&mut tape, &env);
            for clause in build_expl_isa(&labels, &classes, include_bg, stats.as_ref())? {
                compiler.add_literal_clause(&clause.name, &clause.literals, &agg)?;
            }
            if cfg.partof_expl {
                let ontology = ontology.as_ref().expect("checked above");
                let clause = build_expl_partof(&picked, ontology, &partof_policy);
                compiler.add_literal_clause(&clause.name, &clause.literals, &agg)?;
            }
            for axiom in &kb.axioms {
                compiler.add_axiom_clause(format!("prior/{axiom}"), axiom, &agg, 1.0)?;
            }
            let theory = compiler.finish(cfg.lambda_l2)?;

            if let Err(e) = tape.forward() {
                return Err(match e {
                    GraphError::NonFinite { node, .. } => TrainError::NonFiniteLoss {
                        epoch,
                        image: image.id.clone(),
                        clause: theory
                            .clause_containing(node)
                            .unwrap_or("regularizer")
                            .to_string(),
                    },
                    other => other.into(),
                });
            }
            tape.backward(theory.total)?;

            let mut grads = BTreeMap::new();
            for &pid in tape.params().to_vec().iter() {
                let name = tape.param_name(pid).expect("params are named").to_string();
                let grad = tape.grad(pid).expect("backward filled grads").clone();
                grads.insert(name, grad);
            }
            optimizer.step(&mut params, &grads, lr, cfg.weight_decay)?;

            sums[0] += theory.group_loss(&tape, "expl/");
            sums[1] += theory.group_loss(&tape, "prior/");
            sums[2] += tape.value(theory.l2).item();
            sums[3] += tape.value(theory.total).item();
            batches += 1;
        }
        if batches == 0 {
            return Err(TrainError::NoTrainableBatches);
        }
        let n = batches as f64;
        metrics.push(EpochMetrics {
            epoch,
            expl_loss: sums[0] / n,
            prior_loss: sums[1] / n,
            l2: sums[2] / n,
            total: sums[3] / n,
            lr,
        });
    }

    if !cfg.checkpoint_out.is_empty() {
        save_params(&cfg.checkpoint_out, &params)?;
    }
    if !cfg.metrics_out.is_empty() {
        fs::write(&cfg.metrics_out, metrics_to_text(&metrics))?;
    }
    Ok(TrainOutcome {
        params,
        metrics,
        skipped_batches: skipped_total,
        classes,
        knowledge: kb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::data::{write_classes, write_ontology};
    use crate::synth::{generate, SyntheticSpec};
    use std::path::Path;

    fn write_corpus(dir: &Path, spec: &SyntheticSpec, seed: u64) {
        let data = generate(spec, seed).unwrap();
        data.dataset.save(dir.join("data.txt")).unwrap();
        fs::write(dir.join("classes.txt"), write_classes(&data.classes)).unwrap();
        fs::write(dir.join("ontology.txt"), write_ontology(&data.ontology)).unwrap();
    }

    fn tiny_spec() -> SyntheticSpec {
        SyntheticSpec {
            classes: 2,
            embed_dim: 4,
            images: 6,
            proposals_per_image: 8,
            parts_per_whole: 1,
            ..SyntheticSpec::default()
        }
    }

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            epochs: 2,
            lr: 1e-3,
            lr_drop_epoch: 1,
            lr_after_drop: 1e-4,
            batch_fg: 2,
            batch_bg: 4,
            kernels: 2,
            mereology: false,
            dataset: dir.join("data.txt").to_str().unwrap().into(),
            classes: dir.join("classes.txt").to_str().unwrap().into(),
            checkpoint_out: dir.join("model.ltnw").to_str().unwrap().into(),
            metrics_out: dir.join("metrics.tsv").to_str().unwrap().into(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_epoch_run_writes_initial_params() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &tiny_spec(), 3);
        let mut cfg = tiny_config(dir.path());
        cfg.epochs = 0;
        cfg.lr_drop_epoch = 0;
        cfg.checkpoint_out = dir.path().join("w.bin").to_str().unwrap().into();
        let outcome = train(&cfg).unwrap();
        assert!(outcome.metrics.is_empty());

        let roster: Vec<(String, usize)> = outcome
            .classes
            .iter()
            .map(|c| (c.clone(), 4))
            .collect();
        let expected = PredicateSet::init(&roster, cfg.kernels, cfg.seed).to_tensors();
        assert_eq!(outcome.params, expected);
        let loaded = crate::autodiff::load_params(dir.path().join("w.bin")).unwrap();
        assert_eq!(loaded, expected);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &tiny_spec(), 11);
        let cfg = tiny_config(dir.path());
        let a = train(&cfg).unwrap();
        let b = train(&cfg).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.skipped_batches, b.skipped_batches);
    }

    #[test]
    fn metrics_follow_the_lr_schedule() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &tiny_spec(), 5);
        let mut cfg = tiny_config(dir.path());
        cfg.epochs = 3;
        cfg.lr_drop_epoch = 2;
        cfg.metrics_out = dir.path().join("m.tsv").to_str().unwrap().into();
        let outcome = train(&cfg).unwrap();
        let lrs: Vec<f64> = outcome.metrics.iter().map(|m| m.lr).collect();
        assert_eq!(lrs, vec![1e-3, 1e-3, 1e-4]);
        assert_eq!(
            outcome.metrics.iter().map(|m| m.epoch).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );

        let text = fs::read_to_string(dir.path().join("m.tsv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        for line in &lines {
            assert_eq!(line.split('\t').count(), 6);
        }
        assert!(lines[0].starts_with("1\t"));
        for m in &outcome.metrics {
            assert!(m.total.is_finite() && m.expl_loss >= 0.0 && m.l2 >= 0.0);
        }
    }

    #[test]
    fn images_without_foreground_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(&tiny_spec(), 9).unwrap();
        let mut dataset = data.dataset.clone();
        // Rewrite every proposal of the first image as background.
        for p in &mut dataset.images[0].proposals {
            p.label = BACKGROUND_LABEL.to_string();
        }
        dataset.save(dir.path().join("data.txt")).unwrap();
        fs::write(dir.path().join("classes.txt"), write_classes(&data.classes)).unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.epochs = 2;
        let outcome = train(&cfg).unwrap();
        assert_eq!(outcome.skipped_batches, 2);
    }

    #[test]
    fn unknown_label_is_rejected_before_training() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &tiny_spec(), 3);
        // Drop one class from the roster file so its labels go unknown.
        let data = generate(&tiny_spec(), 3).unwrap();
        fs::write(
            dir.path().join("classes.txt"),
            write_classes(&data.classes[..1]),
        )
        .unwrap();
        let cfg = tiny_config(dir.path());
        assert!(matches!(
            train(&cfg),
            Err(TrainError::Detect(DetectError::UnknownLabel(_)))
        ));
    }

    #[test]
    fn extra_axioms_merge_into_the_prior() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &tiny_spec(), 3);
        fs::write(
            dir.path().join("axioms.txt"),
            "pred c0/1\npred c0_p0/1\naxiom forall x: c0_p0(x) -> ~c0(x)\n",
        )
        .unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.epochs = 1;
        cfg.lr_drop_epoch = 0;
        cfg.axioms = dir.path().join("axioms.txt").to_str().unwrap().into();
        cfg.axioms_out = dir.path().join("theory.txt").to_str().unwrap().into();
        let outcome = train(&cfg).unwrap();
        assert!(outcome
            .knowledge
            .axioms
            .iter()
            .any(|a| a.to_string() == "forall x: c0_p0(x) -> ~c0(x)"));
        let text = fs::read_to_string(dir.path().join("theory.txt")).unwrap();
        assert!(text.contains("axiom forall x: c0_p0(x) -> ~c0(x)"));
        assert!(text.contains("pred c0/1"));
    }

    #[test]
    fn bad_extra_axioms_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &tiny_spec(), 3);
        let mut cfg = tiny_config(dir.path());
        cfg.axioms = dir.path().join("axioms.txt").to_str().unwrap().into();

        fs::write(
            dir.path().join("axioms.txt"),
            "pred mystery/1\naxiom forall x: mystery(x) -> mystery(x)\n",
        )
        .unwrap();
        assert!(matches!(
            train(&cfg),
            Err(TrainError::UngroundedAxiomPredicate(name)) if name == "mystery"
        ));

        fs::write(
            dir.path().join("axioms.txt"),
            "pred c0/2\naxiom forall x, y: c0(x, y) -> c0(x, y)\n",
        )
        .unwrap();
        assert!(matches!(
            train(&cfg),
            Err(TrainError::AxiomArityMismatch { base: 1, extra: 2, .. })
        ));

        // Restating a generated axiom collides with its clause name.
        fs::write(
            dir.path().join("axioms.txt"),
            "pred c0/1\npred c0_p0/1\naxiom forall x: c0(x) -> ~c0_p0(x)\n",
        )
        .unwrap();
        assert!(matches!(train(&cfg), Err(TrainError::DuplicateAxiom(_))));
    }

    #[test]
    fn loss_drops_on_a_small_separable_problem() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            classes: 2,
            embed_dim: 4,
            images: 8,
            proposals_per_image: 8,
            parts_per_whole: 0,
            ..SyntheticSpec::default()
        };
        write_corpus(dir.path(), &spec, 21);
        let mut cfg = tiny_config(dir.path());
        cfg.epochs = 15;
        cfg.lr = 5e-3;
        cfg.lr_drop_epoch = 12;
        cfg.lr_after_drop = 1e-3;
        let outcome = train(&cfg).unwrap();
        let first = outcome.metrics.first().unwrap().total;
        let last = outcome.metrics.last().unwrap().total;
        assert!(
            last < 0.5 * first,
            "loss should at least halve, went {first} -> {last}"
        );
    }

    #[test]
    fn partof_and_prior_clauses_are_compiled() {
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &tiny_spec(), 13);
        let mut cfg = tiny_config(dir.path());
        cfg.epochs = 1;
        cfg.lr_drop_epoch = 0;
        cfg.variant = Variant::BgAlpha;
        cfg.mereology = true;
        cfg.partof_expl = true;
        cfg.ontology = dir.path().join("ontology.txt").to_str().unwrap().into();
        let outcome = train(&cfg).unwrap();
        assert!(outcome.params.contains_key("partOf:W"));
        assert!(outcome.params.contains_key("bg:u"));
        assert!(!outcome.knowledge.axioms.is_empty());
        assert!(outcome.metrics[0].prior_loss > 0.0);
    }
}
