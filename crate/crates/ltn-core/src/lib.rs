//! Differentiable first-order logic over tensor-network predicates.
//!
//! A knowledge base of fuzzy first-order formulas is grounded into a scalar
//! computation graph: predicates become small neural networks over feature
//! vectors, connectives become Lukasiewicz operators, and universal
//! quantifiers enumerate a finite domain of grounded objects. Training
//! maximises the satisfiability of the whole theory by gradient descent on a
//! focal log-product loss.
//!
//! Module map:
//!
//! * [`autodiff`]: dense `f64` tensors, a reverse-mode tape, Adam, checkpoints.
//! * [`fol`]: formula AST, line-oriented axiom text format, validation.
//! * [`fuzzy`]: Lukasiewicz connectives, focal aggregation, class weighting.
//! * [`ground`]: predicate parameterisation and theory compilation.
//! * [`detect`]: boxes, proposal groundings, example and prior theories.
//! * [`data`], [`synth`]: dataset file format and synthetic data generation.
//! * [`config`], [`train`], [`eval`]: experiment configs, the training loop,
//!   and average-precision evaluation.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod detect;
pub mod eval;
pub mod fol;
pub mod fuzzy;
pub mod ground;
pub mod synth;
pub mod train;
