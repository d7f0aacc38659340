//! First-order formula AST, validation, and the axiom text format.
//!
//! The language is small: named predicates of fixed arity over variables and
//! constants, the connectives `~` `&` `|` `->`, and a prenex `forall`
//! quantifier binding one or more variables. Axiom files are line-oriented:
//!
//! ```text
//! # comments run to end of line
//! pred Cat/1
//! pred partOf/2
//! axiom forall x: Cat(x) -> ~Dog(x)
//! ```
//!
//! Constants are written with a `$` prefix (`Cat($p3)`) so they cannot be
//! confused with variables. Printing and parsing round-trip:
//! `parse(print(parse(text)))` equals `parse(text)`.

mod parser;

pub use parser::{parse_axioms, ParseError};

use std::collections::BTreeSet;
use std::fmt;

/// Declared predicate: a name and fixed arity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateSymbol {
    pub name: String,
    pub arity: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Variable(String),
    Constant(String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Variable(v) => write!(f, "{v}"),
            Term::Constant(c) => write!(f, "${c}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Formula {
    Atom { pred: String, args: Vec<Term> },
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    ForAll { vars: Vec<String>, body: Box<Formula> },
}

impl Formula {
    pub fn atom(pred: impl Into<String>, args: Vec<Term>) -> Self {
        Formula::Atom {
            pred: pred.into(),
            args,
        }
    }

    /// Unary atom over a variable, the most common shape.
    pub fn atom_var(pred: impl Into<String>, var: impl Into<String>) -> Self {
        Formula::atom(pred, vec![Term::Variable(var.into())])
    }

    pub fn not(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Self {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Self {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Self {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn forall(vars: Vec<&str>, body: Formula) -> Self {
        Formula::ForAll {
            vars: vars.into_iter().map(str::to_string).collect(),
            body: Box::new(body),
        }
    }

    /// Left-fold of `|` over one or more disjuncts.
    pub fn or_chain(mut parts: Vec<Formula>) -> Self {
        assert!(!parts.is_empty(), "or_chain needs at least one disjunct");
        let mut acc = parts.remove(0);
        for p in parts {
            acc = Formula::or(acc, p);
        }
        acc
    }
}

/// Variables occurring outside the scope of any binder.
pub fn free_variables(f: &Formula) -> BTreeSet<String> {
    fn walk(f: &Formula, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
        match f {
            Formula::Atom { args, .. } => {
                for arg in args {
                    if let Term::Variable(v) = arg {
                        if !bound.iter().any(|b| b == v) {
                            out.insert(v.clone());
                        }
                    }
                }
            }
            Formula::Not(a) => walk(a, bound, out),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                walk(a, bound, out);
                walk(b, bound, out);
            }
            Formula::ForAll { vars, body } => {
                let depth = bound.len();
                bound.extend(vars.iter().cloned());
                walk(body, bound, out);
                bound.truncate(depth);
            }
        }
    }
    let mut out = BTreeSet::new();
    walk(f, &mut Vec::new(), &mut out);
    out
}

// Precedence levels used by the printer: higher binds tighter.
const PREC_IMPLIES: u8 = 1;
const PREC_OR: u8 = 2;
const PREC_AND: u8 = 3;
const PREC_NOT: u8 = 4;

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_prec(self, f, 0)
    }
}

fn fmt_prec(formula: &Formula, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
    let own = match formula {
        Formula::Atom { .. } => u8::MAX,
        Formula::Not(_) => PREC_NOT,
        Formula::And(..) => PREC_AND,
        Formula::Or(..) => PREC_OR,
        Formula::Implies(..) => PREC_IMPLIES,
        Formula::ForAll { .. } => 0,
    };
    let parens = own < parent;
    if parens {
        write!(f, "(")?;
    }
    match formula {
        Formula::Atom { pred, args } => {
            write!(f, "{pred}(")?;
            for (i, arg) in args.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write!(f, "{arg}")?;
            }
            write!(f, ")")?;
        }
        Formula::Not(a) => {
            write!(f, "~")?;
            fmt_prec(a, f, PREC_NOT)?;
        }
        Formula::And(a, b) => {
            fmt_prec(a, f, PREC_AND)?;
            write!(f, " & ")?;
            fmt_prec(b, f, PREC_AND + 1)?;
        }
        Formula::Or(a, b) => {
            fmt_prec(a, f, PREC_OR)?;
            write!(f, " | ")?;
            fmt_prec(b, f, PREC_OR + 1)?;
        }
        Formula::Implies(a, b) => {
            // Right-associative: parenthesise an implication on the left.
            fmt_prec(a, f, PREC_IMPLIES + 1)?;
            write!(f, " -> ")?;
            fmt_prec(b, f, PREC_IMPLIES)?;
        }
        Formula::ForAll { vars, body } => {
            write!(f, "forall {}: ", vars.join(", "))?;
            fmt_prec(body, f, 0)?;
        }
    }
    if parens {
        write!(f, ")")?;
    }
    Ok(())
}

/// A set of predicate declarations plus closed axioms.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct KnowledgeBase {
    pub predicates: Vec<PredicateSymbol>,
    pub axioms: Vec<Formula>,
}

impl KnowledgeBase {
    pub fn predicate(&self, name: &str) -> Option<&PredicateSymbol> {
        self.predicates.iter().find(|p| p.name == name)
    }

    /// Canonical text form; parses back to an equal knowledge base.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.predicates {
            out.push_str(&format!("pred {}/{}\n", p.name, p.arity));
        }
        for a in &self.axioms {
            out.push_str(&format!("axiom {a}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    DuplicatePredicate { name: String },
    ZeroArity { name: String },
    UndeclaredPredicate { axiom: usize, name: String },
    ArityMismatch { axiom: usize, name: String, declared: usize, used: usize },
    FreeVariable { axiom: usize, var: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::DuplicatePredicate { name } => {
                write!(f, "predicate `{name}` declared more than once")
            }
            Diagnostic::ZeroArity { name } => {
                write!(f, "predicate `{name}` must have arity >= 1")
            }
            Diagnostic::UndeclaredPredicate { axiom, name } => {
                write!(f, "axiom {axiom}: predicate `{name}` is not declared")
            }
            Diagnostic::ArityMismatch {
                axiom,
                name,
                declared,
                used,
            } => write!(
                f,
                "axiom {axiom}: predicate `{name}` declared with arity {declared}, used with {used}"
            ),
            Diagnostic::FreeVariable { axiom, var } => {
                write!(f, "axiom {axiom}: free variable `{var}`")
            }
        }
    }
}

/// Structural checks on a (possibly hand-built) knowledge base.
/// An empty result means the base is well-formed.
pub fn validate(kb: &KnowledgeBase) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for p in &kb.predicates {
        if !seen.insert(p.name.clone()) {
            out.push(Diagnostic::DuplicatePredicate {
                name: p.name.clone(),
            });
        }
        if p.arity == 0 {
            out.push(Diagnostic::ZeroArity {
                name: p.name.clone(),
            });
        }
    }
    for (i, axiom) in kb.axioms.iter().enumerate() {
        check_atoms(axiom, i, kb, &mut out);
        for var in free_variables(axiom) {
            out.push(Diagnostic::FreeVariable { axiom: i, var });
        }
    }
    out
}

fn check_atoms(f: &Formula, axiom: usize, kb: &KnowledgeBase, out: &mut Vec<Diagnostic>) {
    match f {
        Formula::Atom { pred, args } => match kb.predicate(pred) {
            None => out.push(Diagnostic::UndeclaredPredicate {
                axiom,
                name: pred.clone(),
            }),
            Some(decl) if decl.arity != args.len() => out.push(Diagnostic::ArityMismatch {
                axiom,
                name: pred.clone(),
                declared: decl.arity,
                used: args.len(),
            }),
            Some(_) => {}
        },
        Formula::Not(a) => check_atoms(a, axiom, kb, out),
        Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
            check_atoms(a, axiom, kb, out);
            check_atoms(b, axiom, kb, out);
        }
        Formula::ForAll { body, .. } => check_atoms(body, axiom, kb, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_variables_closed_formula() {
        let f = Formula::forall(
            vec!["x"],
            Formula::implies(
                Formula::atom_var("Cat", "x"),
                Formula::not(Formula::atom_var("Person", "x")),
            ),
        );
        assert!(free_variables(&f).is_empty());
    }

    #[test]
    fn free_variables_open_formula() {
        let f = Formula::and(
            Formula::atom_var("Cat", "x"),
            Formula::forall(vec!["y"], Formula::atom_var("Dog", "y")),
        );
        let fv = free_variables(&f);
        assert_eq!(fv.into_iter().collect::<Vec<_>>(), vec!["x".to_string()]);
    }

    #[test]
    fn free_variables_sees_through_shadowing() {
        // y is bound in the inner quantifier but free in the left conjunct.
        let f = Formula::and(
            Formula::atom_var("P", "y"),
            Formula::forall(vec!["y"], Formula::atom_var("P", "y")),
        );
        let fv = free_variables(&f);
        assert_eq!(fv.into_iter().collect::<Vec<_>>(), vec!["y".to_string()]);
    }

    #[test]
    fn display_minimal_parens() {
        let f = Formula::implies(
            Formula::atom_var("A", "x"),
            Formula::or(
                Formula::and(Formula::atom_var("B", "x"), Formula::atom_var("C", "x")),
                Formula::not(Formula::atom_var("D", "x")),
            ),
        );
        assert_eq!(f.to_string(), "A(x) -> B(x) & C(x) | ~D(x)");
    }

    #[test]
    fn display_parenthesises_when_needed() {
        let f = Formula::and(
            Formula::or(Formula::atom_var("A", "x"), Formula::atom_var("B", "x")),
            Formula::atom_var("C", "x"),
        );
        assert_eq!(f.to_string(), "(A(x) | B(x)) & C(x)");

        let g = Formula::not(Formula::and(
            Formula::atom_var("A", "x"),
            Formula::atom_var("B", "x"),
        ));
        assert_eq!(g.to_string(), "~(A(x) & B(x))");

        let h = Formula::implies(
            Formula::implies(Formula::atom_var("A", "x"), Formula::atom_var("B", "x")),
            Formula::atom_var("C", "x"),
        );
        assert_eq!(h.to_string(), "(A(x) -> B(x)) -> C(x)");
    }

    #[test]
    fn display_constants() {
        let f = Formula::atom("Cat", vec![Term::Constant("p3".into())]);
        assert_eq!(f.to_string(), "Cat($p3)");
    }

    #[test]
    fn validate_accepts_well_formed() {
        let kb = KnowledgeBase {
            predicates: vec![
                PredicateSymbol {
                    name: "Cat".into(),
                    arity: 1,
                },
                PredicateSymbol {
                    name: "partOf".into(),
                    arity: 2,
                },
            ],
            axioms: vec![Formula::forall(
                vec!["x", "y"],
                Formula::implies(
                    Formula::atom(
                        "partOf",
                        vec![Term::Variable("y".into()), Term::Variable("x".into())],
                    ),
                    Formula::atom_var("Cat", "x"),
                ),
            )],
        };
        assert!(validate(&kb).is_empty());
    }

    #[test]
    fn validate_reports_problems() {
        let kb = KnowledgeBase {
            predicates: vec![
                PredicateSymbol {
                    name: "P".into(),
                    arity: 1,
                },
                PredicateSymbol {
                    name: "P".into(),
                    arity: 2,
                },
            ],
            axioms: vec![
                Formula::atom_var("Q", "x"),
                Formula::atom("P", vec![Term::Constant("a".into()), Term::Constant("b".into())]),
            ],
        };
        let diags = validate(&kb);
        assert!(diags
            .iter()
            .any(|d| matches!(d, Diagnostic::DuplicatePredicate { .. })));
        assert!(diags
            .iter()
            .any(|d| matches!(d, Diagnostic::UndeclaredPredicate { axiom: 0, .. })));
        assert!(diags
            .iter()
            .any(|d| matches!(d, Diagnostic::FreeVariable { axiom: 0, .. })));
        // Axiom 1 uses the first declaration of P (arity 1) with two args.
        assert!(diags
            .iter()
            .any(|d| matches!(d, Diagnostic::ArityMismatch { axiom: 1, .. })));
    }
}
