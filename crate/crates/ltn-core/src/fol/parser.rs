//! Recursive-descent parser for the axiom text format.
//!
//! Tokens carry line/column positions (1-based) so errors point at the
//! offending character. Declarations are collected before axiom bodies are
//! checked, so a predicate may be declared after its first use.

use thiserror::Error;

use super::{Formula, KnowledgeBase, PredicateSymbol, Term};

#[derive(Debug, Error, PartialEq)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    fn new(line: usize, column: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            column,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Constant(String),
    Number(usize),
    LParen,
    RParen,
    Comma,
    Colon,
    Slash,
    Arrow,
    Tilde,
    Amp,
    Pipe,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Constant(s) => format!("`${s}`"),
            Tok::Number(n) => format!("`{n}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Colon => "`:`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Arrow => "`->`".into(),
            Tok::Tilde => "`~`".into(),
            Tok::Amp => "`&`".into(),
            Tok::Pipe => "`|`".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn tokenize(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let line_no = li + 1;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            match c {
                '#' => break,
                c if c.is_whitespace() => {
                    i += 1;
                }
                '(' => {
                    out.push(Spanned { tok: Tok::LParen, line: line_no, column: col });
                    i += 1;
                }
                ')' => {
                    out.push(Spanned { tok: Tok::RParen, line: line_no, column: col });
                    i += 1;
                }
                ',' => {
                    out.push(Spanned { tok: Tok::Comma, line: line_no, column: col });
                    i += 1;
                }
                ':' => {
                    out.push(Spanned { tok: Tok::Colon, line: line_no, column: col });
                    i += 1;
                }
                '/' => {
                    out.push(Spanned { tok: Tok::Slash, line: line_no, column: col });
                    i += 1;
                }
                '~' => {
                    out.push(Spanned { tok: Tok::Tilde, line: line_no, column: col });
                    i += 1;
                }
                '&' => {
                    out.push(Spanned { tok: Tok::Amp, line: line_no, column: col });
                    i += 1;
                }
                '|' => {
                    out.push(Spanned { tok: Tok::Pipe, line: line_no, column: col });
                    i += 1;
                }
                '-' => {
                    if chars.get(i + 1) == Some(&'>') {
                        out.push(Spanned { tok: Tok::Arrow, line: line_no, column: col });
                        i += 2;
                    } else {
                        return Err(ParseError::new(line_no, col, "expected `->`"));
                    }
                }
                '$' => {
                    let start = i + 1;
                    let mut end = start;
                    while end < chars.len() && is_ident_char(chars[end]) {
                        end += 1;
                    }
                    if end == start {
                        return Err(ParseError::new(
                            line_no,
                            col,
                            "`$` must be followed by a constant name",
                        ));
                    }
                    let name: String = chars[start..end].iter().collect();
                    out.push(Spanned { tok: Tok::Constant(name), line: line_no, column: col });
                    i = end;
                }
                c if c.is_ascii_digit() => {
                    let start = i;
                    let mut end = i;
                    while end < chars.len() && chars[end].is_ascii_digit() {
                        end += 1;
                    }
                    let text: String = chars[start..end].iter().collect();
                    let n = text.parse().map_err(|_| {
                        ParseError::new(line_no, col, format!("bad number `{text}`"))
                    })?;
                    out.push(Spanned { tok: Tok::Number(n), line: line_no, column: col });
                    i = end;
                }
                c if is_ident_start(c) => {
                    let start = i;
                    let mut end = i;
                    while end < chars.len() && is_ident_char(chars[end]) {
                        end += 1;
                    }
                    let name: String = chars[start..end].iter().collect();
                    out.push(Spanned { tok: Tok::Ident(name), line: line_no, column: col });
                    i = end;
                }
                other => {
                    return Err(ParseError::new(
                        line_no,
                        col,
                        format!("unexpected character `{other}`"),
                    ));
                }
            }
        }
    }
    Ok(out)
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    last_line: usize,
    last_column: usize,
}

/// Record of one atom occurrence, checked against declarations afterwards.
struct AtomUse {
    pred: String,
    argc: usize,
    line: usize,
    column: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if let Some(t) = &t {
            self.last_line = t.line;
            self.last_column = t.column;
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, message: impl Into<String>) -> ParseError {
        match self.peek() {
            Some(t) => ParseError::new(t.line, t.column, message),
            None => ParseError::new(self.last_line, self.last_column, message),
        }
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<Spanned, ParseError> {
        match self.peek() {
            Some(t) if &t.tok == want => Ok(self.next().unwrap()),
            Some(t) => Err(ParseError::new(
                t.line,
                t.column,
                format!("expected {what}, found {}", t.tok.describe()),
            )),
            None => Err(ParseError::new(
                self.last_line,
                self.last_column,
                format!("expected {what}, found end of input"),
            )),
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, usize, usize), ParseError> {
        match self.peek() {
            Some(Spanned { tok: Tok::Ident(_), .. }) => {
                let t = self.next().unwrap();
                if let Tok::Ident(name) = t.tok {
                    Ok((name, t.line, t.column))
                } else {
                    unreachable!()
                }
            }
            Some(t) => Err(ParseError::new(
                t.line,
                t.column,
                format!("expected {what}, found {}", t.tok.describe()),
            )),
            None => Err(ParseError::new(
                self.last_line,
                self.last_column,
                format!("expected {what}, found end of input"),
            )),
        }
    }

    // formula := "forall" vars ":" formula | implication
    fn formula(&mut self, uses: &mut Vec<AtomUse>) -> Result<Formula, ParseError> {
        if let Some(Spanned { tok: Tok::Ident(name), .. }) = self.peek() {
            if name == "forall" {
                self.next();
                let mut vars = Vec::new();
                loop {
                    let (v, line, column) = self.ident("a variable name")?;
                    if is_keyword(&v) {
                        return Err(ParseError::new(
                            line,
                            column,
                            format!("`{v}` is a keyword and cannot be a variable"),
                        ));
                    }
                    if vars.contains(&v) {
                        return Err(ParseError::new(
                            line,
                            column,
                            format!("variable `{v}` bound twice in one quantifier"),
                        ));
                    }
                    vars.push(v);
                    match self.peek() {
                        Some(Spanned { tok: Tok::Comma, .. }) => {
                            self.next();
                        }
                        _ => break,
                    }
                }
                self.expect(&Tok::Colon, "`:` after quantified variables")?;
                let body = self.formula(uses)?;
                return Ok(Formula::ForAll {
                    vars,
                    body: Box::new(body),
                });
            }
        }
        self.implication(uses)
    }

    // implication := disjunction ("->" formula)?   (right-associative)
    fn implication(&mut self, uses: &mut Vec<AtomUse>) -> Result<Formula, ParseError> {
        let left = self.disjunction(uses)?;
        if let Some(Spanned { tok: Tok::Arrow, .. }) = self.peek() {
            self.next();
            let right = self.implication(uses)?;
            return Ok(Formula::implies(left, right));
        }
        Ok(left)
    }

    fn disjunction(&mut self, uses: &mut Vec<AtomUse>) -> Result<Formula, ParseError> {
        let mut acc = self.conjunction(uses)?;
        while let Some(Spanned { tok: Tok::Pipe, .. }) = self.peek() {
            self.next();
            let rhs = self.conjunction(uses)?;
            acc = Formula::or(acc, rhs);
        }
        Ok(acc)
    }

    fn conjunction(&mut self, uses: &mut Vec<AtomUse>) -> Result<Formula, ParseError> {
        let mut acc = self.unary(uses)?;
        while let Some(Spanned { tok: Tok::Amp, .. }) = self.peek() {
            self.next();
            let rhs = self.unary(uses)?;
            acc = Formula::and(acc, rhs);
        }
        Ok(acc)
    }

    fn unary(&mut self, uses: &mut Vec<AtomUse>) -> Result<Formula, ParseError> {
        match self.peek() {
            Some(Spanned { tok: Tok::Tilde, .. }) => {
                self.next();
                let inner = self.unary(uses)?;
                Ok(Formula::not(inner))
            }
            Some(Spanned { tok: Tok::LParen, .. }) => {
                self.next();
                let inner = self.formula(uses)?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Spanned { tok: Tok::Ident(name), .. }) if name == "forall" => {
                self.formula(uses)
            }
            Some(Spanned { tok: Tok::Ident(_), .. }) => self.atom(uses),
            _ => Err(self.err_here("expected a formula")),
        }
    }

    fn atom(&mut self, uses: &mut Vec<AtomUse>) -> Result<Formula, ParseError> {
        let (pred, line, column) = self.ident("a predicate name")?;
        if is_keyword(&pred) {
            return Err(ParseError::new(
                line,
                column,
                format!("`{pred}` is a keyword and cannot be a predicate"),
            ));
        }
        self.expect(&Tok::LParen, "`(` after predicate name")?;
        let mut args = Vec::new();
        loop {
            match self.peek() {
                Some(Spanned { tok: Tok::Ident(_), .. }) => {
                    let (name, aline, acol) = self.ident("a term")?;
                    if is_keyword(&name) {
                        return Err(ParseError::new(
                            aline,
                            acol,
                            format!("`{name}` is a keyword and cannot be a term"),
                        ));
                    }
                    args.push(Term::Variable(name));
                }
                Some(Spanned { tok: Tok::Constant(_), .. }) => {
                    let t = self.next().unwrap();
                    if let Tok::Constant(name) = t.tok {
                        args.push(Term::Constant(name));
                    }
                }
                _ => return Err(self.err_here("expected a variable or `$constant`")),
            }
            match self.peek() {
                Some(Spanned { tok: Tok::Comma, .. }) => {
                    self.next();
                }
                Some(Spanned { tok: Tok::RParen, .. }) => {
                    self.next();
                    break;
                }
                _ => return Err(self.err_here("expected `,` or `)` in argument list")),
            }
        }
        uses.push(AtomUse {
            pred: pred.clone(),
            argc: args.len(),
            line,
            column,
        });
        Ok(Formula::Atom { pred, args })
    }
}

fn is_keyword(s: &str) -> bool {
    matches!(s, "pred" | "axiom" | "forall")
}

/// Parses declarations and axioms. Every axiom must be closed, reference only
/// declared predicates, and match declared arities.
pub fn parse_axioms(text: &str) -> Result<KnowledgeBase, ParseError> {
    let toks = tokenize(text)?;
    let mut parser = Parser {
        toks,
        pos: 0,
        last_line: 1,
        last_column: 1,
    };
    let mut kb = KnowledgeBase::default();
    // (axiom index, atom uses, quantifier position) gathered for deferred checks.
    let mut all_uses: Vec<(usize, Vec<AtomUse>, usize, usize)> = Vec::new();

    while let Some(t) = parser.peek() {
        match &t.tok {
            Tok::Ident(kw) if kw == "pred" => {
                parser.next();
                let (name, line, column) = parser.ident("a predicate name")?;
                if is_keyword(&name) {
                    return Err(ParseError::new(
                        line,
                        column,
                        format!("`{name}` is a keyword and cannot be a predicate"),
                    ));
                }
                parser.expect(&Tok::Slash, "`/` before arity")?;
                let arity = match parser.peek() {
                    Some(Spanned { tok: Tok::Number(n), .. }) => {
                        let n = *n;
                        parser.next();
                        n
                    }
                    _ => return Err(parser.err_here("expected an arity number")),
                };
                if arity == 0 {
                    return Err(ParseError::new(line, column, "arity must be >= 1"));
                }
                if kb.predicate(&name).is_some() {
                    return Err(ParseError::new(
                        line,
                        column,
                        format!("predicate `{name}` declared twice"),
                    ));
                }
                kb.predicates.push(PredicateSymbol { name, arity });
            }
            Tok::Ident(kw) if kw == "axiom" => {
                let at = parser.next().unwrap();
                let mut uses = Vec::new();
                let formula = parser.formula(&mut uses)?;
                all_uses.push((kb.axioms.len(), uses, at.line, at.column));
                kb.axioms.push(formula);
            }
            other => {
                return Err(ParseError::new(
                    t.line,
                    t.column,
                    format!("expected `pred` or `axiom`, found {}", other.describe()),
                ));
            }
        }
    }

    for (axiom_idx, uses, aline, acol) in &all_uses {
        for u in uses {
            match kb.predicate(&u.pred) {
                None => {
                    return Err(ParseError::new(
                        u.line,
                        u.column,
                        format!("predicate `{}` is not declared", u.pred),
                    ));
                }
                Some(decl) if decl.arity != u.argc => {
                    return Err(ParseError::new(
                        u.line,
                        u.column,
                        format!(
                            "predicate `{}` has arity {}, used with {} argument{}",
                            u.pred,
                            decl.arity,
                            u.argc,
                            if u.argc == 1 { "" } else { "s" }
                        ),
                    ));
                }
                Some(_) => {}
            }
        }
        let fv = super::free_variables(&kb.axioms[*axiom_idx]);
        if let Some(var) = fv.into_iter().next() {
            return Err(ParseError::new(
                *aline,
                *acol,
                format!("free variable `{var}` in axiom"),
            ));
        }
    }

    Ok(kb)
}
