//! Weighted first-order rule language: programs, evidence files, parsing
//! and canonical formatting.
//!
//! Program syntax (one statement per `.`-terminated clause, `//` comments):
//!
//! ```text
//! predicate object/1 closed.
//! predicate candidate/2 open.
//! 1.0: candidate(M,O) <- object(O) & mention(M) & attr_o(O,A,V) & attr_m(M,A,V).
//! 0.1: !candidate(M,O) <- object(O) & mention(M).
//! ```
//!
//! Variables start uppercase, constants with a lowercase letter, digit, or
//! underscore. A rule weight is a non-negative number or `inf` (hard
//! constraint). Rules are stored in clause normal form: one disjunction in
//! which body literals appear negated. The canonical format emitted by
//! [`format_program`] prints that disjunction directly.
//!
//! Evidence syntax (line oriented):
//!
//! ```text
//! attr_o(o1,size,small) = 1.0
//! domain color: red, green, blue
//! ```

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("line {line}, col {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("line {line}: undeclared predicate `{name}/{arity}`")]
    UndeclaredPredicate {
        line: usize,
        name: String,
        arity: usize,
    },
    #[error("line {line}: predicate `{name}` is declared with arity {declared} but used with {found} arguments")]
    ArityMismatch {
        line: usize,
        name: String,
        declared: usize,
        found: usize,
    },
    #[error("line {line}: negative rule weight {weight}")]
    NegativeWeight { line: usize, weight: f64 },
    #[error("line {line}: duplicate declaration of predicate `{name}`")]
    DuplicatePredicate { line: usize, name: String },
    #[error("line {line}: evidence value {value} outside [0,1]")]
    ValueOutOfRange { line: usize, value: f64 },
    #[error("line {line}: evidence atom `{atom}` is not ground")]
    NonGroundEvidence { line: usize, atom: String },
    #[error("line {line}: conflicting values for `{atom}`: {old} vs {new}")]
    ConflictingEvidence {
        line: usize,
        atom: String,
        old: f64,
        new: f64,
    },
}

/// A declared predicate. Closed-world predicates are observed-only: ground
/// atoms missing from the evidence default to 0 during grounding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Predicate {
    pub name: String,
    pub arity: usize,
    pub closed_world: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Term {
    Var(String),
    Const(String),
}

impl Term {
    pub fn symbol(&self) -> &str {
        match self {
            Term::Var(s) | Term::Const(s) => s,
        }
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.predicate)?;
        if !self.args.is_empty() {
            write!(f, "(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{a}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Literal {
    pub atom: Atom,
    pub negated: bool,
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            write!(f, "!")?;
        }
        write!(f, "{}", self.atom)
    }
}

/// A weighted rule in clause normal form: a single disjunction of literals.
/// `head <- body` sugar is normalized at parse time by negating the body
/// literals and appending them to the head literals.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub weight: f64,
    pub clause: Vec<Literal>,
}

impl Rule {
    /// Literals that appear un-negated in the clause (the disjunctive head).
    pub fn positive(&self) -> impl Iterator<Item = &Literal> {
        self.clause.iter().filter(|l| !l.negated)
    }

    /// Literals that appear negated in the clause (the conjunctive body).
    pub fn negative(&self) -> impl Iterator<Item = &Literal> {
        self.clause.iter().filter(|l| l.negated)
    }

    pub fn is_hard(&self) -> bool {
        self.weight.is_infinite()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Program {
    pub predicates: Vec<Predicate>,
    pub rules: Vec<Rule>,
}

impl Program {
    pub fn predicate(&self, name: &str) -> Option<&Predicate> {
        self.predicates.iter().find(|p| p.name == name)
    }
}

/// A ground atom: predicate applied to constants only.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroundAtom {
    pub predicate: String,
    pub args: Vec<String>,
}

impl GroundAtom {
    pub fn new(predicate: impl Into<String>, args: &[&str]) -> Self {
        GroundAtom {
            predicate: predicate.into(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.predicate)?;
        if !self.args.is_empty() {
            write!(f, "({})", self.args.join(","))?;
        }
        Ok(())
    }
}

/// Observed truth values for ground atoms plus optional constant domains
/// used to enumerate variables not bound by any positive closed-world
/// body literal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvidenceSet {
    pub entries: BTreeMap<GroundAtom, f64>,
    pub domains: BTreeMap<String, Vec<String>>,
}

impl EvidenceSet {
    pub fn insert(&mut self, atom: GroundAtom, value: f64) {
        self.entries.insert(atom, value);
    }

    pub fn value(&self, atom: &GroundAtom) -> Option<f64> {
        self.entries.get(atom).copied()
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Number(f64),
    Colon,
    LParen,
    RParen,
    Comma,
    Dot,
    Pipe,
    Amp,
    Bang,
    Arrow,
    Eq,
    Slash,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Word(w) => write!(f, "`{w}`"),
            Tok::Number(n) => write!(f, "`{n}`"),
            Tok::Colon => write!(f, "`:`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::Dot => write!(f, "`.`"),
            Tok::Pipe => write!(f, "`|`"),
            Tok::Amp => write!(f, "`&`"),
            Tok::Bang => write!(f, "`!`"),
            Tok::Arrow => write!(f, "`<-`"),
            Tok::Eq => write!(f, "`=`"),
            Tok::Slash => write!(f, "`/`"),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.src.get(self.pos).copied()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek2(&self) -> Option<u8> {
        self.src.get(self.pos + 1).copied()
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: self.line,
            col: self.col,
            msg: msg.into(),
        }
    }

    fn tokens(mut self) -> Result<Vec<Spanned>, ParseError> {
        let mut out = Vec::new();
        while let Some(c) = self.peek() {
            let (line, col) = (self.line, self.col);
            match c {
                b' ' | b'\t' | b'\r' | b'\n' => {
                    self.bump();
                }
                b'/' if self.peek2() == Some(b'/') => {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                b':' => {
                    self.bump();
                    out.push(Spanned { tok: Tok::Colon, line, col });
                }
                b'(' => {
                    self.bump();
                    out.push(Spanned { tok: Tok::LParen, line, col });
                }
                b')' => {
                    self.bump();
                    out.push(Spanned { tok: Tok::RParen, line, col });
                }
                b',' => {
                    self.bump();
                    out.push(Spanned { tok: Tok::Comma, line, col });
                }
                b'.' => {
                    self.bump();
                    out.push(Spanned { tok: Tok::Dot, line, col });
                }
                b'|' => {
                    self.bump();
                    out.push(Spanned { tok: Tok::Pipe, line, col });
                }
                b'&' => {
                    self.bump();
                    out.push(Spanned { tok: Tok::Amp, line, col });
                }
                b'!' => {
                    self.bump();
                    out.push(Spanned { tok: Tok::Bang, line, col });
                }
                b'=' => {
                    self.bump();
                    out.push(Spanned { tok: Tok::Eq, line, col });
                }
                b'/' => {
                    self.bump();
                    out.push(Spanned { tok: Tok::Slash, line, col });
                }
                b'<' => {
                    self.bump();
                    if self.peek() == Some(b'-') {
                        self.bump();
                        out.push(Spanned { tok: Tok::Arrow, line, col });
                    } else {
                        return Err(self.err("expected `<-`"));
                    }
                }
                b'-' | b'0'..=b'9' => {
                    let tok = self.number()?;
                    out.push(Spanned { tok, line, col });
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let mut w = String::new();
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == b'_' {
                            w.push(c as char);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    out.push(Spanned { tok: Tok::Word(w), line, col });
                }
                other => {
                    return Err(self.err(format!("unexpected character `{}`", other as char)));
                }
            }
        }
        Ok(out)
    }

    fn number(&mut self) -> Result<Tok, ParseError> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.bump();
        }
        let mut saw_digit = false;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            saw_digit = true;
            self.bump();
        }
        // A decimal point only belongs to the number when a digit follows;
        // otherwise it terminates the statement.
        if self.peek() == Some(b'.') && matches!(self.peek2(), Some(b'0'..=b'9')) {
            self.bump();
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.bump();
            }
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let save = (self.pos, self.line, self.col);
            self.bump();
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.bump();
            }
            if matches!(self.peek(), Some(b'0'..=b'9')) {
                while matches!(self.peek(), Some(b'0'..=b'9')) {
                    self.bump();
                }
            } else {
                (self.pos, self.line, self.col) = save;
            }
        }
        if !saw_digit {
            return Err(self.err("expected a number"));
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        // Digit-leading bare words like `o1` are valid constants, so numbers
        // immediately followed by ident characters keep their textual form.
        if matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            let mut w = text.to_string();
            while let Some(c) = self.peek() {
                if c.is_ascii_alphanumeric() || c == b'_' {
                    w.push(c as char);
                    self.bump();
                } else {
                    break;
                }
            }
            return Ok(Tok::Word(w));
        }
        let v: f64 = text
            .parse()
            .map_err(|_| self.err(format!("invalid number `{text}`")))?;
        Ok(Tok::Number(v))
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn next(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn err_here(&self, msg: impl Into<String>) -> ParseError {
        let (line, col) = self
            .peek()
            .map(|s| (s.line, s.col))
            .unwrap_or_else(|| self.last_pos());
        ParseError::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn last_pos(&self) -> (usize, usize) {
        self.toks.last().map(|s| (s.line, s.col + 1)).unwrap_or((1, 1))
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<Spanned, ParseError> {
        match self.next() {
            Some(s) if s.tok == *want => Ok(s),
            Some(s) => Err(ParseError::Syntax {
                line: s.line,
                col: s.col,
                msg: format!("expected {what}, found {}", s.tok),
            }),
            None => {
                let (line, col) = self.last_pos();
                Err(ParseError::Syntax {
                    line,
                    col,
                    msg: format!("expected {what}, found end of input"),
                })
            }
        }
    }

    fn word(&mut self, what: &str) -> Result<(String, usize, usize), ParseError> {
        match self.next() {
            Some(Spanned {
                tok: Tok::Word(w),
                line,
                col,
            }) => Ok((w, line, col)),
            Some(s) => Err(ParseError::Syntax {
                line: s.line,
                col: s.col,
                msg: format!("expected {what}, found {}", s.tok),
            }),
            None => {
                let (line, col) = self.last_pos();
                Err(ParseError::Syntax {
                    line,
                    col,
                    msg: format!("expected {what}, found end of input"),
                })
            }
        }
    }

    fn term(&mut self) -> Result<(Term, usize), ParseError> {
        match self.next() {
            Some(Spanned {
                tok: Tok::Word(w),
                line,
                ..
            }) => {
                let first = w.chars().next().unwrap();
                if first.is_ascii_uppercase() {
                    Ok((Term::Var(w), line))
                } else {
                    Ok((Term::Const(w), line))
                }
            }
            Some(Spanned {
                tok: Tok::Number(n),
                line,
                ..
            }) => Ok((Term::Const(format_num(n)), line)),
            Some(s) => Err(ParseError::Syntax {
                line: s.line,
                col: s.col,
                msg: format!("expected a term, found {}", s.tok),
            }),
            None => {
                let (line, col) = self.last_pos();
                Err(ParseError::Syntax {
                    line,
                    col,
                    msg: "expected a term, found end of input".into(),
                })
            }
        }
    }

    fn atom(&mut self) -> Result<(Atom, usize), ParseError> {
        let (name, line, _) = self.word("a predicate name")?;
        let mut args = Vec::new();
        if matches!(self.peek().map(|s| &s.tok), Some(Tok::LParen)) {
            self.next();
            loop {
                let (t, _) = self.term()?;
                args.push(t);
                match self.next() {
                    Some(Spanned { tok: Tok::Comma, .. }) => continue,
                    Some(Spanned { tok: Tok::RParen, .. }) => break,
                    Some(s) => {
                        return Err(ParseError::Syntax {
                            line: s.line,
                            col: s.col,
                            msg: format!("expected `,` or `)`, found {}", s.tok),
                        })
                    }
                    None => {
                        let (line, col) = self.last_pos();
                        return Err(ParseError::Syntax {
                            line,
                            col,
                            msg: "unclosed argument list".into(),
                        });
                    }
                }
            }
        }
        Ok((
            Atom {
                predicate: name,
                args,
            },
            line,
        ))
    }

    fn literal(&mut self) -> Result<(Literal, usize), ParseError> {
        let mut negated = false;
        while matches!(self.peek().map(|s| &s.tok), Some(Tok::Bang)) {
            self.next();
            negated = !negated;
        }
        let (atom, line) = self.atom()?;
        Ok((Literal { atom, negated }, line))
    }
}

fn format_num(n: f64) -> String {
    if n == n.trunc() && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

fn check_atom(
    atom: &Atom,
    line: usize,
    decls: &BTreeMap<String, (usize, bool)>,
) -> Result<(), ParseError> {
    match decls.get(&atom.predicate) {
        None => Err(ParseError::UndeclaredPredicate {
            line,
            name: atom.predicate.clone(),
            arity: atom.args.len(),
        }),
        Some((arity, _)) if *arity != atom.args.len() => Err(ParseError::ArityMismatch {
            line,
            name: atom.predicate.clone(),
            declared: *arity,
            found: atom.args.len(),
        }),
        _ => Ok(()),
    }
}

/// Parse a rule-language source into a [`Program`]. Every predicate must be
/// declared before use; atoms are checked against declared arities.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let toks = Lexer::new(text).tokens()?;
    let mut p = Parser { toks, pos: 0 };
    let mut program = Program::default();
    let mut decls: BTreeMap<String, (usize, bool)> = BTreeMap::new();

    while let Some(next) = p.peek() {
        match &next.tok {
            Tok::Word(w) if w == "predicate" => {
                p.next();
                let (name, line, _) = p.word("a predicate name")?;
                p.expect(&Tok::Slash, "`/`")?;
                let arity = match p.next() {
                    Some(Spanned {
                        tok: Tok::Number(n), ..
                    }) if n >= 0.0 && n.fract() == 0.0 => n as usize,
                    _ => return Err(p.err_here("expected a non-negative integer arity")),
                };
                let (kind, kline, kcol) = p.word("`open` or `closed`")?;
                let closed_world = match kind.as_str() {
                    "closed" => true,
                    "open" => false,
                    other => {
                        return Err(ParseError::Syntax {
                            line: kline,
                            col: kcol,
                            msg: format!("expected `open` or `closed`, found `{other}`"),
                        })
                    }
                };
                p.expect(&Tok::Dot, "`.`")?;
                if decls.contains_key(&name) {
                    return Err(ParseError::DuplicatePredicate { line, name });
                }
                decls.insert(name.clone(), (arity, closed_world));
                program.predicates.push(Predicate {
                    name,
                    arity,
                    closed_world,
                });
            }
            _ => {
                // rule: weight ':' head ('|' head)* ('<-' body ('&' body)*)? '.'
                let (weight, wline) = match p.next() {
                    Some(Spanned {
                        tok: Tok::Number(n),
                        line,
                        ..
                    }) => (n, line),
                    Some(Spanned {
                        tok: Tok::Word(w),
                        line,
                        ..
                    }) if w == "inf" => (f64::INFINITY, line),
                    Some(s) => {
                        return Err(ParseError::Syntax {
                            line: s.line,
                            col: s.col,
                            msg: format!("expected a rule weight or `predicate`, found {}", s.tok),
                        })
                    }
                    None => break,
                };
                if weight < 0.0 {
                    return Err(ParseError::NegativeWeight {
                        line: wline,
                        weight,
                    });
                }
                if weight.is_nan() {
                    return Err(ParseError::Syntax {
                        line: wline,
                        col: 1,
                        msg: "rule weight is not a number".into(),
                    });
                }
                p.expect(&Tok::Colon, "`:`")?;
                let mut clause = Vec::new();
                loop {
                    let (lit, line) = p.literal()?;
                    check_atom(&lit.atom, line, &decls)?;
                    clause.push(lit);
                    if matches!(p.peek().map(|s| &s.tok), Some(Tok::Pipe)) {
                        p.next();
                    } else {
                        break;
                    }
                }
                if matches!(p.peek().map(|s| &s.tok), Some(Tok::Arrow)) {
                    p.next();
                    loop {
                        let (mut lit, line) = p.literal()?;
                        check_atom(&lit.atom, line, &decls)?;
                        lit.negated = !lit.negated;
                        clause.push(lit);
                        if matches!(p.peek().map(|s| &s.tok), Some(Tok::Amp)) {
                            p.next();
                        } else {
                            break;
                        }
                    }
                }
                p.expect(&Tok::Dot, "`.`")?;
                program.rules.push(Rule { weight, clause });
            }
        }
    }
    Ok(program)
}

/// Canonical text form: declarations first, then each rule as a flat
/// weighted disjunction. `parse_program(format_program(p))` is structurally
/// equal to `p`.
pub fn format_program(program: &Program) -> String {
    let mut out = String::new();
    for pred in &program.predicates {
        out.push_str(&format!(
            "predicate {}/{} {}.\n",
            pred.name,
            pred.arity,
            if pred.closed_world { "closed" } else { "open" }
        ));
    }
    for rule in &program.rules {
        let w = if rule.weight.is_infinite() {
            "inf".to_string()
        } else {
            format!("{}", rule.weight)
        };
        let lits: Vec<String> = rule.clause.iter().map(|l| l.to_string()).collect();
        out.push_str(&format!("{}: {}.\n", w, lits.join(" | ")));
    }
    out
}

/// Parse an evidence file: one `atom = value` entry per line, plus optional
/// `domain name: c1, c2, ...` lines; `//` comments allowed.
pub fn parse_evidence(text: &str) -> Result<EvidenceSet, ParseError> {
    let mut ev = EvidenceSet::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find("//") {
            Some(p) => &raw[..p],
            None => raw,
        };
        if line.trim().is_empty() {
            continue;
        }
        let toks = Lexer::new(line).tokens().map_err(|e| relocate(e, line_no))?;
        let mut p = Parser { toks, pos: 0 };
        if let Some(Spanned {
            tok: Tok::Word(w), ..
        }) = p.peek()
        {
            if w == "domain" {
                p.next();
                let (name, _, _) = p.word("a domain name").map_err(|e| relocate(e, line_no))?;
                p.expect(&Tok::Colon, "`:`").map_err(|e| relocate(e, line_no))?;
                let mut consts = Vec::new();
                loop {
                    let (t, _) = p.term().map_err(|e| relocate(e, line_no))?;
                    match t {
                        Term::Const(c) => consts.push(c),
                        Term::Var(v) => {
                            return Err(ParseError::Syntax {
                                line: line_no,
                                col: 1,
                                msg: format!("domain constant `{v}` must not start uppercase"),
                            })
                        }
                    }
                    if matches!(p.peek().map(|s| &s.tok), Some(Tok::Comma)) {
                        p.next();
                    } else {
                        break;
                    }
                }
                if p.peek().is_some() {
                    return Err(relocate(p.err_here("trailing input after domain"), line_no));
                }
                ev.domains.insert(name, consts);
                continue;
            }
        }
        let (atom, _) = p.atom().map_err(|e| relocate(e, line_no))?;
        p.expect(&Tok::Eq, "`=`").map_err(|e| relocate(e, line_no))?;
        let value = match p.next() {
            Some(Spanned {
                tok: Tok::Number(n), ..
            }) => n,
            _ => {
                return Err(ParseError::Syntax {
                    line: line_no,
                    col: 1,
                    msg: "expected a numeric value".into(),
                })
            }
        };
        if p.peek().is_some() {
            return Err(relocate(p.err_here("trailing input after value"), line_no));
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(ParseError::ValueOutOfRange {
                line: line_no,
                value,
            });
        }
        if atom.args.iter().any(|t| t.is_var()) {
            return Err(ParseError::NonGroundEvidence {
                line: line_no,
                atom: atom.to_string(),
            });
        }
        let ga = GroundAtom {
            predicate: atom.predicate,
            args: atom.args.iter().map(|t| t.symbol().to_string()).collect(),
        };
        if let Some(&old) = ev.entries.get(&ga) {
            if old != value {
                return Err(ParseError::ConflictingEvidence {
                    line: line_no,
                    atom: ga.to_string(),
                    old,
                    new: value,
                });
            }
        }
        ev.entries.insert(ga, value);
    }
    Ok(ev)
}

fn relocate(e: ParseError, line: usize) -> ParseError {
    match e {
        ParseError::Syntax { col, msg, .. } => ParseError::Syntax { line, col, msg },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DECLS: &str = "\
predicate candidate/2 open.
predicate object/1 closed.
predicate mention/1 closed.
predicate attr_o/3 closed.
predicate attr_m/3 closed.
";

    #[test]
    fn parses_candidate_rule() {
        let text = format!(
            "{DECLS}1.0: candidate(M,O) <- object(O) & mention(M) & attr_o(O,A,V) & attr_m(M,A,V).\n"
        );
        let p = parse_program(&text).unwrap();
        assert_eq!(p.rules.len(), 1);
        assert_eq!(p.predicates.len(), 5);
        let rule = &p.rules[0];
        // clause normal form: 1 head + 4 negated body literals
        assert_eq!(rule.clause.len(), 5);
        assert_eq!(rule.positive().count(), 1);
        assert_eq!(rule.negative().count(), 4);
        assert_eq!(rule.weight, 1.0);
    }

    #[test]
    fn declarations_only_yield_empty_program() {
        let p = parse_program(DECLS).unwrap();
        assert_eq!(p.rules.len(), 0);
        assert_eq!(p.predicates.len(), 5);
    }

    #[test]
    fn arity_mismatch_is_rejected() {
        let text = format!("{DECLS}1.0: candidate(M) <- object(O).\n");
        match parse_program(&text) {
            Err(ParseError::ArityMismatch {
                name,
                declared,
                found,
                ..
            }) => {
                assert_eq!(name, "candidate");
                assert_eq!(declared, 2);
                assert_eq!(found, 1);
            }
            other => panic!("expected arity mismatch, got {other:?}"),
        }
    }

    #[test]
    fn undeclared_predicate_is_rejected() {
        let text = "1.0: foo(X) <- foo(X).\n";
        assert!(matches!(
            parse_program(text),
            Err(ParseError::UndeclaredPredicate { .. })
        ));
    }

    #[test]
    fn negative_weight_is_rejected() {
        let text = format!("{DECLS}-0.5: object(X) <- object(X).\n");
        assert!(matches!(
            parse_program(&text),
            Err(ParseError::NegativeWeight { .. })
        ));
    }

    #[test]
    fn syntax_error_carries_position() {
        let text = "predicate p/1 closed.\n1.0: p(a) p(b).\n";
        match parse_program(text) {
            Err(ParseError::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn hard_rules_parse_as_infinite_weight() {
        let text = "predicate p/1 closed.\npredicate q/1 open.\ninf: q(X) <- p(X).\n";
        let p = parse_program(text).unwrap();
        assert!(p.rules[0].is_hard());
    }

    #[test]
    fn double_negation_cancels() {
        let text = "predicate p/1 closed.\npredicate q/1 open.\n1.0: q(X) <- !p(X).\n";
        let p = parse_program(text).unwrap();
        // body literal !p(X) contributes a positive p(X) to the clause
        assert_eq!(p.rules[0].positive().count(), 2);
    }

    #[test]
    fn format_round_trips_candidate_rules() {
        let text = format!(
            "{DECLS}\
predicate consistent/5 closed.
1.0: candidate(M,O) <- object(O) & mention(M) & attr_o(O,A,V) & attr_m(M,A,V).
1.0: candidate(M,O) <- object(O) & mention(M) & candidate(M1,O1) & consistent(R,O,O1,M,M1).
"
        );
        let p = parse_program(&text).unwrap();
        let formatted = format_program(&p);
        assert_eq!(formatted.lines().filter(|l| !l.starts_with("predicate")).count(), 2);
        let reparsed = parse_program(&formatted).unwrap();
        assert_eq!(p, reparsed);
    }

    #[test]
    fn format_round_trips_empty_program() {
        let p = parse_program(DECLS).unwrap();
        let reparsed = parse_program(&format_program(&p)).unwrap();
        assert_eq!(p, reparsed);
    }

    #[test]
    fn evidence_supplementary_entries() {
        let ev = parse_evidence(
            "attr_o(o1,size,small) = 1.0\nconsistent(left,o3,o6,x1,x2) = 1.0\n",
        )
        .unwrap();
        assert_eq!(
            ev.value(&GroundAtom::new("attr_o", &["o1", "size", "small"])),
            Some(1.0)
        );
        assert_eq!(
            ev.value(&GroundAtom::new(
                "consistent",
                &["left", "o3", "o6", "x1", "x2"]
            )),
            Some(1.0)
        );
    }

    #[test]
    fn evidence_range_is_checked() {
        assert!(matches!(
            parse_evidence("p(a) = 1.5\n"),
            Err(ParseError::ValueOutOfRange { value, .. }) if value == 1.5
        ));
    }

    #[test]
    fn evidence_must_be_ground() {
        assert!(matches!(
            parse_evidence("p(X) = 1.0\n"),
            Err(ParseError::NonGroundEvidence { .. })
        ));
    }

    #[test]
    fn evidence_conflicts_are_rejected() {
        assert!(matches!(
            parse_evidence("p(a) = 1.0\np(a) = 0.5\n"),
            Err(ParseError::ConflictingEvidence { .. })
        ));
        // same value twice is fine
        assert!(parse_evidence("p(a) = 1.0\np(a) = 1.0\n").is_ok());
    }

    #[test]
    fn evidence_domains_parse() {
        let ev = parse_evidence("domain color: red, green, blue\np(a) = 0.25\n").unwrap();
        assert_eq!(ev.domains["color"], vec!["red", "green", "blue"]);
    }

    #[test]
    fn digit_leading_constants_parse() {
        let ev = parse_evidence("p(1) = 1.0\np(2x) = 0.5\n").unwrap();
        assert_eq!(ev.value(&GroundAtom::new("p", &["1"])), Some(1.0));
        assert_eq!(ev.value(&GroundAtom::new("p", &["2x"])), Some(0.5));
    }

    // --- randomized round-trip ------------------------------------------

    fn arb_ident(upper: bool) -> impl Strategy<Value = String> {
        let first = if upper { "[A-Z]" } else { "[a-z]" };
        (first.prop_map(|s| s.to_string()), "[a-z0-9_]{0,5}")
            .prop_map(|(a, b)| format!("{a}{b}"))
    }

    prop_compose! {
        fn arb_program()(
            n_preds in 1usize..4,
            seed_names in proptest::collection::vec(arb_ident(false), 8),
            arities in proptest::collection::vec(0usize..3, 8),
            closed in proptest::collection::vec(any::<bool>(), 8),
            n_rules in 0usize..4,
            lits in proptest::collection::vec(
                (0usize..8, any::<bool>(), proptest::collection::vec((any::<bool>(), arb_ident(false), arb_ident(true)), 3)),
                12,
            ),
            weights in proptest::collection::vec(0.0f64..10.0, 4),
            lits_per_rule in proptest::collection::vec(1usize..4, 4),
        ) -> Program {
            let mut names: Vec<String> = Vec::new();
            for n in seed_names {
                if !names.contains(&n) { names.push(n); }
            }
            let n_preds = n_preds.min(names.len());
            let predicates: Vec<Predicate> = (0..n_preds).map(|i| Predicate {
                name: names[i].clone(),
                arity: arities[i],
                closed_world: closed[i],
            }).collect();
            let mut rules = Vec::new();
            let mut li = 0;
            for r in 0..n_rules {
                let mut clause = Vec::new();
                for _ in 0..lits_per_rule[r] {
                    let (pi, neg, ref terms) = lits[li % lits.len()];
                    li += 1;
                    let pred = &predicates[pi % predicates.len()];
                    let args = (0..pred.arity).map(|k| {
                        let (is_var, ref c, ref v) = terms[k % terms.len()];
                        if is_var { Term::Var(v.clone()) } else { Term::Const(c.clone()) }
                    }).collect();
                    clause.push(Literal { atom: Atom { predicate: pred.name.clone(), args }, negated: neg });
                }
                rules.push(Rule { weight: weights[r], clause });
            }
            Program { predicates, rules }
        }
    }

    proptest! {
        #[test]
        fn parse_format_identity(p in arb_program()) {
            let text = format_program(&p);
            let reparsed = parse_program(&text).unwrap();
            prop_assert_eq!(p, reparsed);
        }
    }
}
