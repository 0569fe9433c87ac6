//! A small STRIPS-style action language: parsing, validation, grounding and
//! symbolic state transitions.
//!
//! ```text
//! # comment
//! types: position door area
//! objects: position P1 P2 P3
//! predicates: at(position) open(door) in(position,area)
//! statics: in(P1,A1) in(P2,A1)
//! action: goto(P:position)
//!   pre:  at(Q), in(Q,AR), in(P,AR), neq(Q,P) | at(Q), adj(Q,P)
//!   add:  at(P)
//!   del:  at(Q), open(_)
//! ```
//!
//! Identifiers naming a declared object are constants, other capitalized
//! identifiers are variables. Variables that are not parameters are
//! existential and bound by the precondition. `|` separates alternative
//! precondition clauses, `_` in a delete list matches any argument, and
//! `neq(X,Y)` is built in. Predicates that appear in an add or delete list
//! are dynamic; all others are static and resolved during grounding.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

pub const NEQ: &str = "neq";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LangError {
    #[error("{line}:{column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("no schemas declared")]
    NoSchemas,
}

fn perr<T>(line: usize, column: usize, message: impl Into<String>) -> Result<T, LangError> {
    Err(LangError::Parse { line, column, message: message.into() })
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("precondition violated for {action}: missing {}", missing.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "))]
pub struct ApplyError {
    pub action: String,
    pub missing: Vec<Fluent>,
}

/// A ground atom.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fluent {
    pub predicate: String,
    pub args: Vec<String>,
}

impl Fluent {
    pub fn new(predicate: &str, args: &[&str]) -> Self {
        Fluent {
            predicate: predicate.to_string(),
            args: args.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn write_atom<T: fmt::Display>(f: &mut fmt::Formatter<'_>, pred: &str, args: &[T]) -> fmt::Result {
    f.write_str(pred)?;
    if !args.is_empty() {
        f.write_str("(")?;
        for (i, a) in args.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}")?;
        }
        f.write_str(")")?;
    }
    Ok(())
}

impl fmt::Display for Fluent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_atom(f, &self.predicate, &self.args)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(String),
    Const(String),
    Any,
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) | Term::Const(v) => f.write_str(v),
            Term::Any => f.write_str("_"),
        }
    }
}

/// Fluent template inside a schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_atom(f, &self.predicate, &self.args)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub ty: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateDecl {
    pub name: String,
    pub arg_types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSchema {
    pub name: String,
    pub params: Vec<Param>,
    /// Alternative precondition clauses (disjunctive normal form).
    pub pre: Vec<Vec<Atom>>,
    pub add: Vec<Atom>,
    pub del: Vec<Atom>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainSpec {
    pub types: Vec<String>,
    /// Objects per type, in declaration order.
    pub objects: Vec<(String, Vec<String>)>,
    pub predicates: Vec<PredicateDecl>,
    pub statics: BTreeSet<Fluent>,
    pub schemas: Vec<ActionSchema>,
}

impl DomainSpec {
    pub fn objects_of(&self, ty: &str) -> &[String] {
        self.objects
            .iter()
            .find(|(t, _)| t == ty)
            .map_or(&[][..], |(_, objs)| objs.as_slice())
    }

    pub fn object_type(&self, name: &str) -> Option<&str> {
        self.objects
            .iter()
            .find(|(_, objs)| objs.iter().any(|o| o == name))
            .map(|(t, _)| t.as_str())
    }

    pub fn predicate(&self, name: &str) -> Option<&PredicateDecl> {
        self.predicates.iter().find(|p| p.name == name)
    }

    /// Predicates changed by some schema.
    pub fn dynamic_predicates(&self) -> BTreeSet<&str> {
        self.schemas
            .iter()
            .flat_map(|s| s.add.iter().chain(&s.del))
            .map(|a| a.predicate.as_str())
            .collect()
    }

    /// Render back to source text; `parse_domain` of the result yields an
    /// equal spec.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("types: {}\n", self.types.join(" ")));
        for (ty, objs) in &self.objects {
            out.push_str(&format!("objects: {ty} {}\n", objs.join(" ")));
        }
        let preds: Vec<String> = self
            .predicates
            .iter()
            .map(|p| {
                if p.arg_types.is_empty() {
                    p.name.clone()
                } else {
                    format!("{}({})", p.name, p.arg_types.join(","))
                }
            })
            .collect();
        out.push_str(&format!("predicates: {}\n", preds.join(" ")));
        if !self.statics.is_empty() {
            let facts: Vec<String> = self.statics.iter().map(ToString::to_string).collect();
            out.push_str(&format!("statics: {}\n", facts.join(" ")));
        }
        let join = |atoms: &[Atom]| atoms.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
        for s in &self.schemas {
            let params: Vec<String> = s.params.iter().map(|p| format!("{}:{}", p.name, p.ty)).collect();
            out.push_str(&format!("action: {}({})\n", s.name, params.join(", ")));
            let clauses: Vec<String> = s.pre.iter().map(|c| join(c)).collect();
            out.push_str(&format!("  pre: {}\n", clauses.join(" | ")));
            out.push_str(&format!("  add: {}\n", join(&s.add)));
            out.push_str(&format!("  del: {}\n", join(&s.del)));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Parsing

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    /// Column of `bytes[0]` in the original line (1-based).
    base: usize,
}

impl<'a> Cursor<'a> {
    fn col(&self) -> usize {
        self.base + self.pos
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos >= self.bytes.len()
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<(), LangError> {
        if self.eat(c) {
            Ok(())
        } else {
            perr(self.line, self.col(), format!("expected '{}'", c as char))
        }
    }

    fn ident(&mut self) -> Result<(String, usize), LangError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || matches!(self.bytes[self.pos], b'_' | b'-'))
        {
            self.pos += 1;
        }
        if start == self.pos {
            return perr(self.line, self.base + start, "expected identifier");
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii");
        Ok((s.to_string(), self.base + start))
    }
}

/// Raw atom with the column of each piece.
struct RawAtom {
    name: String,
    col: usize,
    args: Vec<(String, usize)>,
}

fn raw_atom(c: &mut Cursor<'_>) -> Result<RawAtom, LangError> {
    let (name, col) = c.ident()?;
    let mut args = Vec::new();
    if c.eat(b'(')
        && !c.eat(b')') {
            loop {
                args.push(c.ident()?);
                if c.eat(b')') {
                    break;
                }
                c.expect(b',')?;
            }
        }
    Ok(RawAtom { name, col, args })
}

/// Atoms separated by commas and/or whitespace, grouped into `|` clauses.
fn raw_clauses(c: &mut Cursor<'_>) -> Result<Vec<Vec<RawAtom>>, LangError> {
    let mut clauses = vec![Vec::new()];
    while !c.at_end() {
        if c.eat(b'|') {
            clauses.push(Vec::new());
            continue;
        }
        if c.eat(b',') {
            continue;
        }
        let atom = raw_atom(c)?;
        clauses.last_mut().expect("nonempty").push(atom);
    }
    Ok(clauses)
}

fn is_variable_name(s: &str) -> bool {
    s.starts_with(|ch: char| ch.is_ascii_uppercase())
}

struct PendingSchema {
    name: String,
    line: usize,
    params: Vec<Param>,
    pre: Option<Vec<Vec<(RawAtom, usize)>>>,
    add: Option<Vec<(RawAtom, usize)>>,
    del: Option<Vec<(RawAtom, usize)>>,
}

/// Parse and validate an action-language source.
pub fn parse_domain(text: &str) -> Result<DomainSpec, LangError> {
    let mut types: Vec<String> = Vec::new();
    let mut objects: Vec<(String, Vec<String>)> = Vec::new();
    let mut predicates: Vec<PredicateDecl> = Vec::new();
    let mut raw_statics: Vec<(RawAtom, usize)> = Vec::new();
    let mut pending: Vec<PendingSchema> = Vec::new();

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.split('#').next().unwrap_or("");
        let trimmed = line.trim_start();
        if trimmed.is_empty() {
            continue;
        }
        let indent = line.len() - trimmed.len();
        let Some(colon) = trimmed.find(':') else {
            return perr(line_no, indent + 1, "expected a section keyword");
        };
        let keyword = trimmed[..colon].trim();
        let rest = &trimmed[colon + 1..];
        let mut c = Cursor { bytes: rest.as_bytes(), pos: 0, line: line_no, base: indent + colon + 2 };
        match keyword {
            "types" => {
                while !c.at_end() {
                    let (t, col) = c.ident()?;
                    if types.contains(&t) {
                        return perr(line_no, col, format!("duplicate type {t}"));
                    }
                    types.push(t);
                }
            }
            "objects" => {
                let (ty, col) = c.ident()?;
                if !types.contains(&ty) {
                    return perr(line_no, col, format!("undeclared type {ty}"));
                }
                while !c.at_end() {
                    let (o, col) = c.ident()?;
                    if objects.iter().any(|(_, os)| os.contains(&o)) {
                        return perr(line_no, col, format!("duplicate object {o}"));
                    }
                    match objects.iter_mut().find(|(t, _)| *t == ty) {
                        Some((_, os)) => os.push(o),
                        None => objects.push((ty.clone(), vec![o])),
                    }
                }
            }
            "predicates" => {
                while !c.at_end() {
                    let atom = raw_atom(&mut c)?;
                    if atom.name == NEQ || predicates.iter().any(|p| p.name == atom.name) {
                        return perr(line_no, atom.col, format!("duplicate predicate {}", atom.name));
                    }
                    for (t, col) in &atom.args {
                        if !types.contains(t) {
                            return perr(line_no, *col, format!("undeclared type {t}"));
                        }
                    }
                    predicates.push(PredicateDecl {
                        name: atom.name,
                        arg_types: atom.args.into_iter().map(|(t, _)| t).collect(),
                    });
                }
            }
            "statics" => {
                for clause in raw_clauses(&mut c)? {
                    raw_statics.extend(clause.into_iter().map(|a| (a, line_no)));
                }
            }
            "action" => {
                let (name, col) = c.ident()?;
                if pending.iter().any(|s| s.name == name) {
                    return perr(line_no, col, format!("duplicate action {name}"));
                }
                let mut params = Vec::new();
                c.expect(b'(')?;
                if !c.eat(b')') {
                    loop {
                        let (pname, pcol) = c.ident()?;
                        if !is_variable_name(&pname) {
                            return perr(line_no, pcol, format!("parameter {pname} must be capitalized"));
                        }
                        c.expect(b':')?;
                        let (ty, tcol) = c.ident()?;
                        if !types.contains(&ty) {
                            return perr(line_no, tcol, format!("undeclared type {ty}"));
                        }
                        if params.iter().any(|p: &Param| p.name == pname) {
                            return perr(line_no, pcol, format!("duplicate parameter {pname}"));
                        }
                        params.push(Param { name: pname, ty });
                        if c.eat(b')') {
                            break;
                        }
                        c.expect(b',')?;
                    }
                }
                if !c.at_end() {
                    return perr(line_no, c.col(), "unexpected text after action header");
                }
                pending.push(PendingSchema { name, line: line_no, params, pre: None, add: None, del: None });
            }
            "pre" | "add" | "del" => {
                let Some(schema) = pending.last_mut() else {
                    return perr(line_no, indent + 1, format!("'{keyword}' outside an action"));
                };
                let clauses = raw_clauses(&mut c)?;
                let tag = |cl: Vec<RawAtom>| cl.into_iter().map(|a| (a, line_no)).collect::<Vec<_>>();
                let slot_taken = match keyword {
                    "pre" => schema.pre.is_some(),
                    "add" => schema.add.is_some(),
                    _ => schema.del.is_some(),
                };
                if slot_taken {
                    return perr(line_no, indent + 1, format!("duplicate '{keyword}' in action {}", schema.name));
                }
                if keyword == "pre" {
                    let mut tagged: Vec<Vec<(RawAtom, usize)>> = clauses.into_iter().map(tag).collect();
                    if tagged.len() == 1 && tagged[0].is_empty() {
                        tagged.clear();
                    }
                    if tagged.iter().any(Vec::is_empty) && !tagged.is_empty() {
                        return perr(line_no, indent + 1, "empty precondition clause");
                    }
                    schema.pre = Some(tagged);
                } else {
                    if clauses.len() > 1 {
                        return perr(line_no, indent + 1, "'|' is only allowed in preconditions".to_string());
                    }
                    let atoms = tag(clauses.into_iter().next().unwrap_or_default());
                    if keyword == "add" {
                        schema.add = Some(atoms);
                    } else {
                        schema.del = Some(atoms);
                    }
                }
            }
            other => return perr(line_no, indent + 1, format!("unknown section '{other}'")),
        }
    }

    if pending.is_empty() {
        return Err(LangError::NoSchemas);
    }

    let mut spec = DomainSpec { types, objects, predicates, statics: BTreeSet::new(), schemas: Vec::new() };

    for (atom, line) in raw_statics {
        let decl = check_predicate(&spec, &atom, line)?;
        let mut args = Vec::new();
        for ((a, col), ty) in atom.args.iter().zip(&decl.arg_types) {
            match spec.object_type(a) {
                Some(t) if t == ty => args.push(a.clone()),
                Some(t) => return perr(line, *col, format!("object {a} has type {t}, expected {ty}")),
                None => return perr(line, *col, format!("undeclared object {a}")),
            }
        }
        spec.statics.insert(Fluent { predicate: atom.name, args });
    }

    let mut schemas = Vec::new();
    for p in pending {
        schemas.push(build_schema(&spec, p)?);
    }
    spec.schemas = schemas;

    let dynamic = spec.dynamic_predicates();
    if let Some(f) = spec.statics.iter().find(|f| dynamic.contains(f.predicate.as_str())) {
        return perr(0, 0, format!("static fact {f} uses dynamic predicate {}", f.predicate));
    }
    Ok(spec)
}

fn check_predicate<'s>(spec: &'s DomainSpec, atom: &RawAtom, line: usize) -> Result<&'s PredicateDecl, LangError> {
    let Some(decl) = spec.predicate(&atom.name) else {
        return perr(line, atom.col, format!("undeclared predicate {}", atom.name));
    };
    if decl.arg_types.len() != atom.args.len() {
        return perr(
            line,
            atom.col,
            format!("predicate {} expects {} arguments, got {}", atom.name, decl.arg_types.len(), atom.args.len()),
        );
    }
    Ok(decl)
}

fn build_schema(spec: &DomainSpec, p: PendingSchema) -> Result<ActionSchema, LangError> {
    let mut var_types: HashMap<String, String> =
        p.params.iter().map(|q| (q.name.clone(), q.ty.clone())).collect();

    let convert = |atom: &RawAtom, line: usize, allow_any: bool, var_types: &mut HashMap<String, String>| -> Result<Atom, LangError> {
        let expected: Vec<Option<String>> = if atom.name == NEQ {
            if atom.args.len() != 2 {
                return perr(line, atom.col, "neq expects 2 arguments");
            }
            vec![None, None]
        } else {
            check_predicate(spec, atom, line)?.arg_types.iter().cloned().map(Some).collect()
        };
        let mut args = Vec::new();
        for ((a, col), ty) in atom.args.iter().zip(expected) {
            if a == "_" {
                if !allow_any {
                    return perr(line, *col, format!("'_' is only allowed in delete lists (action {})", p.name));
                }
                args.push(Term::Any);
            } else if let Some(t) = spec.object_type(a) {
                if let Some(ty) = &ty {
                    if t != ty {
                        return perr(line, *col, format!("object {a} has type {t}, expected {ty}"));
                    }
                }
                args.push(Term::Const(a.clone()));
            } else if is_variable_name(a) {
                if let Some(ty) = ty {
                    match var_types.get(a) {
                        Some(prev) if *prev != ty => {
                            return perr(line, *col, format!("variable {a} used as {ty} but is {prev} (action {})", p.name));
                        }
                        Some(_) => {}
                        None => {
                            var_types.insert(a.clone(), ty);
                        }
                    }
                }
                args.push(Term::Var(a.clone()));
            } else {
                return perr(line, *col, format!("undeclared object {a}"));
            }
        }
        Ok(Atom { predicate: atom.name.clone(), args })
    };

    let mut pre = Vec::new();
    for clause in p.pre.unwrap_or_default() {
        let mut atoms = Vec::new();
        for (a, line) in &clause {
            atoms.push(convert(a, *line, false, &mut var_types)?);
        }
        pre.push(atoms);
    }
    let mut add = Vec::new();
    for (a, line) in p.add.as_deref().unwrap_or_default() {
        add.push(convert(a, *line, false, &mut var_types)?);
    }
    let mut del = Vec::new();
    for (a, line) in p.del.as_deref().unwrap_or_default() {
        del.push(convert(a, *line, true, &mut var_types)?);
    }

    let vars_of = |atoms: &[Atom]| -> BTreeSet<String> {
        atoms
            .iter()
            .filter(|a| a.predicate != NEQ)
            .flat_map(|a| a.args.iter())
            .filter_map(|t| match t {
                Term::Var(v) => Some(v.clone()),
                _ => None,
            })
            .collect()
    };
    let params: BTreeSet<String> = p.params.iter().map(|q| q.name.clone()).collect();
    let clause_vars: Vec<BTreeSet<String>> = if pre.is_empty() {
        vec![BTreeSet::new()]
    } else {
        pre.iter().map(|c| vars_of(c)).collect()
    };

    for (i, clause) in pre.iter().enumerate() {
        for atom in clause.iter().filter(|a| a.predicate == NEQ) {
            for t in &atom.args {
                if let Term::Var(v) = t {
                    if !params.contains(v) && !clause_vars[i].contains(v) {
                        return perr(p.line, 1, format!("unbound variable {v} in neq of action {}", p.name));
                    }
                }
            }
        }
    }
    for (list, label) in [(&add, "add"), (&del, "del")] {
        for v in vars_of(list) {
            let bound = params.contains(&v) || clause_vars.iter().all(|cv| cv.contains(&v));
            if !bound {
                return perr(p.line, 1, format!("unbound variable {v} in {label} list of action {}", p.name));
            }
        }
    }

    Ok(ActionSchema { name: p.name, params: p.params, pre, add, del })
}

// ---------------------------------------------------------------------------
// Grounding and transitions

/// Argument pattern for delete lists; `None` matches anything.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pattern {
    pub predicate: String,
    pub args: Vec<Option<String>>,
}

impl Pattern {
    pub fn matches(&self, f: &Fluent) -> bool {
        self.predicate == f.predicate
            && self.args.len() == f.args.len()
            && self.args.iter().zip(&f.args).all(|(p, a)| p.as_ref().is_none_or(|p| p == a))
    }
}

/// One fully ground instantiation of an action's precondition and effects.
/// `pre` holds dynamic fluents only; static conditions were checked while
/// grounding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroundVariant {
    pub pre: Vec<Fluent>,
    pub add: Vec<Fluent>,
    pub del: Vec<Pattern>,
}

/// A schema bound to concrete parameter values.
///
/// Existential precondition variables (such as the robot's current position)
/// produce several variants; at most one applies in any well-formed state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundAction {
    pub name: String,
    pub args: Vec<String>,
    pub variants: Vec<GroundVariant>,
}

impl fmt::Display for GroundAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_atom(f, &self.name, &self.args)
    }
}

/// Planner-side state: the set of dynamic fluents that hold.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SymbolicState {
    pub fluents: BTreeSet<Fluent>,
}

impl SymbolicState {
    pub fn new(fluents: impl IntoIterator<Item = Fluent>) -> Self {
        SymbolicState { fluents: fluents.into_iter().collect() }
    }

    pub fn holds(&self, f: &Fluent) -> bool {
        self.fluents.contains(f)
    }
}

impl fmt::Display for SymbolicState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.fluents.iter().map(ToString::to_string).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

type Binding = BTreeMap<String, String>;

fn resolve(t: &Term, b: &Binding) -> Option<String> {
    match t {
        Term::Const(c) => Some(c.clone()),
        Term::Var(v) => b.get(v).cloned(),
        Term::Any => None,
    }
}

fn instantiate(a: &Atom, b: &Binding) -> Fluent {
    Fluent {
        predicate: a.predicate.clone(),
        args: a.args.iter().map(|t| resolve(t, b).expect("bound variable")).collect(),
    }
}

/// Type of every variable in `schema`.
fn variable_types(spec: &DomainSpec, schema: &ActionSchema) -> BTreeMap<String, String> {
    let mut types: BTreeMap<String, String> =
        schema.params.iter().map(|p| (p.name.clone(), p.ty.clone())).collect();
    for atom in schema.pre.iter().flatten().chain(&schema.add).chain(&schema.del) {
        if let Some(decl) = spec.predicate(&atom.predicate) {
            for (t, ty) in atom.args.iter().zip(&decl.arg_types) {
                if let Term::Var(v) = t {
                    types.entry(v.clone()).or_insert_with(|| ty.clone());
                }
            }
        }
    }
    types
}

struct Grounder<'a> {
    spec: &'a DomainSpec,
    dynamic: BTreeSet<&'a str>,
    statics_by_pred: HashMap<&'a str, Vec<&'a Fluent>>,
}

impl<'a> Grounder<'a> {
    fn new(spec: &'a DomainSpec) -> Self {
        let mut statics_by_pred: HashMap<&str, Vec<&Fluent>> = HashMap::new();
        for f in &spec.statics {
            statics_by_pred.entry(f.predicate.as_str()).or_default().push(f);
        }
        Grounder { spec, dynamic: spec.dynamic_predicates(), statics_by_pred }
    }

    /// All bindings extending `b` that satisfy the static part of `clause`.
    fn bind_clause(&self, clause: &[Atom], types: &BTreeMap<String, String>, b: &Binding, out: &mut Vec<Binding>) {
        let statics: Vec<&Atom> = clause
            .iter()
            .filter(|a| a.predicate != NEQ && !self.dynamic.contains(a.predicate.as_str()))
            .collect();
        let neqs: Vec<&Atom> = clause.iter().filter(|a| a.predicate == NEQ).collect();
        let mut partial = Vec::new();
        self.join(&statics, b.clone(), &mut partial);

        let mut free: BTreeSet<&String> = BTreeSet::new();
        for atom in clause {
            for t in &atom.args {
                if let Term::Var(v) = t {
                    free.insert(v);
                }
            }
        }
        for binding in partial {
            let unbound: Vec<&String> = free.iter().copied().filter(|v| !binding.contains_key(*v)).collect();
            self.enumerate(&unbound, types, binding, &mut |full| {
                let ok = neqs.iter().all(|n| resolve(&n.args[0], full) != resolve(&n.args[1], full));
                if ok {
                    out.push(full.clone());
                }
            });
        }
    }

    fn join(&self, atoms: &[&Atom], b: Binding, out: &mut Vec<Binding>) {
        let Some((first, rest)) = atoms.split_first() else {
            out.push(b);
            return;
        };
        for fact in self.statics_by_pred.get(first.predicate.as_str()).into_iter().flatten() {
            let mut nb = b.clone();
            let ok = first.args.iter().zip(&fact.args).all(|(t, val)| match t {
                Term::Const(c) => c == val,
                Term::Var(v) => match nb.get(v) {
                    Some(bound) => bound == val,
                    None => {
                        nb.insert(v.clone(), val.clone());
                        true
                    }
                },
                Term::Any => true,
            });
            if ok {
                self.join(rest, nb, out);
            }
        }
    }

    fn enumerate(&self, vars: &[&String], types: &BTreeMap<String, String>, b: Binding, f: &mut dyn FnMut(&Binding)) {
        let Some((v, rest)) = vars.split_first() else {
            f(&b);
            return;
        };
        let ty = types.get(*v).map(String::as_str).unwrap_or("");
        for o in self.spec.objects_of(ty) {
            let mut nb = b.clone();
            nb.insert((*v).clone(), o.clone());
            self.enumerate(rest, types, nb, f);
        }
    }

    fn variant(&self, schema: &ActionSchema, clause: &[Atom], b: &Binding) -> GroundVariant {
        let mut pre: Vec<Fluent> = clause
            .iter()
            .filter(|a| self.dynamic.contains(a.predicate.as_str()))
            .map(|a| instantiate(a, b))
            .collect();
        pre.sort();
        pre.dedup();
        let add = schema.add.iter().map(|a| instantiate(a, b)).collect();
        let del = schema
            .del
            .iter()
            .map(|a| Pattern { predicate: a.predicate.clone(), args: a.args.iter().map(|t| resolve(t, b)).collect() })
            .collect();
        GroundVariant { pre, add, del }
    }
}

/// Instantiate every schema over type-compatible objects, keeping only
/// bindings whose static preconditions hold. Output is ordered by schema,
/// then by parameter tuple in object declaration order.
pub fn ground_actions(spec: &DomainSpec) -> Vec<GroundAction> {
    let g = Grounder::new(spec);
    let mut out = Vec::new();
    for schema in &spec.schemas {
        let types = variable_types(spec, schema);
        let param_names: Vec<&String> = schema.params.iter().map(|p| &p.name).collect();
        let mut tuples = Vec::new();
        g.enumerate(&param_names, &types, Binding::new(), &mut |b| tuples.push(b.clone()));
        for b in tuples {
            let mut variants: Vec<GroundVariant> = Vec::new();
            let clauses: Vec<&[Atom]> = if schema.pre.is_empty() {
                vec![&[]]
            } else {
                schema.pre.iter().map(Vec::as_slice).collect()
            };
            for clause in clauses {
                let mut bindings = Vec::new();
                g.bind_clause(clause, &types, &b, &mut bindings);
                for full in bindings {
                    let v = g.variant(schema, clause, &full);
                    if !variants.contains(&v) {
                        variants.push(v);
                    }
                }
            }
            if !variants.is_empty() {
                out.push(GroundAction {
                    name: schema.name.clone(),
                    args: schema.params.iter().map(|p| b[&p.name].clone()).collect(),
                    variants,
                });
            }
        }
    }
    out
}

impl GroundVariant {
    pub fn applicable(&self, state: &SymbolicState) -> bool {
        self.pre.iter().all(|f| state.fluents.contains(f))
    }

    /// Delete, then add.
    pub fn apply(&self, state: &SymbolicState) -> SymbolicState {
        let mut fluents: BTreeSet<Fluent> = state
            .fluents
            .iter()
            .filter(|f| !self.del.iter().any(|p| p.matches(f)))
            .cloned()
            .collect();
        fluents.extend(self.add.iter().cloned());
        SymbolicState { fluents }
    }
}

impl GroundAction {
    pub fn applicable_variant(&self, state: &SymbolicState) -> Option<&GroundVariant> {
        self.variants.iter().find(|v| v.applicable(state))
    }

    pub fn is_applicable(&self, state: &SymbolicState) -> bool {
        self.applicable_variant(state).is_some()
    }
}

/// Successor of `state` under `action`; the input is left untouched.
pub fn apply(state: &SymbolicState, action: &GroundAction) -> Result<SymbolicState, ApplyError> {
    if let Some(v) = action.applicable_variant(state) {
        return Ok(v.apply(state));
    }
    let missing = action
        .variants
        .iter()
        .map(|v| v.pre.iter().filter(|f| !state.holds(f)).cloned().collect::<Vec<_>>())
        .min_by_key(Vec::len)
        .unwrap_or_default();
    Err(ApplyError { action: action.to_string(), missing })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BLOCKS: &str = "
types: block
objects: block A B
predicates: holding(block) clear(block) on(block,block) handempty
action: stack(X:block, Y:block)
  pre: holding(X), clear(Y), neq(X,Y)
  add: handempty, on(X,Y), clear(X)
  del: holding(X), clear(Y)
";

    #[test]
    fn parses_strips_example() {
        let spec = parse_domain(BLOCKS).unwrap();
        assert_eq!(spec.schemas.len(), 1);
        assert_eq!(spec.schemas[0].add.len(), 3);
        let ground = ground_actions(&spec);
        // neq removes stack(A,A) and stack(B,B)
        assert_eq!(ground.len(), 2);
        assert_eq!(ground[0].to_string(), "stack(A,B)");
    }

    #[test]
    fn empty_input_has_no_schemas() {
        assert_eq!(parse_domain("").unwrap_err(), LangError::NoSchemas);
        assert_eq!(parse_domain("# nothing\n\n").unwrap_err().to_string(), "no schemas declared");
    }

    #[test]
    fn unbound_variable_is_reported() {
        let text = BLOCKS.replace("add: handempty, on(X,Y), clear(X)", "add: handempty, on(X,Z)");
        let err = parse_domain(&text).unwrap_err().to_string();
        assert!(err.contains("Z") && err.contains("stack"), "{err}");
    }

    #[test]
    fn undeclared_predicate_has_location() {
        let text = BLOCKS.replace("pre: holding(X)", "pre: grasping(X)");
        match parse_domain(&text).unwrap_err() {
            LangError::Parse { line, column, message } => {
                assert_eq!(line, 6);
                assert_eq!(column, 8);
                assert!(message.contains("undeclared predicate grasping"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn arity_mismatch() {
        let text = BLOCKS.replace("clear(Y), neq", "clear(Y,X), neq");
        let err = parse_domain(&text).unwrap_err().to_string();
        assert!(err.contains("expects 1 arguments"), "{err}");
    }

    #[test]
    fn undeclared_object_in_statics() {
        let text = format!("{BLOCKS}\nstatics: on(A,C)\n").replace("on(block,block) handempty", "on(block,block) handempty above(block,block)");
        let text = text.replace("statics: on(A,C)", "statics: above(A,C)");
        let err = parse_domain(&text).unwrap_err().to_string();
        assert!(err.contains("undeclared object C"), "{err}");
    }

    #[test]
    fn unsatisfiable_static_grounds_nothing() {
        let text = "
types: t
objects: t X1 X2
predicates: p(t) link(t,t)
statics: link(X1,X2)
action: hop(A:t)
  pre: p(A), link(A,B), link(B,A)
  add: p(B)
  del: p(A)
";
        let spec = parse_domain(text).unwrap();
        assert!(ground_actions(&spec).is_empty());
    }

    #[test]
    fn add_wins_over_delete() {
        let text = "
types: t
objects: t X1
predicates: p(t)
action: touch(A:t)
  pre: p(A)
  add: p(A)
  del: p(_)
";
        let spec = parse_domain(text).unwrap();
        let ground = ground_actions(&spec);
        let s = SymbolicState::new([Fluent::new("p", &["X1"])]);
        let next = apply(&s, &ground[0]).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn apply_reports_missing() {
        let spec = parse_domain(BLOCKS).unwrap();
        let ground = ground_actions(&spec);
        let s = SymbolicState::new([Fluent::new("holding", &["A"])]);
        let err = apply(&s, &ground[0]).unwrap_err();
        assert_eq!(err.missing, vec![Fluent::new("clear", &["B"])]);
        assert!(err.to_string().contains("clear(B)"));
    }

    #[test]
    fn round_trip_text() {
        let spec = parse_domain(BLOCKS).unwrap();
        assert_eq!(parse_domain(&spec.to_text()).unwrap(), spec);
    }
}
