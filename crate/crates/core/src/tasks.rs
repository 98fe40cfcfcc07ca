//! LTLf task formulas over grid items, their compilation to reward machines,
//! and a progression-based oracle used to test the compiler.

use std::collections::HashMap;
use std::fmt;

use crate::automata::MooreMachine;
use crate::error::{Error, Result};

/// Item symbols; `e` labels empty cells. Exactly one holds at each step.
pub const ALPHABET: [&str; 5] = ["a", "b", "c", "d", "e"];

pub const REWARD_SATISFIED: f64 = 1.0;
pub const REWARD_VIOLATED: f64 = -1.0;

pub fn alphabet() -> Vec<String> {
    ALPHABET.iter().map(|s| s.to_string()).collect()
}

pub fn symbol_index(name: &str) -> Result<usize> {
    ALPHABET
        .iter()
        .position(|s| *s == name)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown symbol `{name}`")))
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ltlf {
    True,
    False,
    Atom(String),
    Not(Box<Ltlf>),
    And(Vec<Ltlf>),
    Or(Vec<Ltlf>),
    Eventually(Box<Ltlf>),
    Globally(Box<Ltlf>),
}

impl Ltlf {
    pub fn atom(name: &str) -> Self {
        Ltlf::Atom(name.to_string())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Ltlf) -> Self {
        Ltlf::Not(Box::new(f))
    }

    pub fn eventually(f: Ltlf) -> Self {
        Ltlf::Eventually(Box::new(f))
    }

    pub fn globally(f: Ltlf) -> Self {
        Ltlf::Globally(Box::new(f))
    }

    /// Conjunction that flattens nested conjunctions but keeps their order,
    /// so printed formulas read the way they were built.
    pub fn conj(parts: Vec<Ltlf>) -> Self {
        let mut flat = Vec::new();
        for p in parts {
            match p {
                Ltlf::And(xs) => flat.extend(xs),
                x => flat.push(x),
            }
        }
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Ltlf::And(flat)
        }
    }

    /// Whether the empty continuation satisfies the formula: pending
    /// eventualities fail, invariants hold.
    pub fn accepts_empty(&self) -> bool {
        match self {
            Ltlf::True | Ltlf::Globally(_) => true,
            Ltlf::False | Ltlf::Atom(_) | Ltlf::Eventually(_) => false,
            Ltlf::Not(f) => !f.accepts_empty(),
            Ltlf::And(xs) => xs.iter().all(Ltlf::accepts_empty),
            Ltlf::Or(xs) => xs.iter().any(Ltlf::accepts_empty),
        }
    }
}

impl fmt::Display for Ltlf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, xs: &[Ltlf], op: &str| {
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    write!(f, " {op} ")?;
                }
                match x {
                    Ltlf::And(_) | Ltlf::Or(_) => write!(f, "({x})")?,
                    _ => write!(f, "{x}")?,
                }
            }
            Ok(())
        };
        match self {
            Ltlf::True => write!(f, "true"),
            Ltlf::False => write!(f, "false"),
            Ltlf::Atom(a) => write!(f, "{a}"),
            Ltlf::Not(x) => match **x {
                Ltlf::Atom(_) | Ltlf::True | Ltlf::False => write!(f, "¬{x}"),
                _ => write!(f, "¬({x})"),
            },
            Ltlf::And(xs) => join(f, xs, "∧"),
            Ltlf::Or(xs) => join(f, xs, "∨"),
            Ltlf::Eventually(x) => write!(f, "F({x})"),
            Ltlf::Globally(x) => write!(f, "G({x})"),
        }
    }
}

fn check_items(items: &[&str], min: usize, what: &str) -> Result<()> {
    if items.len() < min {
        return Err(Error::InvalidArgument(format!("{what} needs at least {min} item(s)")));
    }
    for (i, it) in items.iter().enumerate() {
        symbol_index(it)?;
        if items[..i].contains(it) {
            return Err(Error::InvalidArgument(format!("{what}: duplicate item `{it}`")));
        }
    }
    Ok(())
}

/// `F(i₁) ∧ F(i₂) ∧ ...`
pub fn visit(items: &[&str]) -> Result<Ltlf> {
    check_items(items, 1, "visit")?;
    Ok(Ltlf::conj(
        items.iter().map(|i| Ltlf::eventually(Ltlf::atom(i))).collect(),
    ))
}

/// `F(i₁ ∧ F(i₂ ∧ ...))`
pub fn seq_visit(items: &[&str]) -> Result<Ltlf> {
    check_items(items, 2, "seq_visit")?;
    let mut f = Ltlf::eventually(Ltlf::atom(items[items.len() - 1]));
    for it in items[..items.len() - 1].iter().rev() {
        f = Ltlf::eventually(Ltlf::And(vec![Ltlf::atom(it), f]));
    }
    Ok(f)
}

/// `G(¬i₁) ∧ G(¬i₂) ∧ ...`
pub fn glob_avoid(items: &[&str]) -> Result<Ltlf> {
    check_items(items, 1, "glob_avoid")?;
    Ok(Ltlf::conj(
        items
            .iter()
            .map(|i| Ltlf::globally(Ltlf::not(Ltlf::atom(i))))
            .collect(),
    ))
}

fn simplify_and(parts: Vec<Ltlf>) -> Ltlf {
    let mut flat = Vec::new();
    for p in parts {
        match p {
            Ltlf::True => {}
            Ltlf::False => return Ltlf::False,
            Ltlf::And(xs) => flat.extend(xs),
            x => flat.push(x),
        }
    }
    flat.sort();
    flat.dedup();
    // atoms are mutually exclusive
    let atoms: Vec<&String> = flat
        .iter()
        .filter_map(|x| if let Ltlf::Atom(a) = x { Some(a) } else { None })
        .collect();
    if atoms.len() > 1 {
        return Ltlf::False;
    }
    let contradicts = flat.iter().any(|x| matches!(x, Ltlf::Not(n) if flat.contains(n)));
    if contradicts {
        return Ltlf::False;
    }
    match flat.len() {
        0 => Ltlf::True,
        1 => flat.pop().unwrap(),
        _ => Ltlf::And(flat),
    }
}

fn simplify_or(parts: Vec<Ltlf>) -> Ltlf {
    let mut flat = Vec::new();
    for p in parts {
        match p {
            Ltlf::False => {}
            Ltlf::True => return Ltlf::True,
            Ltlf::Or(xs) => flat.extend(xs),
            x => flat.push(x),
        }
    }
    flat.sort();
    flat.dedup();
    match flat.len() {
        0 => Ltlf::False,
        1 => flat.pop().unwrap(),
        _ => Ltlf::Or(flat),
    }
}

/// One-step progression: the obligation left for the rest of the trace after
/// observing `symbol`.
pub fn progress(f: &Ltlf, symbol: &str) -> Result<Ltlf> {
    symbol_index(symbol)?;
    Ok(prog(f, symbol))
}

fn prog(f: &Ltlf, s: &str) -> Ltlf {
    match f {
        Ltlf::True => Ltlf::True,
        Ltlf::False => Ltlf::False,
        Ltlf::Atom(a) => {
            if a == s {
                Ltlf::True
            } else {
                Ltlf::False
            }
        }
        Ltlf::Not(x) => match prog(x, s) {
            Ltlf::True => Ltlf::False,
            Ltlf::False => Ltlf::True,
            y => Ltlf::not(y),
        },
        Ltlf::And(xs) => simplify_and(xs.iter().map(|x| prog(x, s)).collect()),
        Ltlf::Or(xs) => simplify_or(xs.iter().map(|x| prog(x, s)).collect()),
        Ltlf::Eventually(x) => simplify_or(vec![prog(x, s), f.clone()]),
        Ltlf::Globally(x) => simplify_and(vec![prog(x, s), f.clone()]),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub id: usize,
    pub class: u8,
    pub formula: Ltlf,
    pub alphabet: Vec<String>,
    pub reward_values: Vec<f64>,
}

impl TaskSpec {
    pub fn new(id: usize, class: u8, formula: Ltlf) -> Self {
        let reward_values = if class == 1 {
            vec![0.0, REWARD_SATISFIED]
        } else {
            vec![0.0, REWARD_SATISFIED, REWARD_VIOLATED]
        };
        Self {
            id,
            class,
            formula,
            alphabet: alphabet(),
            reward_values,
        }
    }

    pub fn compile(&self) -> Result<MooreMachine> {
        compile(self)
    }
}

/// Tasks 1–8: four visit/sequence tasks, then the same with avoidance.
pub fn task_registry() -> Vec<TaskSpec> {
    let build = || -> Result<Vec<TaskSpec>> {
        let ab = visit(&["a", "b"])?;
        let seq = seq_visit(&["a", "b"])?;
        let c = glob_avoid(&["c"])?;
        let cd = glob_avoid(&["c", "d"])?;
        Ok(vec![
            TaskSpec::new(1, 1, ab.clone()),
            TaskSpec::new(2, 1, visit(&["a", "b", "c"])?),
            TaskSpec::new(3, 1, seq.clone()),
            TaskSpec::new(4, 1, Ltlf::conj(vec![seq.clone(), visit(&["c"])?])),
            TaskSpec::new(5, 2, Ltlf::conj(vec![ab.clone(), c.clone()])),
            TaskSpec::new(6, 2, Ltlf::conj(vec![ab, cd.clone()])),
            TaskSpec::new(7, 2, Ltlf::conj(vec![seq.clone(), c])),
            TaskSpec::new(8, 2, Ltlf::conj(vec![seq, cd])),
        ])
    };
    build().expect("built-in tasks are well formed")
}

pub fn task(id: usize) -> Result<TaskSpec> {
    task_registry()
        .into_iter()
        .find(|t| t.id == id)
        .ok_or_else(|| Error::InvalidArgument(format!("no task {id}; ids are 1-8")))
}

/// Rewards obtained by progressing the formula along `trace`: +1 at the step
/// the remaining obligation first becomes satisfiable by stopping, −1 when
/// it becomes unsatisfiable; verdicts then repeat for the remaining steps.
pub fn oracle_rewards(spec: &TaskSpec, trace: &[usize]) -> Result<Vec<f64>> {
    let mut f = spec.formula.clone();
    let mut verdict = None;
    let mut out = Vec::with_capacity(trace.len());
    for &s in trace {
        let name = spec
            .alphabet
            .get(s)
            .ok_or(Error::SymbolOutOfRange { symbol: s, alphabet: spec.alphabet.len() })?;
        if verdict.is_none() {
            let before = f.accepts_empty();
            f = progress(&f, name)?;
            if f == Ltlf::False {
                verdict = Some(REWARD_VIOLATED);
            } else if !before && f.accepts_empty() {
                verdict = Some(REWARD_SATISFIED);
            }
        }
        out.push(verdict.unwrap_or(0.0));
    }
    Ok(out)
}

/// Pattern decomposition of a conjunction.
#[derive(Default)]
struct Patterns {
    visit: Vec<usize>,
    seqs: Vec<Vec<usize>>,
    avoid: Vec<usize>,
}

fn unsupported(f: &Ltlf) -> Error {
    Error::UnsupportedFormula(f.to_string())
}

fn atom_index(f: &Ltlf) -> Option<usize> {
    match f {
        Ltlf::Atom(a) => symbol_index(a).ok(),
        _ => None,
    }
}

/// `F(a ∧ F(b ∧ ... F(z)))` → `[a, b, ..., z]`
fn seq_items(f: &Ltlf) -> Option<Vec<usize>> {
    let Ltlf::Eventually(inner) = f else { return None };
    if let Some(i) = atom_index(inner) {
        return Some(vec![i]);
    }
    let Ltlf::And(xs) = &**inner else { return None };
    let [head, rest] = &xs[..] else { return None };
    let mut items = vec![atom_index(head)?];
    items.extend(seq_items(rest)?);
    Some(items)
}

fn decompose(f: &Ltlf) -> Result<Patterns> {
    let parts = match f {
        Ltlf::And(xs) => xs.as_slice(),
        x => std::slice::from_ref(x),
    };
    let mut p = Patterns::default();
    for part in parts {
        if let Ltlf::Globally(inner) = part {
            match &**inner {
                Ltlf::Not(a) => p.avoid.push(atom_index(a).ok_or_else(|| unsupported(part))?),
                _ => return Err(unsupported(part)),
            }
            continue;
        }
        match seq_items(part) {
            Some(items) if items.len() == 1 => p.visit.push(items[0]),
            Some(items) => p.seqs.push(items),
            None => return Err(unsupported(part)),
        }
    }
    Ok(p)
}

#[derive(Clone, PartialEq, Eq, Hash)]
enum Product {
    Running { visited: u32, progress: Vec<usize> },
    Satisfied,
    Violated,
}

/// Builds the product of per-pattern trackers (a bit per visit item, a
/// counter per sequence, an ok/trap flag for avoidance) with absorbing
/// verdict sinks, then minimizes.
pub fn compile(spec: &TaskSpec) -> Result<MooreMachine> {
    let p = decompose(&spec.formula)?;
    let k = spec.alphabet.len();
    let output_index = |v: f64| {
        spec.reward_values
            .iter()
            .position(|&r| r == v)
            .ok_or(Error::UnknownReward(v))
    };
    let complete = |visited: u32, progress: &[usize]| {
        p.visit.iter().all(|&i| visited & (1 << i) != 0)
            && progress.iter().zip(&p.seqs).all(|(&c, s)| c == s.len())
    };
    let step = |state: &Product, s: usize| -> Product {
        let Product::Running { visited, progress } = state else {
            return state.clone();
        };
        if p.avoid.contains(&s) {
            return Product::Violated;
        }
        let was = complete(*visited, progress);
        let visited = visited | (1 << s);
        let progress: Vec<usize> = progress
            .iter()
            .zip(&p.seqs)
            .map(|(&c, seq)| if c < seq.len() && seq[c] == s { c + 1 } else { c })
            .collect();
        if !was && complete(visited, &progress) {
            Product::Satisfied
        } else {
            Product::Running { visited, progress }
        }
    };

    let start = Product::Running { visited: 0, progress: vec![0; p.seqs.len()] };
    let mut index = HashMap::from([(start.clone(), 0)]);
    let mut states = vec![start];
    let mut delta: Vec<Vec<usize>> = Vec::new();
    let mut head = 0;
    while head < states.len() {
        let mut row = Vec::with_capacity(k);
        for s in 0..k {
            let next = step(&states[head], s);
            let id = *index.entry(next.clone()).or_insert_with(|| {
                states.push(next);
                states.len() - 1
            });
            row.push(id);
        }
        delta.push(row);
        head += 1;
    }
    let lambda = states
        .iter()
        .map(|st| match st {
            Product::Running { .. } => output_index(0.0),
            Product::Satisfied => output_index(REWARD_SATISFIED),
            Product::Violated => output_index(REWARD_VIOLATED),
        })
        .collect::<Result<Vec<_>>>()?;
    let m = MooreMachine::new(spec.alphabet.clone(), spec.reward_values.clone(), 0, delta, lambda)?;
    Ok(m.minimize())
}
