//! Deterministic Moore machines with reward-valued outputs.
//!
//! A machine emits, at step `t`, the output of the state it *enters* after
//! consuming the `t`-th symbol; the initial state's output is never emitted.
//! States and symbols are identified by index; names are metadata.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct MooreMachine {
    num_states: usize,
    alphabet: Vec<String>,
    outputs: Vec<f64>,
    initial: usize,
    /// Row-major `[state][symbol]`.
    delta: Vec<usize>,
    lambda: Vec<usize>,
}

/// Result of [`MooreMachine::equivalent`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Equivalence {
    pub equivalent: bool,
    /// A shortest distinguishing trace, when one exists within `max_len`.
    pub counterexample: Option<Vec<usize>>,
}

impl MooreMachine {
    pub fn new(
        alphabet: Vec<String>,
        outputs: Vec<f64>,
        initial: usize,
        delta: Vec<Vec<usize>>,
        lambda: Vec<usize>,
    ) -> Result<Self> {
        let num_states = delta.len();
        let k = alphabet.len();
        let bad = |m: String| Err(Error::InvalidMachine(m));
        if num_states == 0 || k == 0 || outputs.is_empty() {
            return bad("machine needs at least one state, symbol and output".into());
        }
        if initial >= num_states {
            return bad(format!("initial state {initial} out of range"));
        }
        if lambda.len() != num_states {
            return bad(format!("lambda has {} entries for {num_states} states", lambda.len()));
        }
        for (i, a) in outputs.iter().enumerate() {
            if !a.is_finite() {
                return bad(format!("output {a} is not finite"));
            }
            if outputs[..i].contains(a) {
                return bad(format!("duplicate output value {a}"));
            }
        }
        if let Some(l) = lambda.iter().find(|&&l| l >= outputs.len()) {
            return bad(format!("lambda entry {l} out of range"));
        }
        let mut flat = Vec::with_capacity(num_states * k);
        for (q, row) in delta.iter().enumerate() {
            if row.len() != k {
                return bad(format!("delta row {q} has {} entries for {k} symbols", row.len()));
            }
            if let Some(t) = row.iter().find(|&&t| t >= num_states) {
                return bad(format!("delta[{q}] targets state {t} out of range"));
            }
            flat.extend_from_slice(row);
        }
        Ok(Self {
            num_states,
            alphabet,
            outputs,
            initial,
            delta: flat,
            lambda,
        })
    }

    /// A uniformly random total machine, used by property tests and the
    /// verification suites.
    pub fn random(
        rng: &mut impl Rng,
        num_states: usize,
        num_symbols: usize,
        outputs: &[f64],
    ) -> Result<Self> {
        let delta = (0..num_states)
            .map(|_| (0..num_symbols).map(|_| rng.random_range(0..num_states)).collect())
            .collect();
        let lambda = (0..num_states)
            .map(|_| rng.random_range(0..outputs.len()))
            .collect();
        Self::new(
            default_alphabet(num_symbols),
            outputs.to_vec(),
            0,
            delta,
            lambda,
        )
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_symbols(&self) -> usize {
        self.alphabet.len()
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn next(&self, state: usize, symbol: usize) -> usize {
        self.delta[state * self.alphabet.len() + symbol]
    }

    pub fn output_index(&self, state: usize) -> usize {
        self.lambda[state]
    }

    pub fn output(&self, state: usize) -> f64 {
        self.outputs[self.lambda[state]]
    }

    pub fn with_alphabet(mut self, alphabet: Vec<String>) -> Result<Self> {
        if alphabet.len() != self.alphabet.len() {
            return Err(Error::AlphabetMismatch(self.alphabet.len(), alphabet.len()));
        }
        self.alphabet = alphabet;
        Ok(self)
    }

    fn check_symbol(&self, s: usize) -> Result<()> {
        if s >= self.alphabet.len() {
            return Err(Error::SymbolOutOfRange {
                symbol: s,
                alphabet: self.alphabet.len(),
            });
        }
        Ok(())
    }

    /// Visited states and emitted rewards, both `trace.len()` long.
    pub fn run(&self, trace: &[usize]) -> Result<(Vec<usize>, Vec<f64>)> {
        let mut states = Vec::with_capacity(trace.len());
        let mut rewards = Vec::with_capacity(trace.len());
        let mut q = self.initial;
        for &s in trace {
            self.check_symbol(s)?;
            q = self.next(q, s);
            states.push(q);
            rewards.push(self.output(q));
        }
        Ok((states, rewards))
    }

    /// States reachable from the initial state, in breadth-first order.
    pub fn reachable(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_states];
        let mut order = vec![self.initial];
        seen[self.initial] = true;
        let mut head = 0;
        while head < order.len() {
            let q = order[head];
            head += 1;
            for s in 0..self.num_symbols() {
                let t = self.next(q, s);
                if !seen[t] {
                    seen[t] = true;
                    order.push(t);
                }
            }
        }
        order
    }

    /// Minimal output-equivalent machine. Unreachable states are dropped,
    /// reachable ones are refined from the partition induced by `lambda`,
    /// and the quotient is numbered in breadth-first order from the initial
    /// state, so equivalent minimal machines come out identical.
    pub fn minimize(&self) -> MooreMachine {
        let k = self.num_symbols();
        let reach = self.reachable();
        let mut class = vec![usize::MAX; self.num_states];
        for &q in &reach {
            class[q] = self.lambda[q];
        }
        let mut count = renumber(&reach, &mut class, |q, c| vec![c[q]]);
        loop {
            let n = renumber(&reach, &mut class, |q, c| {
                let mut sig = Vec::with_capacity(k + 1);
                sig.push(c[q]);
                sig.extend((0..k).map(|s| c[self.next(q, s)]));
                sig
            });
            if n == count {
                break;
            }
            count = n;
        }

        // Quotient, renumbered breadth-first from the initial class.
        let mut rep = vec![usize::MAX; count];
        for &q in &reach {
            if rep[class[q]] == usize::MAX {
                rep[class[q]] = q;
            }
        }
        let mut order = vec![class[self.initial]];
        let mut index = vec![usize::MAX; count];
        index[class[self.initial]] = 0;
        let mut head = 0;
        while head < order.len() {
            let c = order[head];
            head += 1;
            for s in 0..k {
                let t = class[self.next(rep[c], s)];
                if index[t] == usize::MAX {
                    index[t] = order.len();
                    order.push(t);
                }
            }
        }
        let delta = order
            .iter()
            .map(|&c| (0..k).map(|s| index[class[self.next(rep[c], s)]]).collect())
            .collect();
        let lambda = order.iter().map(|&c| self.lambda[rep[c]]).collect();
        MooreMachine::new(self.alphabet.clone(), self.outputs.clone(), 0, delta, lambda)
            .expect("quotient of a valid machine is valid")
    }

    /// Exact language equivalence by breadth-first search over the
    /// synchronized product. The returned counterexample is a shortest
    /// distinguishing trace, reported only if no longer than `max_len`.
    pub fn equivalent(&self, other: &MooreMachine, max_len: usize) -> Result<Equivalence> {
        if self.num_symbols() != other.num_symbols() {
            return Err(Error::AlphabetMismatch(self.num_symbols(), other.num_symbols()));
        }
        let k = self.num_symbols();
        let nb = other.num_states;
        let pair = |a: usize, b: usize| a * nb + b;
        // parent[(a,b)] = (previous pair, symbol)
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; self.num_states * nb];
        let start = pair(self.initial, other.initial);
        let mut seen = vec![false; self.num_states * nb];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            let (a, b) = (p / nb, p % nb);
            for s in 0..k {
                let (a2, b2) = (self.next(a, s), other.next(b, s));
                let p2 = pair(a2, b2);
                if self.output(a2) != other.output(b2) {
                    let mut trace = vec![s];
                    let mut cur = p;
                    while let Some((prev, sym)) = parent[cur] {
                        trace.push(sym);
                        cur = prev;
                    }
                    trace.reverse();
                    let counterexample = (trace.len() <= max_len).then_some(trace);
                    return Ok(Equivalence {
                        equivalent: false,
                        counterexample,
                    });
                }
                if !seen[p2] {
                    seen[p2] = true;
                    parent[p2] = Some((p, s));
                    queue.push_back(p2);
                }
            }
        }
        Ok(Equivalence {
            equivalent: true,
            counterexample: None,
        })
    }

    /// True when no trace of length at most `max_len` tells the machines apart.
    pub fn equivalent_up_to(&self, other: &MooreMachine, max_len: usize) -> Result<bool> {
        Ok(self.equivalent(other, max_len)?.counterexample.is_none())
    }

    /// Graphviz rendering: one node per state labelled `q<i>/<reward>`, the
    /// initial state double-circled, one edge per `(state, symbol)`.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph moore {\n    rankdir=LR;\n");
        for q in 0..self.num_states {
            let shape = if q == self.initial { "doublecircle" } else { "circle" };
            let _ = writeln!(
                out,
                "    q{q} [label=\"q{q}/{}\", shape={shape}];",
                self.output(q)
            );
        }
        for q in 0..self.num_states {
            for (s, name) in self.alphabet.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "    q{q} -> q{} [label=\"{}\"];",
                    self.next(q, s),
                    escape_dot(name)
                );
            }
        }
        out.push_str("}\n");
        out
    }

    /// Plain-text form: a `states symbols outputs q0` header, one delta row
    /// per state, the lambda row, then the output values.
    pub fn to_text(&self) -> String {
        let k = self.num_symbols();
        let mut out = format!(
            "{} {} {} {}\n",
            self.num_states,
            k,
            self.outputs.len(),
            self.initial
        );
        for q in 0..self.num_states {
            out.push_str(&join(&self.delta[q * k..(q + 1) * k]));
            out.push('\n');
        }
        out.push_str(&join(&self.lambda));
        out.push('\n');
        out.push_str(&join(&self.outputs));
        out.push('\n');
        out
    }

    /// Parses [`to_text`](Self::to_text) output. Symbol names are not part of
    /// the format; `alphabet` supplies them, otherwise `s0, s1, ...` are used.
    pub fn from_text(text: &str, alphabet: Option<Vec<String>>) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut next_line = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::Parse(format!("missing {what} line")))
        };
        let header: Vec<usize> = parse_row(next_line("header")?)?;
        let [n, k, r, q0] = header[..] else {
            return Err(Error::Parse("header must be `states symbols outputs q0`".into()));
        };
        let mut delta = Vec::with_capacity(n);
        for _ in 0..n {
            delta.push(parse_row::<usize>(next_line("delta")?)?);
        }
        let lambda = parse_row::<usize>(next_line("lambda")?)?;
        let outputs = parse_row::<f64>(next_line("outputs")?)?;
        if outputs.len() != r {
            return Err(Error::Parse(format!("expected {r} outputs, got {}", outputs.len())));
        }
        let alphabet = alphabet.unwrap_or_else(|| (0..k).map(|i| format!("s{i}")).collect());
        if alphabet.len() != k {
            return Err(Error::AlphabetMismatch(k, alphabet.len()));
        }
        Self::new(alphabet, outputs, q0, delta, lambda)
    }
}

/// Assigns class ids by first occurrence of each signature along `order`.
fn renumber(
    order: &[usize],
    class: &mut [usize],
    signature: impl Fn(usize, &[usize]) -> Vec<usize>,
) -> usize {
    let sigs: Vec<Vec<usize>> = order.iter().map(|&q| signature(q, class)).collect();
    let mut seen: Vec<&Vec<usize>> = Vec::new();
    let mut ids = Vec::with_capacity(order.len());
    for s in &sigs {
        let id = match seen.iter().position(|x| *x == s) {
            Some(i) => i,
            None => {
                seen.push(s);
                seen.len() - 1
            }
        };
        ids.push(id);
    }
    for (&q, id) in order.iter().zip(ids) {
        class[q] = id;
    }
    seen.len()
}

fn join<T: std::fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_row<T: std::str::FromStr>(line: &str) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse()
                .map_err(|_| Error::Parse(format!("bad token `{tok}`")))
        })
        .collect()
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// `s0, s1, ...`
pub fn default_alphabet(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i}")).collect()
}
