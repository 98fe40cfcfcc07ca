//! Line-oriented text checkpoints. Floats are written with Rust's shortest
//! round-trip formatting, so save → load is exact.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Flnrm, GrounderSpec, RewardVocab};
use crate::diffmath::{Parameterized, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "flnrm-checkpoint 1";

fn write_tensor(out: &mut String, name: &str, t: &Tensor) {
    let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
    let vals: Vec<String> = t.data().iter().map(|v| v.to_string()).collect();
    let _ = writeln!(out, "tensor {name} {}", dims.join(" "));
    let _ = writeln!(out, "{}", vals.join(" "));
}

pub fn to_string(model: &Flnrm, vocab: &RewardVocab) -> String {
    let mut out = format!("{MAGIC}\n");
    let _ = writeln!(out, "tau {}", model.tau);
    let _ = writeln!(
        out,
        "sizes {} {} {}",
        model.num_symbols(),
        model.num_states(),
        model.num_rewards()
    );
    let grounder = match model.grounder.spec() {
        GrounderSpec::Mlp { input } => format!("mlp {input}"),
        GrounderSpec::Conv { side, channels } => format!("conv {side} {channels}"),
        GrounderSpec::Identity => "identity".to_string(),
    };
    let _ = writeln!(out, "grounder {grounder}");
    let vals: Vec<String> = vocab.values().iter().map(|v| v.to_string()).collect();
    let _ = writeln!(out, "vocab {} {}", vocab.capacity(), vals.join(" ")).map(|_| ());
    model.visit_params(&mut |name, t| write_tensor(&mut out, name, t));
    if let Some((t, r)) = model.exact() {
        write_tensor(&mut out, "exact.t", t);
        write_tensor(&mut out, "exact.r", r);
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Filter<std::str::Lines<'a>, fn(&&str) -> bool>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.inner
            .next()
            .ok_or_else(|| Error::Parse(format!("checkpoint truncated before {what}")))
    }

    fn keyed(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next(key)?;
        let mut toks = line.split_whitespace();
        if toks.next() != Some(key) {
            return Err(Error::Parse(format!("expected `{key}` line, got `{line}`")));
        }
        Ok(toks.collect())
    }
}

fn num<T: std::str::FromStr>(tok: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::Parse(format!("bad number `{tok}`")))
}

pub fn from_str(text: &str) -> Result<(Flnrm, RewardVocab)> {
    let nonempty: fn(&&str) -> bool = |l| !l.trim().is_empty();
    let mut lines = Lines {
        inner: text.lines().filter(nonempty),
    };
    if lines.next("header")?.trim() != MAGIC {
        return Err(Error::Parse("not an FLNRM checkpoint".into()));
    }
    let tau: f64 = num(lines.keyed("tau")?.first().copied().unwrap_or(""))?;
    let sizes: Vec<usize> = lines.keyed("sizes")?.into_iter().map(num).collect::<Result<_>>()?;
    let [p, q, r] = sizes[..] else {
        return Err(Error::Parse("sizes line needs three numbers".into()));
    };
    let g = lines.keyed("grounder")?;
    let spec = match g.as_slice() {
        ["mlp", input] => GrounderSpec::Mlp { input: num(input)? },
        ["conv", side, ch] => GrounderSpec::Conv {
            side: num(side)?,
            channels: num(ch)?,
        },
        ["identity"] => GrounderSpec::Identity,
        other => return Err(Error::Parse(format!("unknown grounder {other:?}"))),
    };
    let v = lines.keyed("vocab")?;
    let capacity: usize = num(v.first().copied().unwrap_or(""))?;
    let values = v[1..].iter().map(|t| num(t)).collect::<Result<Vec<f64>>>()?;
    let vocab = RewardVocab::from_values(values, capacity)?;

    let mut model = Flnrm::new(&spec, p, q, r, tau, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut tensors = indexmap::IndexMap::new();
    while let Some(line) = lines.inner.next() {
        let mut toks = line.split_whitespace();
        if toks.next() != Some("tensor") {
            return Err(Error::Parse(format!("expected tensor line, got `{line}`")));
        }
        let name = toks
            .next()
            .ok_or_else(|| Error::Parse("tensor without name".into()))?
            .to_string();
        let shape = toks.map(num).collect::<Result<Vec<usize>>>()?;
        let data = lines
            .next("tensor values")?
            .split_whitespace()
            .map(num)
            .collect::<Result<Vec<f64>>>()?;
        tensors.insert(name, Tensor::new(shape, data)?);
    }
    let mut problem = None;
    model.visit_params_mut(&mut |name, t| match tensors.shift_remove(name) {
        Some(v) if v.shape() == t.shape() => *t = v,
        Some(_) => problem = Some(format!("shape mismatch for `{name}`")),
        None => problem = Some(format!("missing tensor `{name}`")),
    });
    if let Some(msg) = problem {
        return Err(Error::Parse(msg));
    }
    let exact = match (tensors.shift_remove("exact.t"), tensors.shift_remove("exact.r")) {
        (Some(t), Some(r)) => Some((t, r)),
        (None, None) => None,
        _ => return Err(Error::Parse("incomplete exact matrices".into())),
    };
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Parse(format!("unexpected tensor `{extra}`")));
    }
    model.set_exact(exact);
    Ok((model, vocab))
}

pub fn save(path: &Path, model: &Flnrm, vocab: &RewardVocab) -> Result<()> {
    std::fs::write(path, to_string(model, vocab))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Flnrm, RewardVocab)> {
    from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for spec in [
            GrounderSpec::Mlp { input: 2 },
            GrounderSpec::Conv { side: 7, channels: 3 },
            GrounderSpec::Identity,
        ] {
            let m = Flnrm::new(&spec, 3, 4, 2, 0.5, &mut rng).unwrap();
            let vocab = RewardVocab::from_values(vec![0.0, -1.0], 3).unwrap();
            let (back, v2) = from_str(&to_string(&m, &vocab)).unwrap();
            assert_eq!(back, m);
            assert_eq!(v2, vocab);
        }
    }

    #[test]
    fn exact_matrices_survive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = Flnrm::new(&GrounderSpec::Identity, 5, 4, 2, 0.5, &mut rng).unwrap();
        m.inject_exact(&crate::tasks::task(1).unwrap().compile().unwrap()).unwrap();
        let vocab = RewardVocab::from_values(vec![0.0, 1.0], 2).unwrap();
        let (back, _) = from_str(&to_string(&m, &vocab)).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_garbage() {
        assert!(from_str("hello").is_err());
        assert!(from_str(&format!("{MAGIC}\ntau 0.5\n")).is_err());
    }
}
