//! Versioned plain-text weight file: a `key value` header followed by one
//! parameter per line.
//!
//! ```text
//! safedpc-policy 1
//! layers 11 32 32 1
//! activation tanh
//! input_lower -2
//! input_upper 2
//! seed 7
//! reference_mode true
//! horizon 10
//! params 1473
//! 0.0123...
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::InputSet;
use crate::scalar::Scalar;

use super::network::{Activation, PolicyMeta, PolicyNetwork, ReferenceMode};

const MAGIC: &str = "safedpc-policy";
const VERSION: u32 = 1;

fn join<T: Scalar>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.as_f64().to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn encode<T: Scalar>(net: &PolicyNetwork<T>) -> String {
    let meta = net.meta();
    let sizes: Vec<String> = net.layer_sizes().iter().map(|s| s.to_string()).collect();
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "layers {}", sizes.join(" "));
    let _ = writeln!(out, "activation {}", net.activation().as_str());
    let _ = writeln!(out, "input_lower {}", join(net.input_set().lower()));
    let _ = writeln!(out, "input_upper {}", join(net.input_set().upper()));
    let _ = writeln!(out, "seed {}", meta.seed);
    let _ = writeln!(out, "reference_mode {}", meta.reference_mode.as_str());
    let _ = writeln!(out, "horizon {}", meta.horizon);
    let _ = writeln!(out, "params {}", net.params().len());
    for p in net.params() {
        let _ = writeln!(out, "{}", p.as_f64());
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::WeightFormat(msg.into())
}

fn field<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<&'a str> {
    let line = lines
        .next()
        .ok_or_else(|| bad(format!("missing `{key}` line")))?;
    let (k, v) = line.split_once(' ').unwrap_or((line, ""));
    if k != key {
        return Err(bad(format!("expected `{key}`, found `{k}`")));
    }
    Ok(v.trim())
}

fn numbers<T: std::str::FromStr>(s: &str, key: &str) -> Result<Vec<T>> {
    s.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| bad(format!("bad number `{t}` in `{key}`")))
        })
        .collect()
}

pub fn decode<T: Scalar>(text: &str) -> Result<PolicyNetwork<T>> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let version: u32 = field(&mut lines, MAGIC)?
        .parse()
        .map_err(|_| bad("unreadable version"))?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let sizes: Vec<usize> = numbers(field(&mut lines, "layers")?, "layers")?;
    let activation = Activation::parse(field(&mut lines, "activation")?)
        .ok_or_else(|| bad("unknown activation"))?;
    let lower: Vec<f64> = numbers(field(&mut lines, "input_lower")?, "input_lower")?;
    let upper: Vec<f64> = numbers(field(&mut lines, "input_upper")?, "input_upper")?;
    let seed = field(&mut lines, "seed")?
        .parse()
        .map_err(|_| bad("bad seed"))?;
    let reference_mode = ReferenceMode::parse(field(&mut lines, "reference_mode")?)
        .ok_or_else(|| bad("unknown reference mode"))?;
    let horizon = field(&mut lines, "horizon")?
        .parse()
        .map_err(|_| bad("bad horizon"))?;
    let count: usize = field(&mut lines, "params")?
        .parse()
        .map_err(|_| bad("bad count"))?;
    let params: Vec<T> = lines
        .map(|l| {
            l.parse::<f64>()
                .map(T::lit)
                .map_err(|_| bad(format!("bad parameter `{l}`")))
        })
        .collect::<Result<_>>()?;
    if params.len() != count {
        return Err(bad(format!(
            "header declares {count} parameters, found {}",
            params.len()
        )));
    }
    let input = InputSet::new(
        lower.into_iter().map(T::lit).collect(),
        upper.into_iter().map(T::lit).collect(),
    )?;
    let meta = PolicyMeta {
        seed,
        reference_mode,
        horizon,
    };
    let mut net = PolicyNetwork::zeros(sizes, activation, input, meta)?;
    net.set_params(&params)?;
    Ok(net)
}

pub fn save<T: Scalar>(net: &PolicyNetwork<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(net))?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<PolicyNetwork<T>> {
    decode(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let meta = PolicyMeta {
            seed: 9,
            reference_mode: ReferenceMode::Zero,
            horizon: 3,
        };
        let net = PolicyNetwork::<f64>::xavier(
            vec![4, 5, 1],
            Activation::Tanh,
            InputSet::symmetric(1, 2.0).unwrap(),
            meta,
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        let text = encode(&net);
        assert!(text.contains("reference_mode zero"));
        assert_eq!(decode::<f64>(&text).unwrap(), net);
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(decode::<f64>("").is_err());
        assert!(decode::<f64>("safedpc-policy 2\n").is_err());
        let meta = PolicyMeta {
            seed: 0,
            reference_mode: ReferenceMode::True,
            horizon: 1,
        };
        let net = PolicyNetwork::<f64>::zeros(
            vec![2, 1],
            Activation::Tanh,
            InputSet::symmetric(1, 2.0).unwrap(),
            meta,
        )
        .unwrap();
        let text = encode(&net);
        let truncated: String = text
            .lines()
            .take(text.lines().count() - 1)
            .collect::<Vec<_>>()
            .join("\n");
        assert!(matches!(
            decode::<f64>(&truncated),
            Err(Error::WeightFormat(_))
        ));
    }
}
