//! Text checkpoints of a model and its optimizer.
//!
//! ```text
//! metagfn-checkpoint 1
//! episode <j>
//! seed <s>
//! policy <kind> <mean lo> <mean hi> <scale lo> <scale hi>
//! forward_heads <k>
//! dropout <p>
//! log_z <v>
//! adam <beta1> <beta2> <eps> <clip_norm> <steps>
//! layer <name> <n_in> <n_out>      (then weights row by row, then biases)
//! moment <m|v> <index> <len>       (then values)
//! end
//! ```
//!
//! Numbers use the shortest exponent form that parses back to the same bits,
//! eight values per line.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::gfn::GfnModel;
use crate::nn::{AdamConfig, AdamState, Dense, Head, Mlp, Mode};
use crate::policy::{HeadSpec, PolicyKind};

const MAGIC: &str = "metagfn-checkpoint 1";
const PER_LINE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub episode: usize,
    pub seed: u64,
    pub model: GfnModel,
    pub adam: AdamState,
}

fn kind_name(k: PolicyKind) -> &'static str {
    match k {
        PolicyKind::Gauss1D => "gauss1d",
        PolicyKind::Gauss2D => "gauss2d",
        PolicyKind::VonMises2D => "vonmises2d",
    }
}

fn write_values(out: &mut String, v: &[f64]) {
    for chunk in v.chunks(PER_LINE) {
        let line: Vec<String> = chunk.iter().map(|x| format!("{x:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let a = &self.adam;
        let mut s = String::new();
        s.push_str(MAGIC);
        s.push('\n');
        s.push_str(&format!("episode {}\nseed {}\n", self.episode, self.seed));
        s.push_str(&format!(
            "policy {} {:e} {:e} {:e} {:e}\n",
            kind_name(m.head.kind),
            m.head.mean_range.0,
            m.head.mean_range.1,
            m.head.scale_range.0,
            m.head.scale_range.1
        ));
        s.push_str(&format!("forward_heads {}\n", m.forward_heads));
        s.push_str(&format!("dropout {:e}\n", m.mlp.dropout));
        s.push_str(&format!("log_z {:e}\n", m.log_z));
        s.push_str(&format!(
            "adam {:e} {:e} {:e} {:e} {}\n",
            a.config.beta1, a.config.beta2, a.config.eps, a.config.clip_norm, a.steps
        ));
        let layers = m
            .mlp
            .torso
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("torso.{i}"), l))
            .chain(m.mlp.heads.iter().map(|h| (format!("head.{}", h.name), &h.layer)));
        for (name, l) in layers {
            s.push_str(&format!("layer {name} {} {}\n", l.n_in(), l.n_out()));
            write_values(&mut s, l.w.as_slice().expect("standard layout"));
            write_values(&mut s, l.b.as_slice().expect("standard layout"));
        }
        for (tag, moments) in [("m", &a.m), ("v", &a.v)] {
            for (k, t) in moments.iter().enumerate() {
                s.push_str(&format!("moment {tag} {k} {}\n", t.len()));
                write_values(&mut s, t);
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_text().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(std::fs::File::open(path)?))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read_from(text.as_bytes())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut p = Parser { lines: r.lines() };
        if p.line()? != MAGIC {
            return Err(Error::Parse("not a checkpoint (bad header)".into()));
        }
        let episode = p.keyed("episode", 1)?[0].parse().map_err(perr)?;
        let seed = p.keyed("seed", 1)?[0].parse().map_err(perr)?;
        let pol = p.keyed("policy", 5)?;
        let kind = match pol[0].as_str() {
            "gauss1d" => PolicyKind::Gauss1D,
            "gauss2d" => PolicyKind::Gauss2D,
            "vonmises2d" => PolicyKind::VonMises2D,
            other => return Err(Error::Parse(format!("unknown policy kind {other}"))),
        };
        let f = |s: &str| s.parse::<f64>().map_err(perr);
        let head = HeadSpec::new(kind, (f(&pol[1])?, f(&pol[2])?), (f(&pol[3])?, f(&pol[4])?))?;
        let forward_heads: usize = p.keyed("forward_heads", 1)?[0].parse().map_err(perr)?;
        let dropout = f(&p.keyed("dropout", 1)?[0])?;
        let log_z = f(&p.keyed("log_z", 1)?[0])?;
        let ad = p.keyed("adam", 5)?;
        let config = AdamConfig {
            beta1: f(&ad[0])?,
            beta2: f(&ad[1])?,
            eps: f(&ad[2])?,
            clip_norm: f(&ad[3])?,
        };
        let steps: u64 = ad[4].parse().map_err(perr)?;

        let mut torso = Vec::new();
        let mut heads = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        loop {
            let line = p.line()?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["end"] => break,
                ["layer", name, n_in, n_out] => {
                    let (n_in, n_out): (usize, usize) = (n_in.parse().map_err(perr)?, n_out.parse().map_err(perr)?);
                    let w = Array2::from_shape_vec((n_in, n_out), p.values(n_in * n_out)?)
                        .map_err(|e| Error::Parse(e.to_string()))?;
                    let b = Array1::from(p.values(n_out)?);
                    let layer = Dense { w, b };
                    if let Some(h) = name.strip_prefix("head.") {
                        heads.push(Head {
                            name: h.to_string(),
                            layer,
                        });
                    } else if name.starts_with("torso.") {
                        torso.push(layer);
                    } else {
                        return Err(Error::Parse(format!("unknown layer {name}")));
                    }
                }
                ["moment", tag, _, len] => {
                    let vals = p.values(len.parse().map_err(perr)?)?;
                    match *tag {
                        "m" => m.push(vals),
                        "v" => v.push(vals),
                        _ => return Err(Error::Parse(format!("unknown moment {tag}"))),
                    }
                }
                _ => return Err(Error::Parse(format!("unexpected line `{line}`"))),
            }
        }
        if torso.is_empty() || heads.len() != forward_heads + 2 || m.len() != v.len() {
            return Err(Error::Parse("checkpoint is missing layers or moments".into()));
        }
        let mlp = Mlp {
            torso,
            heads,
            dropout,
            mode: Mode::Train,
        };
        let model = GfnModel {
            mlp,
            log_z,
            head,
            forward_heads,
        };
        let mut shapes: Vec<usize> = model.mlp.param_slices().iter().map(|s| s.len()).collect();
        shapes.push(1);
        if m.iter().map(Vec::len).ne(shapes.iter().copied()) || v.iter().map(Vec::len).ne(shapes.iter().copied()) {
            return Err(Error::Parse("optimizer moments do not match the parameters".into()));
        }
        Ok(Checkpoint {
            episode,
            seed,
            model,
            adam: AdamState { config, m, v, steps },
        })
    }
}

fn perr<E: std::fmt::Display>(e: E) -> Error {
    Error::Parse(e.to_string())
}

struct Parser<L> {
    lines: L,
}

impl<L: Iterator<Item = std::io::Result<String>>> Parser<L> {
    fn line(&mut self) -> Result<String> {
        match self.lines.next() {
            Some(l) => Ok(l?.trim().to_string()),
            None => Err(Error::Parse("unexpected end of checkpoint".into())),
        }
    }

    fn keyed(&mut self, key: &str, n: usize) -> Result<Vec<String>> {
        let line = self.line()?;
        let mut it = line.split_whitespace();
        if it.next() != Some(key) {
            return Err(Error::Parse(format!("expected `{key}`, got `{line}`")));
        }
        let rest: Vec<String> = it.map(str::to_string).collect();
        if rest.len() != n {
            return Err(Error::Parse(format!("`{key}` takes {n} values")));
        }
        Ok(rest)
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            for tok in self.line()?.split_whitespace() {
                out.push(tok.parse::<f64>().map_err(perr)?);
            }
        }
        if out.len() != n {
            return Err(Error::Parse(format!("expected {n} values, got {}", out.len())));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Environment;
    use crate::rng::{stream, Purpose};

    fn checkpoint(env: &Environment, kind: PolicyKind, heads: usize) -> Checkpoint {
        let ranges = match kind {
            PolicyKind::VonMises2D => ((-3.0, 3.0), (0.0, 5.0)),
            _ => ((-14.0, 14.0), (0.1, 1.0)),
        };
        let spec = HeadSpec::new(kind, ranges.0, ranges.1).unwrap();
        let mut rng = stream(1, Purpose::ModelInit, 0);
        let mut model = GfnModel::new(env, spec, 8, 2, 0.2, heads, &mut rng).unwrap();
        model.log_z = -1.0 / 3.0;
        let mut shapes: Vec<usize> = model.mlp.param_slices().iter().map(|s| s.len()).collect();
        shapes.push(1);
        let mut adam = AdamState::new(AdamConfig::default(), &shapes);
        adam.steps = 17;
        for (i, t) in adam.m.iter_mut().chain(adam.v.iter_mut()).enumerate() {
            for (j, x) in t.iter_mut().enumerate() {
                *x = ((i * 31 + j) as f64).sin() * 1e-7;
            }
        }
        Checkpoint {
            episode: 250,
            seed: 42,
            model,
            adam,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for (env, kind, heads) in [
            (Environment::line(), PolicyKind::Gauss1D, 1),
            (Environment::grid(), PolicyKind::Gauss2D, 3),
            (Environment::synthetic_torus(), PolicyKind::VonMises2D, 1),
        ] {
            let c = checkpoint(&env, kind, heads);
            let text = c.to_text();
            let back = Checkpoint::parse(&text).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn file_round_trip() {
        let c = checkpoint(&Environment::line(), PolicyKind::Gauss1D, 1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.txt");
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let text = checkpoint(&Environment::line(), PolicyKind::Gauss1D, 1).to_text();
        assert!(Checkpoint::parse("hello\n").is_err());
        assert!(Checkpoint::parse(&text[..text.len() / 2]).is_err());
        assert!(Checkpoint::parse(&text.replacen("gauss1d", "gauss9d", 1)).is_err());
    }
}
