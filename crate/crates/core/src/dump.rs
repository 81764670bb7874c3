//! Text dump of grid-valued data.
//!
//! ```text
//! metagfn-grid 1
//! space box            # or: space torus
//! dim 1
//! lower -5             # box only
//! upper 23             # box only
//! layout nodes
//! shape 2801
//! spacing 0.01
//! kernel gaussian 0.1  # optional; or: kernel von_mises 10 10
//! epsilon 0.001        # optional
//! beta 1               # optional
//! section v_hat
//! <one value per line, row-major>
//! end
//! ```
//!
//! Values are written in the shortest form that parses back to the same
//! `f64`, so a write/read cycle is bit-exact.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::DensityGrid;
use crate::grid::{GridSpec, Layout};
use crate::manifold::Space;
use crate::metadynamics::{Kernel, PotentialGrids};

const MAGIC: &str = "metagfn-grid 1";

#[derive(Clone, Debug, PartialEq)]
pub struct GridDump {
    pub spec: GridSpec,
    pub kernel: Option<Kernel>,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub sections: Vec<(String, Vec<f64>)>,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_floats(s: &str, line: usize) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {line}: bad number `{t}`: {e}")))
        })
        .collect()
}

impl GridDump {
    pub fn new(spec: GridSpec) -> Self {
        GridDump {
            spec,
            kernel: None,
            epsilon: None,
            beta: None,
            sections: Vec::new(),
        }
    }

    pub fn section(&self, name: &str) -> Option<&[f64]> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn with_section(mut self, name: &str, values: Vec<f64>) -> Self {
        self.sections.push((name.to_string(), values));
        self
    }

    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        match &s.space {
            Space::BoundedBox { lower, upper } => {
                let _ = writeln!(out, "space box\ndim {}\nlower {}\nupper {}", lower.len(), join(lower), join(upper));
            }
            Space::Torus { dim } => {
                let _ = writeln!(out, "space torus\ndim {dim}");
            }
        }
        let layout = match s.layout {
            Layout::Nodes => "nodes",
            Layout::Cells => "cells",
        };
        let shape = s.shape.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "layout {layout}\nshape {shape}\nspacing {}", join(&s.spacing));
        match &self.kernel {
            Some(Kernel::Gaussian { sigma }) => {
                let _ = writeln!(out, "kernel gaussian {}", join(sigma));
            }
            Some(Kernel::VonMises { kappa }) => {
                let _ = writeln!(out, "kernel von_mises {}", join(kappa));
            }
            None => {}
        }
        if let Some(e) = self.epsilon {
            let _ = writeln!(out, "epsilon {e}");
        }
        if let Some(b) = self.beta {
            let _ = writeln!(out, "beta {b}");
        }
        for (name, values) in &self.sections {
            let _ = writeln!(out, "section {name}");
            for v in values {
                let _ = writeln!(out, "{v}");
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(BufReader::new(f))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::read_from(text.as_bytes())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = || -> Result<Option<(usize, String)>> {
            match lines.next() {
                Some((i, l)) => Ok(Some((i, l?))),
                None => Ok(None),
            }
        };
        match next()? {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => return Err(Error::Parse(format!("missing `{MAGIC}` header"))),
        }
        let mut space_kind = None;
        let mut dim = None;
        let mut lower = None;
        let mut upper = None;
        let mut layout = None;
        let mut shape: Option<Vec<usize>> = None;
        let mut spacing = None;
        let mut kernel = None;
        let mut epsilon = None;
        let mut beta = None;
        let mut sections: Vec<(String, Vec<f64>)> = Vec::new();
        let mut ended = false;
        while let Some((no, line)) = next()? {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "end" {
                ended = true;
                break;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            if !sections.is_empty() && key != "section" {
                let v = line
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {no}: bad value `{line}`: {e}")))?;
                sections.last_mut().expect("non-empty").1.push(v);
                continue;
            }
            match key {
                "space" => space_kind = Some(rest.trim().to_string()),
                "dim" => {
                    dim = Some(
                        rest.trim()
                            .parse::<usize>()
                            .map_err(|e| Error::Parse(format!("line {no}: {e}")))?,
                    )
                }
                "lower" => lower = Some(parse_floats(rest, no)?),
                "upper" => upper = Some(parse_floats(rest, no)?),
                "layout" => {
                    layout = Some(match rest.trim() {
                        "nodes" => Layout::Nodes,
                        "cells" => Layout::Cells,
                        other => return Err(Error::Parse(format!("line {no}: unknown layout `{other}`"))),
                    })
                }
                "shape" => {
                    shape = Some(
                        rest.split_whitespace()
                            .map(|t| t.parse::<usize>().map_err(|e| Error::Parse(format!("line {no}: {e}"))))
                            .collect::<Result<_>>()?,
                    )
                }
                "spacing" => spacing = Some(parse_floats(rest, no)?),
                "kernel" => {
                    let (kind, vals) = rest.split_once(' ').unwrap_or((rest, ""));
                    let vals = parse_floats(vals, no)?;
                    kernel = Some(match kind {
                        "gaussian" => Kernel::Gaussian { sigma: vals },
                        "von_mises" => Kernel::VonMises { kappa: vals },
                        other => return Err(Error::Parse(format!("line {no}: unknown kernel `{other}`"))),
                    })
                }
                "epsilon" => epsilon = parse_floats(rest, no)?.first().copied(),
                "beta" => beta = parse_floats(rest, no)?.first().copied(),
                "section" => sections.push((rest.trim().to_string(), Vec::new())),
                other => return Err(Error::Parse(format!("line {no}: unknown key `{other}`"))),
            }
        }
        if !ended {
            return Err(Error::Parse("missing `end`".into()));
        }
        let missing = |what: &str| Error::Parse(format!("missing `{what}`"));
        let dim = dim.ok_or_else(|| missing("dim"))?;
        let space = match space_kind.as_deref() {
            Some("box") => Space::bounded_box(lower.ok_or_else(|| missing("lower"))?, upper.ok_or_else(|| missing("upper"))?)?,
            Some("torus") => Space::torus(dim)?,
            Some(other) => return Err(Error::Parse(format!("unknown space `{other}`"))),
            None => return Err(missing("space")),
        };
        if space.dim() != dim {
            return Err(Error::Parse(format!("dim {dim} disagrees with bounds of dimension {}", space.dim())));
        }
        let shape = shape.ok_or_else(|| missing("shape"))?;
        let spec = GridSpec::new(space, layout.ok_or_else(|| missing("layout"))?, &spacing.ok_or_else(|| missing("spacing"))?)?;
        if spec.shape != shape {
            return Err(Error::Parse(format!("shape {:?} does not match bounds and spacing ({:?})", shape, spec.shape)));
        }
        for (name, v) in &sections {
            if v.len() != spec.len() {
                return Err(Error::Parse(format!(
                    "section `{name}` has {} values, grid has {}",
                    v.len(),
                    spec.len()
                )));
            }
        }
        Ok(GridDump {
            spec,
            kernel,
            epsilon,
            beta,
            sections,
        })
    }
}

impl PotentialGrids {
    pub fn to_dump(&self) -> GridDump {
        GridDump {
            spec: self.spec.clone(),
            kernel: Some(self.kernel.clone()),
            epsilon: Some(self.epsilon),
            beta: Some(self.beta),
            sections: vec![
                ("n_hat".into(), self.n_hat.clone()),
                ("r_hat".into(), self.r_hat.clone()),
                ("v_hat".into(), self.v_hat.clone()),
                ("v_bias".into(), self.v_bias.clone()),
            ],
        }
    }

    pub fn from_dump(d: &GridDump) -> Result<Self> {
        let need = |name: &str| {
            d.section(name)
                .map(|s| s.to_vec())
                .ok_or_else(|| Error::Parse(format!("dump lacks section `{name}`")))
        };
        let kernel = d.kernel.clone().ok_or_else(|| Error::Parse("dump lacks a kernel".into()))?;
        let epsilon = d.epsilon.ok_or_else(|| Error::Parse("dump lacks epsilon".into()))?;
        let beta = d.beta.ok_or_else(|| Error::Parse("dump lacks beta".into()))?;
        if d.spec.layout != Layout::Nodes {
            return Err(Error::Parse("potential grids use node layout".into()));
        }
        let mut g = PotentialGrids::new(d.spec.space.clone(), &d.spec.spacing, kernel, epsilon, beta)?;
        g.n_hat = need("n_hat")?;
        g.r_hat = need("r_hat")?;
        g.v_hat = need("v_hat")?;
        g.v_bias = need("v_bias")?;
        Ok(g)
    }
}

impl DensityGrid {
    pub fn to_dump(&self, name: &str) -> GridDump {
        GridDump::new(self.spec.clone()).with_section(name, self.mass.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::langevin::LangevinParams;
    use crate::metadynamics::MetadParams;

    fn grids() -> PotentialGrids {
        let mut g = PotentialGrids::new(
            Space::interval(-5.0, 23.0).unwrap(),
            &[0.01],
            Kernel::Gaussian { sigma: vec![0.1] },
            1e-3,
            1.0,
        )
        .unwrap();
        let p = MetadParams {
            height: 0.15,
            stride: 2,
            kernel: g.kernel.clone(),
            epsilon: 1e-3,
            langevin: LangevinParams::new(2.0, 1.0, 0.05).unwrap(),
        };
        g.deposit(&[0.123456789], 0.3, &p).unwrap();
        g.deposit(&[20.0 / 3.0], 1.0 / 7.0, &p).unwrap();
        g
    }

    #[test]
    fn potential_round_trip_is_bit_exact() {
        let g = grids();
        let text = g.to_dump().to_text();
        let back = PotentialGrids::from_dump(&GridDump::parse(&text).unwrap()).unwrap();
        assert_eq!(back, g);
        for (a, b) in g.v_hat.iter().zip(&back.v_hat) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.to_dump().to_text(), text);
    }

    #[test]
    fn torus_round_trip() {
        let spec = GridSpec::new(Space::torus(2).unwrap(), Layout::Nodes, &[0.1, 0.1]).unwrap();
        let vals: Vec<f64> = (0..spec.len()).map(|k| (k as f64 * 0.37).sin() / 3.0).collect();
        let d = GridDump::new(spec).with_section("v", vals.clone());
        let back = GridDump::parse(&d.to_text()).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.section("v").unwrap(), vals.as_slice());
    }

    #[test]
    fn rejects_malformed() {
        assert!(GridDump::parse("nonsense\n").is_err());
        let spec = GridSpec::new(Space::interval(0.0, 1.0).unwrap(), Layout::Cells, &[0.5]).unwrap();
        let text = GridDump::new(spec).with_section("v", vec![1.0, 2.0]).to_text();
        assert!(GridDump::parse(&text.replace("end\n", "")).is_err());
        assert!(GridDump::parse(&text.replace("2\n", "")).is_err());
        assert!(GridDump::parse(&text.replace("shape 2", "shape 3")).is_err());
        assert!(GridDump::parse(&text.replace("2\n", "x\n")).is_err());
    }
}
