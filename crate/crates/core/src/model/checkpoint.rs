//! Plain-text model checkpoints.
//!
//! ```text
//! protomil-checkpoint 1
//! D 2
//! L 3
//! A 1
//! aggregators min
//! prototypes
//! <L values>            (one line per prototype)
//! beta
//! <D*A values>
//! beta0
//! <value>
//! optimizer none | optimizer adam
//! group prototypes <t> <lr> <beta1> <beta2> <eps>
//! m <values>
//! v <values>
//! group classifier <t> <lr> <beta1> <beta2> <eps>
//! m <values>
//! v <values>
//! end
//! ```
//!
//! Reals are written with 17 significant digits, which parses back to the
//! identical `f64`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::ModelParams;
use crate::error::{Error, Result};
use crate::features::{AggregatorSet, Prototypes};
use crate::optim::{Adam, AdamState, GroupConfig};

pub const CHECKPOINT_HEADER: &str = "protomil-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_checkpoint(self, &mut w).and_then(|_| w.flush().map_err(|e| Error::io(path, e)))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        read_checkpoint(BufReader::new(file), &path.display().to_string())
    }
}

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn join(values: &[f64]) -> String {
    values.iter().map(|&v| fmt_real(v)).collect::<Vec<_>>().join(" ")
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut w: W) -> Result<()> {
    let p = &ckpt.params;
    let io = |e| Error::io("<checkpoint>", e);
    let mut out = String::new();
    out.push_str(CHECKPOINT_HEADER);
    out.push('\n');
    out.push_str(&format!(
        "D {}\nL {}\nA {}\n",
        p.prototypes.count(),
        p.prototypes.width(),
        p.aggregators.len()
    ));
    out.push_str(&format!("aggregators {}\nprototypes\n", p.aggregators));
    for row in p.prototypes.rows() {
        out.push_str(&join(row));
        out.push('\n');
    }
    out.push_str(&format!("beta\n{}\nbeta0\n{}\n", join(&p.beta), fmt_real(p.beta0)));
    match &ckpt.optimizer {
        None => out.push_str("optimizer none\n"),
        Some(adam) => {
            out.push_str("optimizer adam\n");
            for (name, cfg, st) in [
                ("prototypes", &adam.prototypes, &adam.prototype_state),
                ("classifier", &adam.classifier, &adam.classifier_state),
            ] {
                out.push_str(&format!(
                    "group {name} {} {} {} {} {}\nm {}\nv {}\n",
                    st.t,
                    fmt_real(cfg.lr),
                    fmt_real(cfg.beta1),
                    fmt_real(cfg.beta2),
                    fmt_real(cfg.eps),
                    join(&st.m),
                    join(&st.v)
                ));
            }
        }
    }
    out.push_str("end\n");
    w.write_all(out.as_bytes()).map_err(io)
}

struct Lines<'a, R> {
    inner: std::iter::Enumerate<std::io::Lines<R>>,
    source: &'a str,
    line: usize,
}

impl<R: BufRead> Lines<'_, R> {
    fn next(&mut self) -> Result<String> {
        match self.inner.next() {
            Some((i, Ok(l))) => {
                self.line = i + 1;
                Ok(l)
            }
            Some((i, Err(e))) => Err(Error::parse(self.source, i + 1, e.to_string())),
            None => Err(self.err("unexpected end of checkpoint")),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::parse(self.source, self.line, msg)
    }

    fn keyword(&mut self, kw: &str) -> Result<String> {
        let l = self.next()?;
        let rest = l
            .strip_prefix(kw)
            .filter(|r| r.is_empty() || r.starts_with(' '))
            .ok_or_else(|| self.err(format!("expected '{kw}'")))?;
        Ok(rest.trim().to_string())
    }

    fn count(&mut self, kw: &str) -> Result<usize> {
        let v = self.keyword(kw)?;
        v.parse().map_err(|_| self.err(format!("bad {kw} value '{v}'")))
    }

    fn reals(&self, text: &str, expected: usize) -> Result<Vec<f64>> {
        let vals = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| self.err(format!("bad number '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", vals.len())));
        }
        Ok(vals)
    }

    fn real_line(&mut self, expected: usize) -> Result<Vec<f64>> {
        let l = self.next()?;
        self.reals(&l, expected)
    }
}

pub fn read_checkpoint<R: BufRead>(reader: R, source: &str) -> Result<Checkpoint> {
    let mut lines = Lines {
        inner: reader.lines().enumerate(),
        source,
        line: 0,
    };
    if lines.next()?.trim_end() != CHECKPOINT_HEADER {
        return Err(lines.err(format!("not a checkpoint (expected header '{CHECKPOINT_HEADER}')")));
    }
    let dcount = lines.count("D")?;
    let width = lines.count("L")?;
    let a = lines.count("A")?;
    let aggs: AggregatorSet = lines
        .keyword("aggregators")?
        .parse()
        .map_err(|e: Error| lines.err(e.to_string()))?;
    if aggs.len() != a {
        return Err(lines.err(format!("A={a} but {} aggregators listed", aggs.len())));
    }
    lines.keyword("prototypes")?;
    let mut flat = Vec::with_capacity(dcount * width);
    for _ in 0..dcount {
        flat.extend(lines.real_line(width)?);
    }
    let prototypes = Prototypes::from_flat(dcount, width, flat).map_err(|e| lines.err(e.to_string()))?;
    lines.keyword("beta")?;
    let beta = lines.real_line(dcount * a)?;
    lines.keyword("beta0")?;
    let beta0 = lines.real_line(1)?[0];
    let params = ModelParams {
        prototypes,
        aggregators: aggs,
        beta,
        beta0,
    };

    let optimizer = match lines.keyword("optimizer")?.as_str() {
        "none" => None,
        "adam" => {
            let mut group = |name: &str, len: usize| -> Result<(GroupConfig, AdamState)> {
                let spec = lines.keyword("group")?;
                let mut parts = spec.split_whitespace();
                if parts.next() != Some(name) {
                    return Err(lines.err(format!("expected group '{name}'")));
                }
                let t: u64 = parts
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| lines.err("bad step counter"))?;
                let rest: Vec<&str> = parts.collect();
                let c = lines.reals(&rest.join(" "), 4)?;
                let m = lines.keyword("m")?;
                let m = lines.reals(&m, len)?;
                let v = lines.keyword("v")?;
                let v = lines.reals(&v, len)?;
                Ok((
                    GroupConfig {
                        lr: c[0],
                        beta1: c[1],
                        beta2: c[2],
                        eps: c[3],
                    },
                    AdamState { m, v, t },
                ))
            };
            let (pc, ps) = group("prototypes", dcount * width)?;
            let (cc, cs) = group("classifier", dcount * a + 1)?;
            Some(Adam {
                prototypes: pc,
                classifier: cc,
                prototype_state: ps,
                classifier_state: cs,
            })
        }
        other => return Err(lines.err(format!("unknown optimizer '{other}'"))),
    };
    if lines.next()?.trim() != "end" {
        return Err(lines.err("expected 'end'"));
    }
    params.validate().map_err(|e| lines.err(e.to_string()))?;
    Ok(Checkpoint { params, optimizer })
}
