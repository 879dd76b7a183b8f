//! Plain-text checkpoints of the global state and training progress.
//!
//! Numbers are written with the shortest representation that parses back to
//! the same `f64`, so save → load is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::mstep::GlobalState;
use crate::trainer::EpochRecord;

const MAGIC: &str = "dapper-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Hash of the training configuration that produced this state.
    pub config_hash: String,
    pub state: GlobalState,
    /// Completed epochs, in order. Wall-clock seconds are not stored.
    pub records: Vec<EpochRecord>,
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    let mut line = String::new();
    for (i, x) in values.into_iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        write!(line, "{x}").expect("write to string");
    }
    line
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let s = &self.state;
        let (t_len, p, k) = s.alpha_hat.dim();
        let mut out = String::new();
        let mut line = |l: String| {
            out.push_str(&l);
            out.push('\n');
        };
        line(MAGIC.to_string());
        line(format!("config_hash {}", self.config_hash));
        line(format!(
            "dims {} {} {} {} {}",
            k,
            s.vocab_size(),
            s.num_authors(),
            p,
            t_len
        ));
        line(format!("step_count {}", s.step_count));
        line(format!("epochs {}", self.records.len()));
        for r in &self.records {
            line(format!(
                "epoch {} {} {} {} {}",
                r.epoch,
                r.train_pwll,
                fmt_opt(r.test_pwll),
                r.docs_skipped,
                r.step_count
            ));
        }
        line("sigma".into());
        line(join(s.sigma.iter().copied()));
        line("mu0".into());
        line(join(s.mu0.iter().copied()));
        line("sigma0".into());
        line(join(s.sigma0.iter().copied()));
        line("lambda".into());
        for row in s.lambda.rows() {
            line(join(row.iter().copied()));
        }
        line("delta".into());
        for row in s.delta.rows() {
            line(join(row.iter().copied()));
        }
        line("alpha_hat".into());
        for row in s
            .alpha_hat
            .to_shape((t_len * p, k))
            .expect("reshape")
            .rows()
        {
            line(join(row.iter().copied()));
        }
        line("alpha_var".into());
        for row in s
            .alpha_var
            .to_shape((t_len * p, k))
            .expect("reshape")
            .rows()
        {
            line(join(row.iter().copied()));
        }
        line("end".into());
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = Lines {
            inner: text.lines().enumerate(),
        };
        lines.expect_exact(MAGIC)?;
        let config_hash = lines.keyed("config_hash")?.to_string();
        let dims: Vec<usize> = lines.keyed_parsed("dims")?;
        let [k, v, a, p, t_len] = dims[..] else {
            return Err(bad("dims needs five values"));
        };
        let step_count = lines
            .keyed("step_count")?
            .parse()
            .map_err(|_| bad("bad step_count"))?;
        let n_epochs: usize = lines
            .keyed("epochs")?
            .parse()
            .map_err(|_| bad("bad epoch count"))?;
        let mut records = Vec::with_capacity(n_epochs);
        for _ in 0..n_epochs {
            let fields: Vec<&str> = lines.keyed("epoch")?.split(' ').collect();
            let [epoch, train, test, skipped, steps] = fields[..] else {
                return Err(bad("epoch line needs five fields"));
            };
            records.push(EpochRecord {
                epoch: epoch.parse().map_err(|_| bad("bad epoch number"))?,
                train_pwll: parse_f64(train)?,
                test_pwll: if test == "NA" {
                    None
                } else {
                    Some(parse_f64(test)?)
                },
                docs_skipped: skipped.parse().map_err(|_| bad("bad skip count"))?,
                step_count: steps.parse().map_err(|_| bad("bad step count"))?,
                seconds: 0.0,
            });
        }
        let sigma = Array1::from(lines.block("sigma", 1, k)?);
        let mu0 = Array1::from(lines.block("mu0", 1, k)?);
        let sigma0 = Array1::from(lines.block("sigma0", 1, k)?);
        let lambda = Array2::from_shape_vec((k, v), lines.block("lambda", k, v)?).expect("shape");
        let delta = Array2::from_shape_vec((a, p), lines.block("delta", a, p)?).expect("shape");
        let alpha_hat =
            Array3::from_shape_vec((t_len, p, k), lines.block("alpha_hat", t_len * p, k)?)
                .expect("shape");
        let alpha_var =
            Array3::from_shape_vec((t_len, p, k), lines.block("alpha_var", t_len * p, k)?)
                .expect("shape");
        lines.expect_exact("end")?;
        Ok(Checkpoint {
            config_hash,
            state: GlobalState {
                lambda,
                delta,
                alpha_hat,
                alpha_var,
                sigma,
                mu0,
                sigma0,
                step_count,
            },
            records,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        // Write then rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_text()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_text(&text).map_err(|e| match e {
            Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

fn bad(msg: &str) -> Error {
    Error::Checkpoint(msg.to_string())
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Checkpoint(format!("bad number {s:?}")))
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| bad("unexpected end of checkpoint"))
    }

    fn expect_exact(&mut self, want: &str) -> Result<()> {
        let (n, l) = self.next()?;
        if l != want {
            return Err(Error::Checkpoint(format!(
                "line {n}: expected {want:?}, found {l:?}"
            )));
        }
        Ok(())
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let (n, l) = self.next()?;
        l.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' '))
            .ok_or_else(|| Error::Checkpoint(format!("line {n}: expected {key:?}")))
    }

    fn keyed_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Vec<T>> {
        self.keyed(key)?
            .split(' ')
            .map(|x| {
                x.parse()
                    .map_err(|_| bad(&format!("bad value {x:?} for {key}")))
            })
            .collect()
    }

    fn block(&mut self, name: &str, rows: usize, cols: usize) -> Result<Vec<f64>> {
        self.expect_exact(name)?;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, l) = self.next()?;
            let before = values.len();
            for x in l.split(' ').filter(|x| !x.is_empty()) {
                values.push(parse_f64(x)?);
            }
            if values.len() - before != cols {
                return Err(Error::Checkpoint(format!(
                    "line {n}: {name} row has {} values, expected {cols}",
                    values.len() - before
                )));
            }
        }
        Ok(values)
    }
}
