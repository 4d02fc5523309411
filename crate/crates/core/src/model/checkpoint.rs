//! Checkpoint directories.
//!
//! Every parameter and momentum buffer is a tensor file; `checkpoint.txt`
//! lists them with the architecture, run seed and step. The listing is
//! written last, so a directory without it is incomplete.

use std::path::Path;

use super::params::{ModelConfig, ModelParams};
use super::train::{Sgd, TrainState};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic_str;
use crate::serialize;
use crate::tensor::Tensor;

pub const LISTING: &str = "checkpoint.txt";

fn shape_str(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn config_lines(c: &ModelConfig) -> String {
    format!(
        "config\tenc_widths\t{}x{}\nconfig\tc0\t{}\nconfig\tc\t{}\nconfig\tn_past\t{}\nconfig\tpatch\t{}\nconfig\tstride\t{}\nconfig\tuse_sta\t{}\n",
        c.enc_widths[0], c.enc_widths[1], c.c0, c.c, c.n_past, c.patch, c.stride, c.use_sta
    )
}

/// Writes `state` under `dir`, recording the run `seed`.
pub fn save(dir: impl AsRef<Path>, state: &TrainState, seed: u64) -> Result<()> {
    let dir = dir.as_ref();
    let mut listing = format!("# lsta checkpoint\nseed\t{seed}\nstep\t{}\n", state.step);
    listing += &config_lines(&state.params.config);
    for ((name, t), v) in state.params.names().iter().zip(&state.params.tensors).zip(&state.opt.velocity) {
        let pfile = format!("params/{name}.lsta");
        let vfile = format!("velocity/{name}.lsta");
        serialize::save(dir.join(&pfile), t)?;
        serialize::save(dir.join(&vfile), v)?;
        listing += &format!("param\t{name}\t{}\t{pfile}\t{vfile}\n", shape_str(t.shape()));
    }
    write_atomic_str(dir.join(LISTING), &listing)
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub state: TrainState,
    pub seed: u64,
}

fn bad(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: line,
        message: format!("{LISTING} line {line}: {}", message.into()),
    }
}

pub fn load(dir: impl AsRef<Path>) -> Result<Loaded> {
    let dir = dir.as_ref();
    let path = dir.join(LISTING);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut seed = None;
    let mut step = None;
    let mut cfg = ModelConfig::default();
    let mut files: Vec<(String, String, String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad(n, format!("invalid number {s:?}")));
        match (f[0], f.len()) {
            ("seed", 2) => seed = Some(num(f[1])?),
            ("step", 2) => step = Some(num(f[1])? as usize),
            ("config", 3) => match f[1] {
                "enc_widths" => {
                    let (a, b) = f[2].split_once('x').ok_or_else(|| bad(n, "widths must be AxB"))?;
                    cfg.enc_widths = [num(a)? as usize, num(b)? as usize];
                }
                "c0" => cfg.c0 = num(f[2])? as usize,
                "c" => cfg.c = num(f[2])? as usize,
                "n_past" => cfg.n_past = num(f[2])? as usize,
                "patch" => cfg.patch = num(f[2])? as usize,
                "stride" => cfg.stride = num(f[2])? as usize,
                "use_sta" => cfg.use_sta = f[2].parse().map_err(|_| bad(n, "use_sta must be true or false"))?,
                other => return Err(bad(n, format!("unknown config key {other:?}"))),
            },
            ("param", 5) => files.push((f[1].into(), f[2].into(), f[3].into(), f[4].into())),
            _ => return Err(bad(n, format!("unrecognized entry {:?}", f[0]))),
        }
    }
    let seed = seed.ok_or_else(|| bad(0, "missing seed"))?;
    let step = step.ok_or_else(|| bad(0, "missing step"))?;
    let layout = cfg.layout();
    if files.len() != layout.len() {
        return Err(bad(0, format!("{} parameters listed, {} expected", files.len(), layout.len())));
    }
    let mut tensors = Vec::new();
    let mut velocity = Vec::new();
    for ((name, shape), (lname, lshape, pfile, vfile)) in layout.iter().zip(&files) {
        if name != lname || shape_str(shape) != *lshape {
            return Err(bad(0, format!("parameter {lname} {lshape} where {name} {} expected", shape_str(shape))));
        }
        let p: Tensor = serialize::load(dir.join(pfile))?;
        let v: Tensor = serialize::load(dir.join(vfile))?;
        if v.shape() != p.shape() {
            return Err(Error::shape(format!("momentum of {name} has shape {:?}", v.shape())));
        }
        tensors.push(p);
        velocity.push(v);
    }
    let params = ModelParams::from_tensors(cfg, tensors)?;
    Ok(Loaded {
        state: TrainState {
            params,
            opt: Sgd { velocity },
            step,
        },
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig {
            c0: 8,
            c: 4,
            use_sta: false,
            ..ModelConfig::default()
        };
        let mut state = TrainState::new(cfg, 3).unwrap();
        state.step = 17;
        state.opt.velocity[4].data_mut()[0] = 0.25;
        save(dir.path(), &state, 99).unwrap();
        let back = load(dir.path()).unwrap();
        assert_eq!(back.seed, 99);
        assert_eq!(back.state.step, 17);
        assert_eq!(back.state.params, state.params);
        assert_eq!(back.state.opt, state.opt);
    }

    #[test]
    fn missing_listing_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn corrupt_listing_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(LISTING), "seed\t1\nstep\tx\n").unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Parse { .. })));
    }
}
