//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Unknown keys are rejected.
//! Later assignments (including `--set` overrides) win.

use std::path::{Path, PathBuf};

use crate::bench::BenchSettings;
use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::model::{Hyper, ModelConfig, RunSettings};
use crate::sta::PatchGeometry;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub n_past: usize,
    pub patch: usize,
    pub stride: usize,
    pub c: usize,
    pub c0: usize,
    pub enc1: usize,
    pub enc2: usize,
    pub use_sta: bool,
    pub alpha: f64,
    /// Peak learning rate, reached after `warmup` steps.
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub blur_radius: usize,
    pub warmup: usize,
    pub checkpoint_interval: usize,
    pub resume: bool,
    pub clips_train: usize,
    pub clips_val: usize,
    pub clip_len: usize,
    pub distractors: usize,
    pub occluder: bool,
    pub data_dir: PathBuf,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub split: String,
    pub tol_px: usize,
    pub bench_c: usize,
    pub bench_k: usize,
    pub bench_d: usize,
    pub bench_repeats: usize,
    pub bench_ltm_n: Vec<usize>,
    pub bench_exact_n: Vec<usize>,
    pub bench_sta_n: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let h = Hyper::default();
        Self {
            seed: 7,
            height: 64,
            width: 64,
            n_past: m.n_past,
            patch: m.patch,
            stride: m.stride,
            c: m.c,
            c0: m.c0,
            enc1: m.enc_widths[0],
            enc2: m.enc_widths[1],
            use_sta: true,
            alpha: h.alpha,
            lr: 0.02,
            momentum: h.momentum,
            weight_decay: h.weight_decay,
            iterations: 2000,
            batch_size: 4,
            blur_radius: 2,
            warmup: 100,
            checkpoint_interval: 500,
            resume: false,
            clips_train: 40,
            clips_val: 10,
            clip_len: 24,
            distractors: 2,
            occluder: true,
            data_dir: PathBuf::from("data"),
            out: PathBuf::from("out"),
            checkpoint: None,
            input: None,
            pred: None,
            gt: None,
            split: "val".into(),
            tol_px: 1,
            bench_c: 32,
            bench_k: 8,
            bench_d: 4,
            bench_repeats: 5,
            bench_ltm_n: vec![4096, 16384, 65536],
            bench_exact_n: vec![1024, 4096, 16384],
            bench_sta_n: vec![4096, 16384, 65536],
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Assigns one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse_num(key, v)?,
            "height" => self.height = parse_num(key, v)?,
            "width" => self.width = parse_num(key, v)?,
            "n_past" => self.n_past = parse_num(key, v)?,
            "patch" => self.patch = parse_num(key, v)?,
            "stride" => self.stride = parse_num(key, v)?,
            "c" => self.c = parse_num(key, v)?,
            "c0" => self.c0 = parse_num(key, v)?,
            "enc1" => self.enc1 = parse_num(key, v)?,
            "enc2" => self.enc2 = parse_num(key, v)?,
            "use_sta" => self.use_sta = parse_bool(key, v)?,
            "alpha" => self.alpha = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "momentum" => self.momentum = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "iterations" => self.iterations = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "blur_radius" => self.blur_radius = parse_num(key, v)?,
            "warmup" => self.warmup = parse_num(key, v)?,
            "checkpoint_interval" => self.checkpoint_interval = parse_num(key, v)?,
            "resume" => self.resume = parse_bool(key, v)?,
            "clips_train" => self.clips_train = parse_num(key, v)?,
            "clips_val" => self.clips_val = parse_num(key, v)?,
            "clip_len" => self.clip_len = parse_num(key, v)?,
            "distractors" => self.distractors = parse_num(key, v)?,
            "occluder" => self.occluder = parse_bool(key, v)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            "checkpoint" => self.checkpoint = opt_path(v),
            "input" => self.input = opt_path(v),
            "pred" => self.pred = opt_path(v),
            "gt" => self.gt = opt_path(v),
            "split" => self.split = v.to_string(),
            "tol_px" => self.tol_px = parse_num(key, v)?,
            "bench_c" => self.bench_c = parse_num(key, v)?,
            "bench_k" => self.bench_k = parse_num(key, v)?,
            "bench_d" => self.bench_d = parse_num(key, v)?,
            "bench_repeats" => self.bench_repeats = parse_num(key, v)?,
            "bench_ltm_n" => self.bench_ltm_n = parse_list(key, v)?,
            "bench_exact_n" => self.bench_exact_n = parse_list(key, v)?,
            "bench_sta_n" => self.bench_sta_n = parse_list(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k, v)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, e.to_string().trim_start_matches("config error: "))))?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            enc_widths: [self.enc1, self.enc2],
            c0: self.c0,
            c: self.c,
            n_past: self.n_past,
            patch: self.patch,
            stride: self.stride,
            use_sta: self.use_sta,
        }
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            alpha: self.alpha,
        }
    }

    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            hyper: self.hyper(),
            batch_size: self.batch_size,
            blur_radius: self.blur_radius,
            seed: self.seed,
            warmup_steps: self.warmup,
        }
    }

    pub fn dataset(&self) -> DatasetSpec {
        DatasetSpec {
            height: self.height,
            width: self.width,
            clip_len: self.clip_len,
            distractors: self.distractors,
            occluder: self.occluder,
        }
    }

    pub fn bench_settings(&self) -> BenchSettings {
        BenchSettings {
            c: self.bench_c,
            k: self.bench_k,
            d: self.bench_d,
            repeats: self.bench_repeats,
            exact_n: self.bench_exact_n.clone(),
            ltm_n: self.bench_ltm_n.clone(),
            sta_n: self.bench_sta_n.clone(),
            seed: self.seed,
        }
    }

    /// Checks every value against the preconditions of the modules that
    /// consume it.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        self.model().validate()?;
        self.hyper().validate()?;
        if self.height == 0 || self.width == 0 || self.height % 4 != 0 || self.width % 4 != 0 {
            return cfg(format!("frame size {}×{} must be positive multiples of 4", self.height, self.width));
        }
        PatchGeometry::new(self.height / 4, self.width / 4, self.patch, self.stride)
            .map_err(|e| Error::Config(format!("patch/stride: {e}")))?;
        if self.batch_size == 0 {
            return cfg("batch_size must be at least 1".into());
        }
        if self.clip_len < self.n_past + 1 {
            return cfg(format!("clip_len {} cannot hold {} memory frames plus a query", self.clip_len, self.n_past));
        }
        if self.height * self.width < crate::loss::OHEM_DIVISOR {
            return cfg("frames too small for hard-example mining".into());
        }
        if self.checkpoint_interval == 0 {
            return cfg("checkpoint_interval must be at least 1".into());
        }
        if self.bench_repeats < 1 {
            return cfg("bench_repeats must be at least 1".into());
        }
        if self.bench_c < 2 {
            return cfg("bench_c must be at least 2".into());
        }
        if self.bench_d == 0 || self.bench_d > self.bench_k {
            return cfg(format!("bench stride {} must lie in 1..={}", self.bench_d, self.bench_k));
        }
        for (name, ns) in [
            ("bench_ltm_n", &self.bench_ltm_n),
            ("bench_exact_n", &self.bench_exact_n),
            ("bench_sta_n", &self.bench_sta_n),
        ] {
            let (lo, hi) = (ns.iter().min().copied().unwrap_or(0), ns.iter().max().copied().unwrap_or(0));
            if ns.len() < 3 || lo == 0 || hi < 16 * lo {
                return cfg(format!("{name} needs at least 3 sizes spanning 16×"));
            }
        }
        if self.bench_exact_n.iter().any(|&n| n > crate::ltm::EXACT_ORACLE_MAX_ROWS) {
            return cfg(format!("bench_exact_n exceeds the {} row cap", crate::ltm::EXACT_ORACLE_MAX_ROWS));
        }
        if self.bench_sta_n.iter().any(|&n| ((n as f64).sqrt().round() as usize) < self.bench_k) {
            return cfg("bench_sta_n too small for the patch size".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
        let d = RunConfig::default();
        assert_eq!((d.n_past, d.patch, d.stride, d.alpha), (5, 8, 4, 0.5));
        assert_eq!((d.momentum, d.weight_decay), (0.9, 1.5e-4));
    }

    #[test]
    fn text_and_overrides() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nlr = 0.01  # trailing\n\nuse_sta=false\nbench_ltm_n = 10, 40, 160\n").unwrap();
        assert_eq!(c.lr, 0.01);
        assert!(!c.use_sta);
        assert_eq!(c.bench_ltm_n, vec![10, 40, 160]);
        c.apply_override("lr=0.5").unwrap();
        assert_eq!(c.lr, 0.5);
    }

    #[test]
    fn unknown_and_malformed_keys() {
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_text("colour = red"), Err(Error::Config(_))));
        assert!(matches!(c.apply_text("lr"), Err(Error::Config(_))));
        assert!(matches!(c.apply_override("seed=abc"), Err(Error::Config(_))));
    }

    #[test]
    fn validation_catches_preconditions() {
        let bad = |k: &str, v: &str| {
            let mut c = RunConfig::default();
            c.set(k, v).unwrap();
            c.validate().is_err()
        };
        assert!(bad("alpha", "1.5"));
        assert!(bad("height", "62"));
        assert!(bad("stride", "9"));
        assert!(bad("patch", "20"));
        assert!(bad("c", "1"));
        assert!(bad("bench_exact_n", "1000,2000,4000"));
        assert!(bad("clip_len", "5"));
        assert!(!bad("patch", "4"));
    }
}
