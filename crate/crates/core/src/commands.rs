//! Subcommand implementations. Each takes a validated [`RunConfig`].

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::bench::{self, BenchReport};
use crate::config::RunConfig;
use crate::data::manifest::{frame_paths, load_clip, Manifest, ManifestEntry};
use crate::data::pnm::{load_frame, load_mask, save_frame, save_mask};
use crate::data::{dataset_clip, Clip, EvalReport, Mask, Split};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic_str;
use crate::ltm::make_projection_basis;
use crate::model::checkpoint::{self, LISTING};
use crate::model::{score_clip, Segmenter, TrainState};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const LOSS_LOG: &str = "loss.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const BENCH_CSV: &str = "bench.csv";
pub const BENCH_MD: &str = "bench.md";

/// Writes the train and validation splits under `cfg.data_dir`.
/// The manifest is written last.
pub fn gen_data(cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    let spec = cfg.dataset();
    let mut manifest = Manifest::default();
    for (split, count) in [(Split::Train, cfg.clips_train), (Split::Val, cfg.clips_val)] {
        for i in 0..count {
            let id = split.clip_id(i);
            let clip = dataset_clip(&spec, cfg.seed, split, i)?;
            for (t, (frame, mask)) in clip.frames.iter().zip(&clip.masks).enumerate() {
                let (fp, mp) = frame_paths(&id, t);
                save_frame(cfg.data_dir.join(&fp), frame)?;
                save_mask(cfg.data_dir.join(&mp), mask)?;
                manifest.entries.push(ManifestEntry {
                    frame: fp.to_string_lossy().into_owned(),
                    mask: mp.to_string_lossy().into_owned(),
                    clip: id.clone(),
                    index: t,
                });
            }
        }
    }
    manifest.save(&cfg.data_dir)?;
    Ok(manifest)
}

fn split_prefix(split: &str) -> Result<String> {
    match split {
        "train" | "val" => Ok(format!("{split}-")),
        "all" => Ok(String::new()),
        other => Err(Error::Config(format!("unknown split {other:?}; expected train, val or all"))),
    }
}

/// Clips of the dataset at `dir` whose id belongs to `split`.
pub fn load_split(dir: &Path, split: &str) -> Result<Vec<(String, Clip)>> {
    let prefix = split_prefix(split)?;
    let manifest = Manifest::load(dir)?;
    manifest
        .clip_ids()
        .into_iter()
        .filter(|id| id.starts_with(&prefix))
        .map(|id| {
            let clip = load_clip(dir, &manifest, &id)?;
            Ok((id, clip))
        })
        .collect()
}

fn checkpoint_dir(cfg: &RunConfig) -> PathBuf {
    cfg.checkpoint.clone().unwrap_or_else(|| cfg.out.join(CHECKPOINT_DIR))
}

/// Replaces the checkpoint at `dir` so that a complete one exists at every
/// moment after the first save.
fn save_checkpoint(dir: &Path, state: &TrainState, seed: u64) -> Result<()> {
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let fresh = dir.with_file_name(format!("{name}.partial"));
    let old = dir.with_file_name(format!("{name}.old"));
    for p in [&fresh, &old] {
        if p.exists() {
            fs::remove_dir_all(p).map_err(|e| Error::io(p, e))?;
        }
    }
    checkpoint::save(&fresh, state, seed)?;
    if dir.exists() {
        fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&fresh, dir).map_err(|e| Error::io(dir, e))?;
    if old.exists() {
        fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    }
    Ok(())
}

fn loss_csv(rows: &[(usize, f64)]) -> String {
    let mut s = String::from("iteration,loss\n");
    for (i, l) in rows {
        s += &format!("{i},{l:.8}\n");
    }
    s
}

fn read_loss_log(path: &Path, upto: usize) -> Result<Vec<(usize, f64)>> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(Vec::new());
    };
    let mut rows = Vec::new();
    let mut offset = 0;
    for line in text.lines() {
        let start = offset;
        offset += line.len() + 1;
        if start == 0 || line.is_empty() {
            continue;
        }
        let parsed = line
            .split_once(',')
            .and_then(|(i, l)| Some((i.parse::<usize>().ok()?, l.parse::<f64>().ok()?)));
        let (i, l) = parsed.ok_or_else(|| Error::Parse {
            offset: start,
            message: format!("{}: malformed loss row {line:?}", path.display()),
        })?;
        if i <= upto {
            rows.push((i, l));
        }
    }
    Ok(rows)
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub state: TrainState,
    /// `(iteration, loss)` with 1-based iterations.
    pub losses: Vec<(usize, f64)>,
    pub checkpoint: PathBuf,
}

/// Trains on the `train-` clips of `cfg.data_dir` until `cfg.iterations`
/// steps are complete.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let ckpt = checkpoint_dir(cfg);
    let log_path = cfg.out.join(LOSS_LOG);
    let clips: Vec<Clip> = load_split(&cfg.data_dir, "train")?.into_iter().map(|(_, c)| c).collect();
    if clips.is_empty() {
        return Err(Error::arg(format!("no training clips in {}", cfg.data_dir.display())));
    }
    let (mut state, mut losses) = if cfg.resume && ckpt.join(LISTING).exists() {
        let loaded = checkpoint::load(&ckpt)?;
        if loaded.state.params.config != cfg.model() {
            return Err(Error::Config(format!(
                "checkpoint architecture {:?} differs from the configured {:?}",
                loaded.state.params.config,
                cfg.model()
            )));
        }
        if loaded.seed != cfg.seed {
            return Err(Error::Config(format!("checkpoint seed {} differs from --seed {}", loaded.seed, cfg.seed)));
        }
        let step = loaded.state.step;
        log::info!("resuming from step {step}");
        (loaded.state, read_loss_log(&log_path, step)?)
    } else {
        (TrainState::new(cfg.model(), cfg.seed)?, Vec::new())
    };
    let run = cfg.run_settings();
    while state.step < cfg.iterations {
        let loss = match state.advance(&clips, &run) {
            Ok(l) => l,
            Err(e) => {
                write_atomic_str(&log_path, &loss_csv(&losses))?;
                return Err(e);
            }
        };
        losses.push((state.step, loss));
        if state.step % 50 == 0 {
            log::info!("step {} loss {loss:.5}", state.step);
        }
        if state.step % cfg.checkpoint_interval == 0 || state.step == cfg.iterations {
            save_checkpoint(&ckpt, &state, cfg.seed)?;
            write_atomic_str(&log_path, &loss_csv(&losses))?;
        }
    }
    if !ckpt.join(LISTING).exists() {
        save_checkpoint(&ckpt, &state, cfg.seed)?;
        write_atomic_str(&log_path, &loss_csv(&losses))?;
    }
    Ok(TrainSummary {
        state,
        losses,
        checkpoint: ckpt,
    })
}

fn numbered_files(dir: &Path, prefix: &str, ext: &str) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with(prefix) && name.ends_with(ext) {
            files.push(entry.path());
        }
    }
    files.sort();
    Ok(files)
}

/// Outcome of inference over one or more clips.
#[derive(Debug, Clone)]
pub struct InferSummary {
    /// Clip id and mask count.
    pub clips: Vec<(String, usize)>,
    pub frames: usize,
    pub seconds: f64,
    pub out: PathBuf,
}

impl InferSummary {
    pub fn fps(&self) -> f64 {
        if self.seconds > 0.0 {
            self.frames as f64 / self.seconds
        } else {
            f64::INFINITY
        }
    }
}

fn pred_dir(cfg: &RunConfig) -> PathBuf {
    cfg.pred.clone().unwrap_or_else(|| cfg.out.join("pred"))
}

/// Segments `cfg.input` (a dataset directory with a manifest, or a single
/// clip directory of `frame_*.ppm`) into `mask_*.pgm` files under
/// `cfg.pred`, one subdirectory per clip.
pub fn infer(cfg: &RunConfig) -> Result<InferSummary> {
    cfg.validate()?;
    let input = cfg.input.clone().unwrap_or_else(|| cfg.data_dir.clone());
    let loaded = checkpoint::load(checkpoint_dir(cfg))?;
    let params = loaded.state.params;
    let basis = make_projection_basis(params.config.c, cfg.seed)?;
    let seg = Segmenter::new(&params, basis)?;
    let clips: Vec<(String, Vec<_>)> = if input.join(crate::data::manifest::MANIFEST_NAME).exists() {
        load_split(&input, &cfg.split)?
            .into_iter()
            .map(|(id, c)| (id, c.frames))
            .collect()
    } else {
        let files = numbered_files(&input, "frame_", ".ppm")?;
        let frames = files.iter().map(load_frame).collect::<Result<Vec<_>>>()?;
        let id = input
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "clip".into());
        vec![(id, frames)]
    };
    let out = pred_dir(cfg);
    let mut summary = InferSummary {
        clips: Vec::new(),
        frames: 0,
        seconds: 0.0,
        out: out.clone(),
    };
    for (id, frames) in &clips {
        let start = Instant::now();
        let masks = seg.masks(frames).map_err(|e| match e {
            Error::Argument(m) => Error::Argument(format!("clip {id}: {m}")),
            other => other,
        })?;
        summary.seconds += start.elapsed().as_secs_f64();
        for (t, m) in masks.iter().enumerate() {
            save_mask(out.join(id).join(format!("mask_{t:04}.pgm")), m)?;
        }
        summary.frames += masks.len();
        summary.clips.push((id.clone(), masks.len()));
    }
    Ok(summary)
}

fn load_masks(dir: &Path) -> Result<Vec<Mask>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    numbered_files(dir, "mask_", ".pgm")?.iter().map(load_mask).collect()
}

/// Scores predicted masks in `cfg.pred` against the ground truth of the
/// dataset at `cfg.gt` (default `cfg.data_dir`). Writes `eval.csv`.
pub fn eval(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let gt_dir = cfg.gt.clone().unwrap_or_else(|| cfg.data_dir.clone());
    let prefix = split_prefix(&cfg.split)?;
    let manifest = Manifest::load(&gt_dir)?;
    let pred_root = pred_dir(cfg);
    let mut pairs = Vec::new();
    let mut mismatched = Vec::new();
    for id in manifest.clip_ids().into_iter().filter(|id| id.starts_with(&prefix)) {
        let gt = load_clip(&gt_dir, &manifest, &id)?.masks;
        let pred = load_masks(&pred_root.join(&id))?;
        if pred.len() != gt.len() {
            mismatched.push(format!("{id} ({} predicted, {} expected)", pred.len(), gt.len()));
        } else {
            pairs.push((id, pred, gt));
        }
    }
    if !mismatched.is_empty() {
        return Err(Error::arg(format!("frame count mismatch: {}", mismatched.join(", "))));
    }
    if pairs.is_empty() {
        return Err(Error::arg(format!("no clips of split {:?} in {}", cfg.split, gt_dir.display())));
    }
    let scores = pairs
        .iter()
        .map(|(id, p, g)| score_clip(id, p, g, cfg.tol_px))
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport::from_clips(scores, None);
    write_atomic_str(cfg.out.join(EVAL_CSV), &report.to_csv())?;
    Ok(report)
}

/// Runs the complexity sweep and writes `bench.csv` and `bench.md`.
pub fn bench(cfg: &RunConfig) -> Result<BenchReport> {
    cfg.validate()?;
    let report = bench::run(&cfg.bench_settings())?;
    write_atomic_str(cfg.out.join(BENCH_CSV), &report.to_csv())?;
    write_atomic_str(cfg.out.join(BENCH_MD), &report.to_markdown())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path) -> RunConfig {
        let mut c = RunConfig::default();
        for kv in [
            "height=16", "width=16", "clip_len=4", "clips_train=2", "clips_val=1", "n_past=2", "patch=4",
            "stride=2", "c=4", "c0=8", "enc1=4", "enc2=4", "iterations=3", "batch_size=1",
            "checkpoint_interval=2", "blur_radius=1",
        ] {
            c.apply_override(kv).unwrap();
        }
        c.data_dir = dir.join("data");
        c.out = dir.join("out");
        c
    }

    #[test]
    fn loss_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.csv");
        fs::write(&p, loss_csv(&[(1, 0.5), (2, 0.25), (3, 0.125)])).unwrap();
        assert_eq!(read_loss_log(&p, 2).unwrap(), vec![(1, 0.5), (2, 0.25)]);
        fs::write(&p, "iteration,loss\n1,x\n").unwrap();
        assert!(matches!(read_loss_log(&p, 5), Err(Error::Parse { offset: 15, .. })));
    }

    #[test]
    fn pipeline_on_a_tiny_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(dir.path());
        let m = gen_data(&cfg).unwrap();
        assert_eq!(m.clip_ids(), vec!["train-0000", "train-0001", "val-0000"]);
        let t = train(&cfg).unwrap();
        assert_eq!(t.state.step, 3);
        assert_eq!(t.losses.len(), 3);
        let inf = infer(&cfg).unwrap();
        assert_eq!(inf.clips, vec![("val-0000".to_string(), 4)]);
        let r = eval(&cfg).unwrap();
        assert_eq!(r.clips.len(), 1);
        assert!(cfg.out.join(EVAL_CSV).exists());
    }

    #[test]
    fn eval_lists_mismatched_clips() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path());
        cfg.clips_val = 2;
        gen_data(&cfg).unwrap();
        let gt = load_split(&cfg.data_dir, "val").unwrap();
        for (t, m) in gt[0].1.masks.iter().enumerate() {
            save_mask(cfg.out.join("pred/val-0000").join(format!("mask_{t:04}.pgm")), m).unwrap();
        }
        let err = eval(&cfg).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Argument(_)));
        assert!(msg.contains("val-0001") && !msg.contains("val-0000"), "{msg}");
    }
}
