//! Procedural moving-shape clips.
//!
//! One warm-colored primary object moves over a low-contrast noise
//! background. Smaller cool-colored distractors move underneath it and an
//! optional gray bar sweeps across, partially hiding the object. The mask
//! is the visible support of the primary object.

use super::Mask;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Largest fraction of the object a bar may hide in one frame.
pub const MAX_OCCLUSION: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disc,
    Rectangle,
    Ring,
}

impl ShapeKind {
    const ALL: [ShapeKind; 3] = [ShapeKind::Disc, ShapeKind::Rectangle, ShapeKind::Ring];

    /// Whether offset `(dy, dx)` from the center lies inside a shape of
    /// radius `size`.
    fn contains(self, size: f64, dy: f64, dx: f64) -> bool {
        let r2 = dy * dy + dx * dx;
        match self {
            ShapeKind::Disc => r2 <= size * size,
            ShapeKind::Rectangle => dx.abs() <= size && dy.abs() <= 0.7 * size,
            ShapeKind::Ring => r2 <= size * size && r2 >= 0.25 * size * size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Trajectory {
    Linear,
    /// Linear drift plus a vertical oscillation.
    Sinusoidal { amplitude: f64, period: f64 },
}

/// Full-height vertical bar moving horizontally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occluder {
    pub width: f64,
    pub start_x: f64,
    pub velocity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub kind: ShapeKind,
    /// Radius (half-width for rectangles) at frame 0, in pixels.
    pub size: f64,
    /// Center `(y, x)` at frame 0.
    pub start: (f64, f64),
    /// Pixels per frame, `(y, x)`.
    pub velocity: (f64, f64),
    pub trajectory: Trajectory,
    /// Multiplicative size change per frame.
    pub scale_drift: f64,
    pub color: [f32; 3],
    pub background_seed: u64,
    pub distractors: usize,
    pub occluder: Option<Occluder>,
}

impl SceneSpec {
    /// Static disc of radius `size` at the canvas center.
    pub fn still(height: usize, width: usize, size: f64) -> Self {
        Self {
            height,
            width,
            kind: ShapeKind::Disc,
            size,
            start: (height as f64 / 2.0, width as f64 / 2.0),
            velocity: (0.0, 0.0),
            trajectory: Trajectory::Linear,
            scale_drift: 1.0,
            color: [0.9, 0.4, 0.2],
            background_seed: 0,
            distractors: 0,
            occluder: None,
        }
    }

    /// Draws a scene whose object stays on the canvas for `t` frames.
    pub fn sample(height: usize, width: usize, t: usize, distractors: usize, occluder: bool, rng: &mut Rng) -> Self {
        let extent = height.min(width) as f64;
        let size = rng.uniform_range(0.12, 0.2) * extent;
        let trajectory = if rng.bernoulli(0.5) {
            Trajectory::Linear
        } else {
            Trajectory::Sinusoidal {
                amplitude: rng.uniform_range(1.0, 0.05 * extent),
                period: rng.uniform_range(8.0, 20.0),
            }
        };
        let amp = match trajectory {
            Trajectory::Sinusoidal { amplitude, .. } => amplitude,
            Trajectory::Linear => 0.0,
        };
        let margin_y = 0.8 * size + amp + 1.0;
        let margin_x = 0.8 * size + 1.0;
        let point = |rng: &mut Rng| {
            (
                rng.uniform_range(margin_y, height as f64 - margin_y),
                rng.uniform_range(margin_x, width as f64 - margin_x),
            )
        };
        let start = point(rng);
        let end = point(rng);
        let steps = t.saturating_sub(1).max(1) as f64;
        let kind = ShapeKind::ALL[rng.index(0, 3)];
        let color = [
            rng.uniform_range(0.75, 0.95) as f32,
            rng.uniform_range(0.25, 0.55) as f32,
            rng.uniform_range(0.1, 0.3) as f32,
        ];
        let scale_drift = rng.uniform_range(0.99, 1.01);
        let background_seed = rng.next_u64();
        let occluder = occluder.then(|| Occluder {
            width: 0.7 * size,
            start_x: rng.uniform_range(0.0, width as f64),
            velocity: rng.uniform_range(-1.5, 1.5),
        });
        Self {
            height,
            width,
            kind,
            size,
            start,
            velocity: ((end.0 - start.0) / steps, (end.1 - start.1) / steps),
            trajectory,
            scale_drift,
            color,
            background_seed,
            distractors,
            occluder,
        }
    }

    fn center(&self, f: usize) -> (f64, f64) {
        let f = f as f64;
        let wobble = match self.trajectory {
            Trajectory::Linear => 0.0,
            Trajectory::Sinusoidal { amplitude, period } => amplitude * (std::f64::consts::TAU * f / period).sin(),
        };
        (self.start.0 + self.velocity.0 * f + wobble, self.start.1 + self.velocity.1 * f)
    }

    fn size_at(&self, f: usize) -> f64 {
        self.size * self.scale_drift.powi(f as i32)
    }

    fn validate(&self, t: usize) -> Result<()> {
        if t < 2 {
            return Err(Error::arg(format!("clip length {t} must be at least 2")));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::arg("canvas must be non-empty"));
        }
        if !(self.size > 0.0 && self.scale_drift > 0.0) {
            return Err(Error::arg("object size and scale drift must be positive"));
        }
        for f in 0..t {
            let (cy, cx) = self.center(f);
            if !(0.0..self.height as f64).contains(&cy) || !(0.0..self.width as f64).contains(&cx) {
                return Err(Error::arg(format!(
                    "object center ({cy:.1}, {cx:.1}) leaves the {}×{} canvas at frame {f}",
                    self.height, self.width
                )));
            }
            if self.size_at(f) < 1.0 {
                return Err(Error::arg(format!("object shrinks below one pixel at frame {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    /// `H × W × 3` frames with values in `[0, 1]`.
    pub frames: Vec<Tensor<f32>>,
    pub masks: Vec<Mask>,
}

impl Clip {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

struct Distractor {
    kind: ShapeKind,
    size: f64,
    start: (f64, f64),
    velocity: (f64, f64),
    color: [f32; 3],
}

fn raster(h: usize, w: usize, kind: ShapeKind, size: f64, center: (f64, f64)) -> Mask {
    Mask::from_fn(h, w, |y, x| kind.contains(size, y as f64 + 0.5 - center.0, x as f64 + 0.5 - center.1))
        .expect("non-empty canvas")
}

fn paint(frame: &mut [f32], support: &Mask, color: [f32; 3]) {
    for (i, &b) in support.bits().iter().enumerate() {
        if b == 1 {
            frame[i * 3..i * 3 + 3].copy_from_slice(&color);
        }
    }
}

/// Renders `t` frames of `spec`. Identical `(spec, rng state)` give
/// identical clips.
pub fn generate_clip(spec: &SceneSpec, t: usize, rng: &mut Rng) -> Result<Clip> {
    spec.validate(t)?;
    let (h, w) = (spec.height, spec.width);

    let mut tex_rng = Rng::new(spec.background_seed);
    let base = tex_rng.uniform_range(0.4, 0.55);
    let texture: Vec<f32> = (0..h * w * 3)
        .map(|_| (base + tex_rng.uniform_range(-0.06, 0.06)) as f32)
        .collect();

    let distractors: Vec<Distractor> = (0..spec.distractors)
        .map(|_| Distractor {
            kind: ShapeKind::ALL[rng.index(0, 3)],
            size: spec.size * rng.uniform_range(0.4, 0.6),
            start: (rng.uniform_range(0.0, h as f64), rng.uniform_range(0.0, w as f64)),
            velocity: (rng.uniform_range(-1.5, 1.5), rng.uniform_range(-1.5, 1.5)),
            color: [
                rng.uniform_range(0.1, 0.3) as f32,
                rng.uniform_range(0.4, 0.7) as f32,
                rng.uniform_range(0.6, 0.9) as f32,
            ],
        })
        .collect();
    let occluder_gray = rng.uniform_range(0.25, 0.35) as f32;

    let mut clip = Clip {
        frames: Vec::with_capacity(t),
        masks: Vec::with_capacity(t),
    };
    for f in 0..t {
        let mut frame = texture.clone();
        for v in frame.iter_mut() {
            *v = (*v + rng.uniform_range(-0.02, 0.02) as f32).clamp(0.0, 1.0);
        }
        for d in &distractors {
            let c = (d.start.0 + d.velocity.0 * f as f64, d.start.1 + d.velocity.1 * f as f64);
            paint(&mut frame, &raster(h, w, d.kind, d.size, c), d.color);
        }
        let mut mask = raster(h, w, spec.kind, spec.size_at(f), spec.center(f));
        paint(&mut frame, &mask, spec.color);
        if let Some(o) = spec.occluder {
            let x0 = o.start_x + o.velocity * f as f64 - o.width / 2.0;
            let bar = Mask::from_fn(h, w, |_, x| {
                let xc = x as f64 + 0.5;
                xc >= x0 && xc <= x0 + o.width
            })?;
            let hidden = mask.bits().iter().zip(bar.bits()).filter(|(&a, &b)| a & b == 1).count();
            // A bar that would hide too much is left out of this frame.
            if (hidden as f64) <= MAX_OCCLUSION * mask.area() as f64 {
                paint(&mut frame, &bar, [occluder_gray; 3]);
                mask = Mask::from_fn(h, w, |y, x| mask.get(y, x) && !bar.get(y, x))?;
            }
        }
        clip.frames.push(Tensor::new([h, w, 3], frame)?);
        clip.masks.push(mask);
    }
    Ok(clip)
}

/// Settings shared by every clip of a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetSpec {
    pub height: usize,
    pub width: usize,
    pub clip_len: usize,
    pub distractors: usize,
    pub occluder: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            clip_len: 24,
            distractors: 2,
            occluder: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    /// Clip id such as `train-0003`.
    pub fn clip_id(self, index: usize) -> String {
        format!("{}-{index:04}", self.name())
    }
}

/// Clip `index` of `split`, a pure function of its arguments.
pub fn dataset_clip(spec: &DatasetSpec, seed: u64, split: Split, index: usize) -> Result<Clip> {
    let stream = match split {
        Split::Train => 1u64 << 32,
        Split::Val => 2u64 << 32,
    };
    let mut rng = Rng::new(seed).derive(stream + index as u64);
    let scene = SceneSpec::sample(spec.height, spec.width, spec.clip_len, spec.distractors, spec.occluder, &mut rng);
    generate_clip(&scene, spec.clip_len, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_scene_has_identical_masks() {
        let spec = SceneSpec::still(32, 32, 6.0);
        let clip = generate_clip(&spec, 5, &mut Rng::new(1)).unwrap();
        assert_eq!(clip.len(), 5);
        assert!(clip.masks.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn disc_area_matches_radius() {
        let spec = SceneSpec::still(64, 64, 8.0);
        let clip = generate_clip(&spec, 2, &mut Rng::new(0)).unwrap();
        let area = clip.masks[0].area() as f64;
        let pi = std::f64::consts::PI;
        assert!(area >= pi * 7.5 * 7.5 && area <= pi * 8.5 * 8.5, "{area}");
    }

    #[test]
    fn same_seed_same_clip() {
        let mut r = Rng::new(5);
        let spec = SceneSpec::sample(64, 64, 12, 2, true, &mut r);
        let a = generate_clip(&spec, 12, &mut Rng::new(9)).unwrap();
        let b = generate_clip(&spec, 12, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn leaving_the_canvas_is_rejected() {
        let mut spec = SceneSpec::still(32, 32, 4.0);
        spec.velocity = (0.0, 3.0);
        assert!(generate_clip(&spec, 10, &mut Rng::new(0)).is_err());
        assert!(generate_clip(&spec, 1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn sampled_scenes_are_valid_and_occlusion_is_bounded() {
        for seed in 0..40 {
            let mut r = Rng::new(seed);
            let spec = SceneSpec::sample(64, 64, 24, 3, true, &mut r);
            let clip = generate_clip(&spec, 24, &mut r).unwrap();
            for (f, m) in clip.masks.iter().enumerate() {
                let full = raster(64, 64, spec.kind, spec.size_at(f), spec.center(f));
                let hidden = full.area() - m.area();
                assert!(hidden as f64 <= MAX_OCCLUSION * full.area() as f64);
                assert!(m.bits().iter().zip(full.bits()).all(|(&a, &b)| a <= b));
            }
            for fr in &clip.frames {
                assert!(fr.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn mask_is_the_painted_object_color() {
        let mut r = Rng::new(2);
        let spec = SceneSpec::sample(48, 48, 4, 2, false, &mut r);
        let clip = generate_clip(&spec, 4, &mut r).unwrap();
        let m = &clip.masks[0];
        let fr = &clip.frames[0];
        for y in 0..48 {
            for x in 0..48 {
                if m.get(y, x) {
                    assert_eq!(fr.at(&[y, x, 0]), spec.color[0]);
                }
            }
        }
    }
}
