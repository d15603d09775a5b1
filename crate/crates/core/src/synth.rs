//! Synthetic scenes with exact ground truth.
//!
//! Scenes are a static background plus hard-edged rectangles and disks that
//! move with constant velocity (optionally constant acceleration). Rendering
//! is deterministic, so any instant can be reproduced exactly, and the
//! displacement of every visible surface between two instants is known in
//! closed form, including which pixels become occluded.
//!
//! Colors are kept on the 8-bit grid so a rendered frame survives a PPM
//! round trip unchanged.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_flo, write_image, write_mask};
use crate::types::{FlowField, Frame, Mask};

pub const DEFAULT_CANVAS: (usize, usize) = (64, 64);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Axis-aligned; the object position is its top-left corner.
    Rect { width: f64, height: f64 },
    /// The object position is its center.
    Disk { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Appearance {
    Solid { color: [f64; 3] },
    /// Checkerboard attached to the object, `cell` pixels per square.
    Checker { a: [f64; 3], b: [f64; 3], cell: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Background {
    Constant { color: [f64; 3] },
    /// Horizontal linear ramp, quantized to 8 bits.
    Ramp { left: [f64; 3], right: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: Shape,
    pub appearance: Appearance,
    /// `(x, y)` at t = 0.
    pub position: [f64; 2],
    /// Pixels per unit interval.
    pub velocity: [f64; 2],
    #[serde(default)]
    pub acceleration: [f64; 2],
}

impl SceneObject {
    pub fn position_at(&self, t: f64) -> [f64; 2] {
        [
            self.position[0] + self.velocity[0] * t + 0.5 * self.acceleration[0] * t * t,
            self.position[1] + self.velocity[1] * t + 0.5 * self.acceleration[1] * t * t,
        ]
    }

    /// Whether the continuous point `(x, y)` lies on the object at time `t`.
    pub fn covers(&self, x: f64, y: f64, t: f64) -> bool {
        let [px, py] = self.position_at(t);
        match self.shape {
            Shape::Rect { width, height } => x >= px && x < px + width && y >= py && y < py + height,
            Shape::Disk { radius } => (x - px).powi(2) + (y - py).powi(2) <= radius * radius,
        }
    }

    fn color(&self, x: f64, y: f64, t: f64) -> [f64; 3] {
        match self.appearance {
            Appearance::Solid { color } => color,
            Appearance::Checker { a, b, cell } => {
                let [px, py] = self.position_at(t);
                let (ox, oy) = match self.shape {
                    Shape::Rect { .. } => (px, py),
                    Shape::Disk { radius } => (px - radius, py - radius),
                };
                let cell = cell.max(1) as f64;
                let parity = ((x - ox) / cell).floor() + ((y - oy) / cell).floor();
                if parity.rem_euclid(2.0) == 0.0 {
                    a
                } else {
                    b
                }
            }
        }
    }

    fn in_bounds(&self, height: usize, width: usize, t: f64) -> bool {
        let [px, py] = self.position_at(t);
        let (w, h) = (width as f64, height as f64);
        match self.shape {
            Shape::Rect { width: rw, height: rh } => px >= 0.0 && py >= 0.0 && px + rw <= w && py + rh <= h,
            Shape::Disk { radius } => {
                px - radius >= 0.0 && py - radius >= 0.0 && px + radius <= w - 1.0 && py + radius <= h - 1.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub background: Background,
    /// Painter's order: later objects are drawn on top.
    pub objects: Vec<SceneObject>,
    pub seed: u64,
}

impl SceneSpec {
    /// Objects must be finite and inside the canvas at t = 0, 0.5 and 1.
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Scene("empty canvas".into()));
        }
        for (k, o) in self.objects.iter().enumerate() {
            let finite = o
                .position
                .iter()
                .chain(&o.velocity)
                .chain(&o.acceleration)
                .all(|v| v.is_finite());
            if !finite {
                return Err(Error::Scene(format!("object {k} has non-finite motion")));
            }
            for t in [0.0, 0.5, 1.0] {
                if !o.in_bounds(self.height, self.width, t) {
                    return Err(Error::Scene(format!("object {k} leaves the canvas at t = {t}")));
                }
            }
        }
        Ok(())
    }

    fn background_at(&self, x: usize) -> [f64; 3] {
        match self.background {
            Background::Constant { color } => color,
            Background::Ramp { left, right } => {
                let s = if self.width > 1 { x as f64 / (self.width - 1) as f64 } else { 0.0 };
                let q = |a: f64, b: f64| ((a + (b - a) * s) * 255.0).round() / 255.0;
                [q(left[0], right[0]), q(left[1], right[1]), q(left[2], right[2])]
            }
        }
    }

    /// Index of the topmost object at the continuous point `(x, y)`.
    pub fn surface_at(&self, x: f64, y: f64, t: f64) -> Option<usize> {
        self.objects.iter().rposition(|o| o.covers(x, y, t))
    }

    /// Topmost object per pixel at time `t` (`None` = background).
    pub fn surface_map(&self, t: f64) -> Vec<Option<usize>> {
        let mut ids = Vec::with_capacity(self.height * self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                ids.push(self.surface_at(x as f64, y as f64, t));
            }
        }
        ids
    }
}

/// Renders the scene at time `t` as a 3-channel frame.
pub fn render(spec: &SceneSpec, t: f64) -> Result<Frame> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Scene(format!("render time {t} outside [0, 1]")));
    }
    for (k, o) in spec.objects.iter().enumerate() {
        if !o.in_bounds(spec.height, spec.width, t) {
            return Err(Error::Scene(format!("object {k} is out of bounds at t = {t}")));
        }
    }
    let ids = spec.surface_map(t);
    let mut data = Vec::with_capacity(spec.height * spec.width * 3);
    for y in 0..spec.height {
        for x in 0..spec.width {
            let c = match ids[y * spec.width + x] {
                Some(k) => spec.objects[k].color(x as f64, y as f64, t),
                None => spec.background_at(x),
            };
            data.extend_from_slice(&c);
        }
    }
    Frame::new(spec.height, spec.width, 3, data)
}

/// Displacement from `t_a` to `t_b` of the surface visible at each pixel at
/// `t_a`, with a mask that is false where that surface is hidden or off-canvas
/// at `t_b`. The background is static.
pub fn ground_truth_flow(spec: &SceneSpec, t_a: f64, t_b: f64) -> Result<(FlowField, Mask)> {
    let (h, w) = (spec.height, spec.width);
    let ids = spec.surface_map(t_a);
    let mut flow = Vec::with_capacity(h * w * 2);
    let mut valid = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (disp, ok) = match ids[y * w + x] {
                None => ([0.0, 0.0], spec.surface_at(x as f64, y as f64, t_b).is_none()),
                Some(k) => {
                    let o = &spec.objects[k];
                    let (pa, pb) = (o.position_at(t_a), o.position_at(t_b));
                    let d = [pb[0] - pa[0], pb[1] - pa[1]];
                    let (qx, qy) = (x as f64 + d[0], y as f64 + d[1]);
                    let inside = qx >= 0.0 && qy >= 0.0 && qx <= (w - 1) as f64 && qy <= (h - 1) as f64;
                    (d, inside && spec.surface_at(qx, qy, t_b) == Some(k))
                }
            };
            flow.extend_from_slice(&disp);
            valid.push(ok);
        }
    }
    Ok((FlowField::new(h, w, flow)?, Mask::new(h, w, valid)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionClass {
    /// Every object moves at most 2 px per interval.
    Small,
    /// A dominant object moving 8 to 16 px per interval.
    Large,
    /// Adjacent textured halves of one body moving differently.
    NonRigid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub class: MotionClass,
    /// Some object accelerates, so linear flow scaling is only approximate.
    pub nonlinear: bool,
    pub spec: SceneSpec,
}

/// Frames at t = 0, 0.5, 1 and ground-truth flows between the end frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneData {
    pub frame0: Frame,
    pub frame_mid: Frame,
    pub frame1: Frame,
    pub flow_fwd: FlowField,
    pub flow_bwd: FlowField,
    pub valid_fwd: Mask,
    pub valid_bwd: Mask,
}

impl Scene {
    pub fn materialize(&self) -> Result<SceneData> {
        self.spec.validate()?;
        let (flow_fwd, valid_fwd) = ground_truth_flow(&self.spec, 0.0, 1.0)?;
        let (flow_bwd, valid_bwd) = ground_truth_flow(&self.spec, 1.0, 0.0)?;
        Ok(SceneData {
            frame0: render(&self.spec, 0.0)?,
            frame_mid: render(&self.spec, 0.5)?,
            frame1: render(&self.spec, 1.0)?,
            flow_fwd,
            flow_bwd,
            valid_fwd,
            valid_bwd,
        })
    }
}

fn color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [0, 1, 2].map(|_| rng.gen_range(20u32..=235) as f64 / 255.0)
}

fn appearance(rng: &mut ChaCha8Rng, textured: bool) -> Appearance {
    if textured {
        Appearance::Checker {
            a: color(rng),
            b: color(rng),
            cell: rng.gen_range(2..=5),
        }
    } else {
        Appearance::Solid { color: color(rng) }
    }
}

fn integer_velocity(rng: &mut ChaCha8Rng, min_norm: f64, max_norm: f64) -> [f64; 2] {
    let m = max_norm.floor() as i32;
    loop {
        let v = [rng.gen_range(-m..=m) as f64, rng.gen_range(-m..=m) as f64];
        let n = v[0].hypot(v[1]);
        if n >= min_norm && n <= max_norm {
            return v;
        }
    }
}

/// Places `object` at a random start position keeping it inside the canvas at
/// t = 0, 0.5 and 1. Gives up after a bounded number of tries.
fn place(rng: &mut ChaCha8Rng, mut object: SceneObject, h: usize, w: usize) -> Option<SceneObject> {
    for _ in 0..200 {
        object.position = [rng.gen_range(0..w) as f64, rng.gen_range(0..h) as f64];
        if [0.0, 0.5, 1.0].iter().all(|&t| object.in_bounds(h, w, t)) {
            return Some(object);
        }
    }
    None
}

fn random_shape(rng: &mut ChaCha8Rng, scale: f64) -> Shape {
    if rng.gen_bool(0.6) {
        Shape::Rect {
            width: (rng.gen_range(0.15..0.35) * scale).round().max(3.0),
            height: (rng.gen_range(0.15..0.35) * scale).round().max(3.0),
        }
    } else {
        Shape::Disk {
            radius: (rng.gen_range(0.08..0.16) * scale).round().max(2.0),
        }
    }
}

/// One random scene of the given class on an `h × w` canvas.
pub fn generate_scene(class: MotionClass, nonlinear: bool, seed: u64, h: usize, w: usize) -> Result<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = h.min(w) as f64;
    let background = if rng.gen_bool(0.5) {
        Background::Constant { color: color(&mut rng) }
    } else {
        Background::Ramp {
            left: color(&mut rng),
            right: color(&mut rng),
        }
    };
    for _attempt in 0..100 {
        let mut objects = Vec::new();
        let mut ok = true;
        let mut push = |rng: &mut ChaCha8Rng, o: SceneObject| match place(rng, o, h, w) {
            Some(o) => objects.push(o),
            None => ok = false,
        };
        match class {
            MotionClass::Small => {
                for _ in 0..rng.gen_range(1..=3) {
                    let o = SceneObject {
                        shape: random_shape(&mut rng, scale),
                        appearance: { let checker = rng.gen_bool(0.5); appearance(&mut rng, checker) },
                        position: [0.0; 2],
                        velocity: integer_velocity(&mut rng, 1.0, 2.0),
                        acceleration: [0.0; 2],
                    };
                    push(&mut rng, o);
                }
            }
            MotionClass::Large => {
                let o = SceneObject {
                    shape: random_shape(&mut rng, scale),
                    appearance: { let checker = rng.gen_bool(0.5); appearance(&mut rng, checker) },
                    position: [0.0; 2],
                    velocity: integer_velocity(&mut rng, 8.0, 16.0),
                    acceleration: [0.0; 2],
                };
                push(&mut rng, o);
                if rng.gen_bool(0.5) {
                    let o = SceneObject {
                        shape: random_shape(&mut rng, scale * 0.6),
                        appearance: appearance(&mut rng, false),
                        position: [0.0; 2],
                        velocity: integer_velocity(&mut rng, 1.0, 2.0),
                        acceleration: [0.0; 2],
                    };
                    push(&mut rng, o);
                }
            }
            MotionClass::NonRigid => {
                let half_w = (rng.gen_range(0.12..0.2) * scale).round().max(3.0);
                let body_h = (rng.gen_range(0.25..0.4) * scale).round().max(4.0);
                let v_left = integer_velocity(&mut rng, 1.0, 6.0);
                let v_right = loop {
                    let v = integer_velocity(&mut rng, 1.0, 6.0);
                    if (v[0] - v_left[0]).hypot(v[1] - v_left[1]) >= 2.0 {
                        break v;
                    }
                };
                let left = SceneObject {
                    shape: Shape::Rect { width: half_w, height: body_h },
                    appearance: appearance(&mut rng, true),
                    position: [0.0; 2],
                    velocity: v_left,
                    acceleration: [0.0; 2],
                };
                if let Some(left) = place(&mut rng, left, h, w) {
                    let right = SceneObject {
                        position: [left.position[0] + half_w, left.position[1]],
                        velocity: v_right,
                        appearance: appearance(&mut rng, true),
                        ..left
                    };
                    if [0.0, 0.5, 1.0].iter().all(|&t| right.in_bounds(h, w, t)) {
                        objects.push(left);
                        objects.push(right);
                    } else {
                        ok = false;
                    }
                } else {
                    ok = false;
                }
            }
        }
        if nonlinear && ok {
            if let Some(o) = objects.first_mut() {
                let a = integer_velocity(&mut rng, 2.0, 6.0);
                o.acceleration = a;
                if ![0.0, 0.5, 1.0].iter().all(|&t| o.in_bounds(h, w, t)) {
                    ok = false;
                }
            }
        }
        if ok {
            let spec = SceneSpec {
                height: h,
                width: w,
                background,
                objects,
                seed,
            };
            spec.validate()?;
            return Ok(spec);
        }
    }
    Err(Error::Scene(format!("could not place a {class:?} scene on a {h}x{w} canvas")))
}

/// Motion class of the `i`-th corpus scene; cycles so every class is present
/// once `n ≥ 3`.
pub fn corpus_class(i: usize) -> MotionClass {
    match i % 3 {
        0 => MotionClass::Small,
        1 => MotionClass::Large,
        _ => MotionClass::NonRigid,
    }
}

/// Every tenth scene accelerates.
pub fn corpus_nonlinear(i: usize) -> bool {
    i % 10 == 9
}

/// Deterministic corpus of `n` scene descriptions.
pub fn generate_corpus_specs(n: usize, seed: u64, h: usize, w: usize) -> Result<Vec<Scene>> {
    if n == 0 {
        return Err(Error::InvalidArgument("corpus size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let scene_seed = rng.next_u64();
            let class = corpus_class(i);
            let nonlinear = corpus_nonlinear(i);
            Ok(Scene {
                id: format!("scene_{i:04}"),
                class,
                nonlinear,
                spec: generate_scene(class, nonlinear, scene_seed, h, w)?,
            })
        })
        .collect()
}

/// Corpus scenes with their rendered frames and ground-truth flows.
pub fn generate_corpus(n: usize, seed: u64) -> Result<Vec<(Scene, SceneData)>> {
    let (h, w) = DEFAULT_CANVAS;
    generate_corpus_specs(n, seed, h, w)?
        .into_iter()
        .map(|s| {
            let d = s.materialize()?;
            Ok((s, d))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub scenes: Vec<Scene>,
}

pub const FRAME0_FILE: &str = "frame0.ppm";
pub const FRAME_MID_FILE: &str = "frame_mid.ppm";
pub const FRAME1_FILE: &str = "frame1.ppm";
pub const FLOW_FWD_FILE: &str = "flow_fwd.flo";
pub const FLOW_BWD_FILE: &str = "flow_bwd.flo";
pub const VALID_FWD_FILE: &str = "valid_fwd.pgm";
pub const VALID_BWD_FILE: &str = "valid_bwd.pgm";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes one scene's files into `dir`.
pub fn write_scene(dir: &Path, data: &SceneData) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(FRAME0_FILE), write_image(&data.frame0))?;
    fs::write(dir.join(FRAME_MID_FILE), write_image(&data.frame_mid))?;
    fs::write(dir.join(FRAME1_FILE), write_image(&data.frame1))?;
    fs::write(dir.join(FLOW_FWD_FILE), write_flo(&data.flow_fwd))?;
    fs::write(dir.join(FLOW_BWD_FILE), write_flo(&data.flow_bwd))?;
    fs::write(dir.join(VALID_FWD_FILE), write_mask(&data.valid_fwd))?;
    fs::write(dir.join(VALID_BWD_FILE), write_mask(&data.valid_bwd))?;
    Ok(())
}

/// Generates and persists a corpus: one directory per scene plus `manifest.json`.
pub fn write_corpus(dir: &Path, n: usize, seed: u64, h: usize, w: usize) -> Result<Manifest> {
    let scenes = generate_corpus_specs(n, seed, h, w)?;
    fs::create_dir_all(dir)?;
    for s in &scenes {
        write_scene(&dir.join(&s.id), &s.materialize()?)?;
    }
    let manifest = Manifest {
        seed,
        count: n,
        height: h,
        width: w,
        scenes,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    Ok(serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?)
}
