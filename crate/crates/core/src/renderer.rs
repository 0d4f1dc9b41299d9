//! Top-down grayscale rasterization of the scene, four-frame stacking and
//! the low-dimensional feature observation.

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ddqn::InputShape;
use crate::sim_env::{EnvConfig, Peg, Rect, SceneState};

pub const STACK_LEN: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("region of interest must have positive area")]
    EmptyRoi,
    #[error("resolution must be at least 1x1")]
    EmptyResolution,
    #[error("frame is {got:?}, stack holds {expected:?}")]
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intensities {
    pub background: u8,
    pub peg: u8,
    pub target: u8,
    pub gripper: u8,
}

impl Default for Intensities {
    fn default() -> Self {
        Self { background: 0, peg: 200, target: 255, gripper: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub roi: Rect,
    pub width: usize,
    pub height: usize,
    pub intensities: Intensities,
    /// Gripper glyph: two bars of this length (mm) along the roll direction.
    pub jaw_length: f64,
    pub jaw_width: f64,
    /// Centre-to-centre spacing of the two bars (mm).
    pub jaw_gap: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            roi: EnvConfig::default().workspace,
            width: 84,
            height: 84,
            intensities: Intensities::default(),
            jaw_length: 8.0,
            jaw_width: 2.0,
            jaw_gap: 6.0,
        }
    }
}

impl RenderConfig {
    pub fn with_resolution(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.roi.width() > 0.0 && self.roi.height() > 0.0) {
            return Err(RenderError::EmptyRoi);
        }
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::EmptyResolution);
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first (largest y).
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.pixels[row * self.width + col]
    }

    /// Binary PGM (P5).
    pub fn write_pgm<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.pixels)
    }
}

/// Dump path for tick `tick` under `dir`: `frame_000042.pgm`.
pub fn pgm_path(dir: &Path, tick: u64) -> PathBuf {
    dir.join(format!("frame_{tick:06}.pgm"))
}

fn paint(frame: &mut Frame, roi: &Rect, value: u8, inside: impl Fn(f64, f64) -> bool) {
    let sx = roi.width() / frame.width as f64;
    let sy = roi.height() / frame.height as f64;
    for row in 0..frame.height {
        let y = roi.y_max - (row as f64 + 0.5) * sy;
        for col in 0..frame.width {
            let x = roi.x_min + (col as f64 + 0.5) * sx;
            if inside(x, y) {
                frame.pixels[row * frame.width + col] = value;
            }
        }
    }
}

fn paint_peg(frame: &mut Frame, roi: &Rect, peg: &Peg, value: u8) {
    paint(frame, roi, value, |x, y| peg.contains(x, y));
}

/// Orthographic top-down rasterization with hard edges.
///
/// Draw order: distractor pegs, target peg, gripper glyph.
pub fn render(state: &SceneState, config: &RenderConfig) -> Result<Frame, RenderError> {
    config.validate()?;
    let ints = &config.intensities;
    let mut frame = Frame::filled(config.width, config.height, ints.background);
    for (i, peg) in state.pegs.iter().enumerate() {
        if i != state.target_index {
            paint_peg(&mut frame, &config.roi, peg, ints.peg);
        }
    }
    if let Some(t) = state.pegs.get(state.target_index) {
        paint_peg(&mut frame, &config.roi, t, ints.target);
    }
    let g = state.gripper;
    let (s, c) = g.roll.sin_cos();
    let half_len = config.jaw_length / 2.0;
    let half_w = config.jaw_width / 2.0;
    let off = config.jaw_gap / 2.0;
    paint(&mut frame, &config.roi, ints.gripper, |x, y| {
        let (rx, ry) = (x - g.x, y - g.y);
        let u = rx * c + ry * s;
        let v = -rx * s + ry * c;
        u.abs() <= half_len && ((v - off).abs() <= half_w || (v + off).abs() <= half_w)
    });
    Ok(frame)
}

/// The last four frames, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameStack {
    frames: [Arc<Frame>; STACK_LEN],
}

impl FrameStack {
    /// Episode start: the first frame replicated four times.
    pub fn init(frame: Frame) -> Self {
        let f = Arc::new(frame);
        Self { frames: [f.clone(), f.clone(), f.clone(), f] }
    }

    pub fn frames(&self) -> &[Arc<Frame>; STACK_LEN] {
        &self.frames
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.frames[0].width, self.frames[0].height)
    }

    /// Drops the oldest frame and appends `frame`.
    pub fn push(&self, frame: Frame) -> Result<Self, RenderError> {
        let got = (frame.width, frame.height);
        if got != self.dims() {
            return Err(RenderError::DimensionMismatch { expected: self.dims(), got });
        }
        let [_, b, c, d] = self.frames.clone();
        Ok(Self { frames: [b, c, d, Arc::new(frame)] })
    }

    /// Channel-major `4 × H × W` tensor scaled to [0, 1].
    pub fn to_input(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(STACK_LEN * self.frames[0].pixels.len());
        for f in &self.frames {
            out.extend(f.pixels.iter().map(|&p| f32::from(p) / 255.0));
        }
        out
    }
}

pub const FEATURE_LEN: usize = 6;

/// Low-dimensional observation: target offset, distance, signed and unsigned
/// orientation error and a threshold-zone flag.
pub fn features(state: &SceneState, env: &EnvConfig) -> [f32; FEATURE_LEN] {
    const SCALE: f64 = 100.0;
    let t = state.target();
    let d = state.distance_to_target();
    [
        ((t.x - state.gripper.x) / SCALE) as f32,
        ((t.y - state.gripper.y) / SCALE) as f32,
        (d / SCALE) as f32,
        (state.alignment_error() / FRAC_PI_2) as f32,
        (state.delta_theta() / FRAC_PI_2) as f32,
        if d <= env.d_threshold { 1.0 } else { 0.0 },
    ]
}

/// What the agent sees.
#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    Features(Arc<[f32]>),
    Frames(FrameStack),
}

impl Observation {
    pub fn to_input(&self) -> Vec<f32> {
        match self {
            Observation::Features(v) => v.to_vec(),
            Observation::Frames(s) => s.to_input(),
        }
    }
}

/// Turns scenes into observations across an episode.
pub trait Observer {
    fn input_shape(&self) -> InputShape;
    /// First observation of an episode.
    fn begin(&mut self, scene: &SceneState, env: &EnvConfig) -> Result<Observation, RenderError>;
    fn observe(&mut self, scene: &SceneState, env: &EnvConfig) -> Result<Observation, RenderError>;
}

#[derive(Clone, Debug, Default)]
pub struct FeatureObserver;

impl Observer for FeatureObserver {
    fn input_shape(&self) -> InputShape {
        InputShape::Flat(FEATURE_LEN)
    }

    fn begin(&mut self, scene: &SceneState, env: &EnvConfig) -> Result<Observation, RenderError> {
        self.observe(scene, env)
    }

    fn observe(&mut self, scene: &SceneState, env: &EnvConfig) -> Result<Observation, RenderError> {
        Ok(Observation::Features(Arc::from(features(scene, env).as_slice())))
    }
}

#[derive(Clone, Debug)]
pub struct FrameObserver {
    config: RenderConfig,
    stack: Option<FrameStack>,
}

impl FrameObserver {
    pub fn new(config: RenderConfig) -> Result<Self, RenderError> {
        config.validate()?;
        Ok(Self { config, stack: None })
    }

    pub fn config(&self) -> &RenderConfig {
        &self.config
    }
}

impl Observer for FrameObserver {
    fn input_shape(&self) -> InputShape {
        InputShape::Image { channels: STACK_LEN, height: self.config.height, width: self.config.width }
    }

    fn begin(&mut self, scene: &SceneState, _env: &EnvConfig) -> Result<Observation, RenderError> {
        let stack = FrameStack::init(render(scene, &self.config)?);
        self.stack = Some(stack.clone());
        Ok(Observation::Frames(stack))
    }

    fn observe(&mut self, scene: &SceneState, env: &EnvConfig) -> Result<Observation, RenderError> {
        let frame = render(scene, &self.config)?;
        let stack = match &self.stack {
            Some(s) => s.push(frame)?,
            None => return self.begin(scene, env),
        };
        self.stack = Some(stack.clone());
        Ok(Observation::Frames(stack))
    }
}

/// ASCII preview, one character per pixel; handy in test failure output.
pub fn ascii(frame: &Frame) -> String {
    let mut s = String::with_capacity((frame.width + 1) * frame.height);
    for row in 0..frame.height {
        for col in 0..frame.width {
            let c = match frame.get(col, row) {
                0 => '.',
                1..=150 => 'g',
                151..=254 => 'p',
                _ => 'T',
            };
            s.push(c);
        }
        let _ = writeln!(s);
    }
    s
}
