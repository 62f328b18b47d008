//! Generation by simulating
//!
//! ```text
//! dx = v(x, t) dt + g(t)·s(x, t) dt + sqrt(2·g(t)·γ) dW,   s = (t·v − x)/(1 − t)
//! ```
//!
//! from Gaussian noise at `t = 0` to data at `t = 1` with Euler–Maruyama on a
//! log-spaced grid, optionally with classifier-free guidance / autoguidance.

pub mod analytic;

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Backbone, FoldLabel};
use crate::model::{Denoiser, ModelInput, Motif};

pub use analytic::{GaussianField, MixtureField};

/// Context shared by every field evaluation at one integration step.
#[derive(Debug, Clone, Copy)]
pub struct FieldContext<'a> {
    pub label: FoldLabel,
    pub x_hat: Option<&'a Array3<f64>>,
    pub motif: Option<&'a Motif>,
}

impl FieldContext<'_> {
    pub fn unconditional() -> Self {
        Self {
            label: FoldLabel::null(),
            x_hat: None,
            motif: None,
        }
    }
}

/// A (possibly learned) velocity field over batched states `[B, L, d]`.
pub trait VectorField {
    fn velocity(&self, x: &Array3<f64>, t: f64, ctx: &FieldContext<'_>) -> Result<Array3<f64>>;

    /// Å per state unit; samples are multiplied by this before being returned as backbones.
    fn coordinate_scale(&self) -> f64 {
        1.0
    }
}

impl VectorField for Denoiser {
    fn velocity(&self, x: &Array3<f64>, t: f64, ctx: &FieldContext<'_>) -> Result<Array3<f64>> {
        let b = x.shape()[0];
        let times = vec![t; b];
        let labels = vec![ctx.label; b];
        let mut input = ModelInput::new(x, &times, &labels);
        input.x_hat = ctx.x_hat;
        input.motif = ctx.motif;
        self.predict_velocity(&input)
    }

    fn coordinate_scale(&self) -> f64 {
        self.config().angstrom_per_unit
    }
}

/// Discretization `0 = t_0 < … < t_N = 1`, log-spaced so steps shrink toward `t = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    pub times: Vec<f64>,
}

impl StepSchedule {
    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }
}

pub fn build_time_grid(n_steps: usize) -> Result<StepSchedule> {
    if n_steps < 2 {
        return Err(Error::InvalidArgument("time grid needs at least 2 steps".into()));
    }
    let n = n_steps as f64;
    // 1 − flip(logspace(−2, 0, N+1)), then shift to min 0 and scale to max 1.
    let mut t: Vec<f64> = (0..=n_steps)
        .map(|j| 1.0 - 10f64.powf(-2.0 + 2.0 * (n_steps - j) as f64 / n))
        .collect();
    let min = t.iter().cloned().fold(f64::INFINITY, f64::min);
    t.iter_mut().for_each(|v| *v -= min);
    let max = t.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    t.iter_mut().for_each(|v| *v /= max);
    Ok(StepSchedule { times: t })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// `1/(t + 0.01)`
    Main,
    /// `(1 − t)/(t + 0.01)`
    OneMinusT,
    /// `(π/2)·tan((1 − t)π/2)`, stabilized as `(π/2)·S/(C + 0.01)`
    Tan,
    /// Pure ODE.
    Zero,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "main" => Ok(Self::Main),
            "one-minus-t" | "one_minus_t" => Ok(Self::OneMinusT),
            "tan" => Ok(Self::Tan),
            "zero" => Ok(Self::Zero),
            other => Err(Error::InvalidArgument(format!("unknown schedule {other:?}"))),
        }
    }
}

/// Stochasticity schedule `g(t)`, zero past `cutoff`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticitySchedule {
    pub kind: ScheduleKind,
    pub cutoff: f64,
}

impl StochasticitySchedule {
    pub fn new(kind: ScheduleKind) -> Self {
        Self { kind, cutoff: 0.99 }
    }

    pub fn g(&self, t: f64) -> f64 {
        if t > self.cutoff {
            return 0.0;
        }
        match self.kind {
            ScheduleKind::Main => 1.0 / (t + 0.01),
            ScheduleKind::OneMinusT => (1.0 - t) / (t + 0.01),
            ScheduleKind::Tan => {
                let theta = (1.0 - t) * std::f64::consts::FRAC_PI_2;
                std::f64::consts::FRAC_PI_2 * theta.sin() / (theta.cos() + 0.01)
            }
            ScheduleKind::Zero => 0.0,
        }
    }
}

/// Score implied by a velocity for the Gaussian interpolant: `s = (t·v − x)/(1 − t)`.
pub fn score_from_velocity(v: &Array3<f64>, x: &Array3<f64>, t: f64) -> Result<Array3<f64>> {
    if !(t < 1.0) {
        return Err(Error::InvalidArgument(format!("score undefined at t = {t}")));
    }
    if v.shape() != x.shape() {
        return Err(Error::Shape("velocity and state shapes differ".into()));
    }
    Ok(Zip::from(v).and(x).map_collect(|&v, &x| (t * v - x) / (1.0 - t)))
}

/// `ω·v_c + (1−ω)·[(1−α)·v_u + α·v_bad]`.
pub fn guided_velocity(
    v_cond: &Array3<f64>,
    v_uncond: &Array3<f64>,
    v_bad: Option<&Array3<f64>>,
    omega: f64,
    alpha: f64,
) -> Result<Array3<f64>> {
    if v_cond.shape() != v_uncond.shape() {
        return Err(Error::Shape("guidance inputs differ in shape".into()));
    }
    match v_bad {
        Some(bad) => {
            if bad.shape() != v_cond.shape() {
                return Err(Error::Shape("guidance inputs differ in shape".into()));
            }
            Ok(Zip::from(v_cond)
                .and(v_uncond)
                .and(bad)
                .map_collect(|&c, &u, &b| omega * c + (1.0 - omega) * ((1.0 - alpha) * u + alpha * b)))
        }
        None if alpha > 0.0 => Err(Error::InvalidArgument("alpha > 0 requires a bad model".into())),
        None => Ok(Zip::from(v_cond)
            .and(v_uncond)
            .map_collect(|&c, &u| omega * c + (1.0 - omega) * u)),
    }
}

/// One Euler–Maruyama step. Drift uses `g` at `t_prev`, the noise term `g` at `t_next`.
#[allow(clippy::too_many_arguments)]
pub fn em_step<R: Rng + ?Sized>(
    x: &Array3<f64>,
    t_prev: f64,
    t_next: f64,
    v: &Array3<f64>,
    s: &Array3<f64>,
    g_drift: f64,
    g_noise: f64,
    gamma: f64,
    rng: &mut R,
) -> Result<Array3<f64>> {
    if !(t_next > t_prev) {
        return Err(Error::InvalidArgument("em_step needs t_next > t_prev".into()));
    }
    let delta = t_next - t_prev;
    let mut out = Zip::from(x).and(v).and(s).map_collect(|&x, &v, &s| x + (v + g_drift * s) * delta);
    let sigma = (2.0 * delta * g_noise * gamma).sqrt();
    if sigma > 0.0 {
        out.iter_mut().for_each(|o| *o += sigma * rng.sample::<f64, _>(StandardNormal));
    }
    Ok(out)
}

/// Guidance weights and, for autoguidance, the weaker model.
#[derive(Clone, Copy)]
pub struct GuidanceSpec<'a> {
    pub omega: f64,
    pub alpha: f64,
    pub label: FoldLabel,
    pub bad_model: Option<&'a dyn VectorField>,
}

impl<'a> GuidanceSpec<'a> {
    /// Plain conditional (or unconditional, for a null label) sampling.
    pub fn conditional(label: FoldLabel) -> Self {
        Self {
            omega: 1.0,
            alpha: 0.0,
            label,
            bad_model: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(Error::InvalidArgument("guidance weight must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument("alpha must be in [0, 1]".into()));
        }
        if self.alpha > 0.0 && self.bad_model.is_none() {
            return Err(Error::InvalidArgument("alpha > 0 requires a bad model".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_steps: usize,
    pub schedule: StochasticitySchedule,
    pub gamma: f64,
    pub self_conditioning: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_steps: 400,
            schedule: StochasticitySchedule::new(ScheduleKind::Main),
            gamma: 0.45,
            self_conditioning: false,
        }
    }
}

impl SamplerConfig {
    pub fn ode(n_steps: usize) -> Self {
        Self {
            n_steps,
            schedule: StochasticitySchedule::new(ScheduleKind::Zero),
            gamma: 0.0,
            self_conditioning: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    /// Final states `[B, L, d]` in field units.
    pub x: Array3<f64>,
    /// States at every grid time (`N + 1` entries) when recording was requested.
    pub trajectory: Option<Vec<Array3<f64>>>,
}

/// Integrates `batch` trajectories of shape `[L, dim]` from `N(0, I)`.
#[allow(clippy::too_many_arguments)]
pub fn sample_states<R: Rng + ?Sized>(
    model: &dyn VectorField,
    batch: usize,
    len: usize,
    dim: usize,
    guidance: &GuidanceSpec<'_>,
    config: &SamplerConfig,
    motif: Option<&Motif>,
    record: bool,
    rng: &mut R,
) -> Result<SampleOutput> {
    guidance.validate()?;
    if batch == 0 || len == 0 {
        return Err(Error::InvalidArgument("empty sample request".into()));
    }
    if !(config.gamma >= 0.0) {
        return Err(Error::InvalidArgument("gamma must be >= 0".into()));
    }
    let grid = build_time_grid(config.n_steps)?;
    let mut x = Array3::from_shape_simple_fn((batch, len, dim), || rng.sample::<f64, _>(StandardNormal));
    let mut trajectory = record.then(|| vec![x.clone()]);
    let mut x_hat: Option<Array3<f64>> = None;
    let null = FoldLabel::null();

    for n in 1..grid.times.len() {
        let (t_prev, t_next) = (grid.times[n - 1], grid.times[n]);
        let ctx = FieldContext {
            label: guidance.label,
            x_hat: x_hat.as_ref(),
            motif,
        };
        let v_cond = model.velocity(&x, t_prev, &ctx)?;
        let v = if guidance.omega == 1.0 {
            v_cond.clone()
        } else {
            let v_bad = match (guidance.alpha > 0.0, guidance.bad_model) {
                (true, Some(bad)) => Some(bad.velocity(&x, t_prev, &ctx)?),
                _ => None,
            };
            let v_uncond = if guidance.alpha < 1.0 {
                model.velocity(&x, t_prev, &FieldContext { label: null, ..ctx })?
            } else {
                v_cond.clone()
            };
            guided_velocity(&v_cond, &v_uncond, v_bad.as_ref(), guidance.omega, guidance.alpha)?
        };
        let g_drift = config.schedule.g(t_prev);
        let g_noise = config.schedule.g(t_next);
        let s = if g_drift > 0.0 {
            score_from_velocity(&v, &x, t_prev)?
        } else {
            Array3::zeros(x.raw_dim())
        };
        if config.self_conditioning {
            let mut xh = x.clone();
            xh.scaled_add(1.0 - t_prev, &v_cond);
            x_hat = Some(xh);
        }
        x = em_step(&x, t_prev, t_next, &v, &s, g_drift, g_noise, config.gamma, rng)?;
        if x.iter().any(|v| !v.is_finite()) {
            let norm = x.iter().filter(|v| v.is_finite()).map(|v| v * v).sum::<f64>().sqrt();
            return Err(Error::NonFinite(format!(
                "trajectory diverged at step {n} (t = {t_next:.4}, finite-part norm {norm:.3e})"
            )));
        }
        if let Some(tr) = trajectory.as_mut() {
            tr.push(x.clone());
        }
    }
    Ok(SampleOutput { x, trajectory })
}

/// Samples `batch` backbones of length `len` (coordinates in Å).
pub fn sample_backbones<R: Rng + ?Sized>(
    model: &dyn VectorField,
    batch: usize,
    len: usize,
    guidance: &GuidanceSpec<'_>,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Vec<Backbone>> {
    let out = sample_states(model, batch, len, 3, guidance, config, None, false, rng)?;
    states_to_backbones(&out.x, model.coordinate_scale())
}

pub fn states_to_backbones(x: &Array3<f64>, scale: f64) -> Result<Vec<Backbone>> {
    (0..x.shape()[0])
        .map(|b| {
            let coords: Array2<f64> = x.index_axis(ndarray::Axis(0), b).mapv(|v| v * scale);
            Backbone::new(coords)
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryManifest {
    format_version: u32,
    n_frames: usize,
    shape: [usize; 3],
    dtype: String,
    times: Vec<f64>,
}

/// Writes a trajectory as `trajectory.bin` (f64 little-endian, frame-major) plus `trajectory.json`.
pub fn write_trajectory(dir: &Path, frames: &[Array3<f64>], times: &[f64]) -> Result<()> {
    let first = frames.first().ok_or_else(|| Error::InvalidArgument("empty trajectory".into()))?;
    if frames.len() != times.len() {
        return Err(Error::Shape("one time per frame required".into()));
    }
    fs::create_dir_all(dir)?;
    let shape = [first.shape()[0], first.shape()[1], first.shape()[2]];
    let mut blob = Vec::with_capacity(frames.len() * first.len() * 8);
    for f in frames {
        if f.shape() != first.shape() {
            return Err(Error::Shape("trajectory frames differ in shape".into()));
        }
        for v in f.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join("trajectory.bin"), blob)?;
    let manifest = TrajectoryManifest {
        format_version: 1,
        n_frames: frames.len(),
        shape,
        dtype: "f64".into(),
        times: times.to_vec(),
    };
    fs::write(dir.join("trajectory.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_trajectory(dir: &Path) -> Result<(Vec<Array3<f64>>, Vec<f64>)> {
    let manifest: TrajectoryManifest = serde_json::from_slice(&fs::read(dir.join("trajectory.json"))?)?;
    let blob = fs::read(dir.join("trajectory.bin"))?;
    let per = manifest.shape.iter().product::<usize>();
    if blob.len() != manifest.n_frames * per * 8 {
        return Err(Error::Format("trajectory blob size mismatch".into()));
    }
    let values: Vec<f64> = blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let frames = values
        .chunks(per)
        .map(|c| Array3::from_shape_vec(manifest.shape, c.to_vec()).expect("size checked"))
        .collect();
    Ok((frames, manifest.times))
}
