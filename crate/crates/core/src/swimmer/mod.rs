//! Carangiform swimmer: body profile, structured mesh, actuator layout and the travelling-wave controller.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::softbody::Mesh;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActuationSpec {
    /// Amplitude constant `C` in 1/m.
    pub amplitude: f64,
    /// Wave number in rad/m; `None` means one wavelength per body, `2 pi / L`.
    #[serde(default)]
    pub wave_number: Option<f64>,
    /// Activation time in seconds.
    pub activation_time: f64,
}

impl Default for ActuationSpec {
    fn default() -> Self {
        ActuationSpec { amplitude: 2.0, wave_number: None, activation_time: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwimmerSpec {
    /// Body length in metres.
    pub length: f64,
    /// Half-width `c(X) = L * (a0 + a1 s + a2 s^2 + a3 s^3)` with `s = 1 - X/L`; the tail is at `X = 0`.
    pub profile: [f64; 4],
    /// Quad cells along the body and across it.
    pub resolution: [usize; 2],
    /// Actuated quad rows on each side, counted from the surface.
    pub actuated_rows: usize,
    pub actuation: ActuationSpec,
}

impl Default for SwimmerSpec {
    fn default() -> Self {
        SwimmerSpec {
            length: 0.2,
            profile: [0.04, 0.26, -0.56, 0.28],
            resolution: [40, 8],
            actuated_rows: 1,
            actuation: ActuationSpec::default(),
        }
    }
}

impl SwimmerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.length > 0.0 && self.length.is_finite()) {
            return Err(Error::Config(format!("body length must be positive, got {}", self.length)));
        }
        let [nx, ny] = self.resolution;
        if nx < 8 || ny < 4 {
            return Err(Error::Config(format!("mesh resolution must be at least 8x4, got {nx}x{ny}")));
        }
        if self.actuated_rows == 0 || 2 * self.actuated_rows > ny {
            return Err(Error::Config(format!("actuated_rows must be in 1..={}", ny / 2)));
        }
        if !(self.actuation.activation_time > 0.0) || !self.actuation.amplitude.is_finite() {
            return Err(Error::Config("activation time must be positive and amplitude finite".into()));
        }
        Ok(())
    }

    pub fn wave_number(&self) -> f64 {
        self.actuation.wave_number.unwrap_or(2.0 * PI / self.length)
    }

    /// Half-width at station `X`, clamped below at `1e-3 L`.
    pub fn half_width(&self, x: f64) -> f64 {
        let l = self.length;
        let s = 1.0 - x / l;
        let [a0, a1, a2, a3] = self.profile;
        (l * (a0 + s * (a1 + s * (a2 + s * a3)))).max(1e-3 * l)
    }
}

/// Envelope of maximum lateral displacement, `v(X) = 4/(25L) X^2 - 6/25 X + L/10`.
pub fn envelope(x: f64, length: f64) -> Result<f64> {
    if !(0.0..=length).contains(&x) {
        return Err(Error::InvalidArgument(format!("station {x} outside [0, {length}]")));
    }
    Ok(4.0 / (25.0 * length) * x * x - 6.0 / 25.0 * x + length / 10.0)
}

fn ramp(t: f64, ta: f64) -> f64 {
    -(-t / ta).exp_m1()
}

/// `h(X, t) = C v(X) sin(gamma X + omega t) (1 - exp(-t / t_a))`.
pub fn actuation_signal(x: f64, t: f64, omega: f64, spec: &SwimmerSpec) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("time must be non-negative, got {t}")));
    }
    let a = &spec.actuation;
    let v = envelope(x, spec.length)?;
    Ok(a.amplitude * v * (spec.wave_number() * x + omega * t).sin() * ramp(t, a.activation_time))
}

/// Which elements are driven and how.
#[derive(Clone, Debug, PartialEq)]
pub struct ActuatorMap {
    /// Rest x-coordinate of each quad column centroid.
    pub stations: Vec<f64>,
    /// `(element, station index, sign)`; the sign is -1 on the top side and +1 on the bottom.
    pub elements: Vec<(usize, usize, f64)>,
    pub n_elements: usize,
}

impl ActuatorMap {
    /// Per-element rest-length strain from per-station signals.
    pub fn strains(&self, signals: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_elements];
        for &(e, s, sign) in &self.elements {
            out[e] = sign * signals[s];
        }
        out
    }

    /// Taped [`ActuatorMap::strains`].
    pub fn strains_var(&self, tape: &mut Tape, signals: Var) -> Var {
        let idx: Vec<usize> = self.elements.iter().map(|e| e.1).collect();
        let picked = tape.gather(signals, &idx);
        let signs = tape.constant(Tensor::vector(self.elements.iter().map(|e| e.2).collect()));
        let signed = tape.mul(picked, signs);
        let targets: Vec<usize> = self.elements.iter().map(|e| e.0).collect();
        tape.scatter_add(signed, &targets, self.n_elements)
    }
}

/// Structured body mesh and its actuators.
#[derive(Clone, Debug)]
pub struct SwimmerBody {
    pub mesh: Mesh,
    pub actuators: ActuatorMap,
    /// Node indices of the head column (at `X = L`).
    pub head_nodes: Vec<usize>,
}

/// Meshes the region `|Y| <= c(X)`, `0 <= X <= L` with `nx x ny` quads split into triangles.
///
/// Nodes are numbered column by column (`i * (ny + 1) + j`), which keeps the stiffness band narrow.
pub fn build_profile_mesh(spec: &SwimmerSpec) -> Result<SwimmerBody> {
    spec.validate()?;
    let [nx, ny] = spec.resolution;
    let l = spec.length;
    let node = |i: usize, j: usize| i * (ny + 1) + j;
    let mut rest = Vec::with_capacity((nx + 1) * (ny + 1));
    for i in 0..=nx {
        let x = l * i as f64 / nx as f64;
        let c = spec.half_width(x);
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Degenerate(format!("profile has zero width at X = {x}")));
        }
        for j in 0..=ny {
            rest.push([x, c * (2.0 * j as f64 / ny as f64 - 1.0)]);
        }
    }
    let mut tris = Vec::with_capacity(2 * nx * ny);
    let mut elements = Vec::new();
    let rows = spec.actuated_rows;
    for i in 0..nx {
        for j in 0..ny {
            let (a, b, c, d) = (node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1));
            let first = tris.len();
            tris.push([a, b, c]);
            tris.push([a, c, d]);
            let sign = if j < rows {
                Some(1.0)
            } else if j >= ny - rows {
                Some(-1.0)
            } else {
                None
            };
            if let Some(s) = sign {
                elements.push((first, i, s));
                elements.push((first + 1, i, s));
            }
        }
    }
    let mut surface = Vec::with_capacity(2 * (nx + ny));
    surface.extend((0..nx).map(|i| node(i, 0)));
    surface.extend((0..ny).map(|j| node(nx, j)));
    surface.extend((1..=nx).rev().map(|i| node(i, ny)));
    surface.extend((1..=ny).rev().map(|j| node(0, j)));
    let mesh = Mesh::new(rest, tris, surface)?;
    let stations = (0..nx).map(|i| l * (i as f64 + 0.5) / nx as f64).collect();
    let n_elements = mesh.n_elements();
    Ok(SwimmerBody {
        mesh,
        actuators: ActuatorMap { stations, elements, n_elements },
        head_nodes: (0..=ny).map(|j| node(nx, j)).collect(),
    })
}

/// Travelling-wave controller with a single parameter, the angular frequency.
#[derive(Clone, Debug)]
pub struct Controller {
    pub spec: SwimmerSpec,
    envelope: Vec<f64>,
    phase: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    /// Angular frequency in rad/s.
    pub omega: f64,
}

impl ControllerParams {
    pub fn from_hz(hz: f64) -> ControllerParams {
        ControllerParams { omega: 2.0 * PI * hz }
    }

    pub fn hz(&self) -> f64 {
        self.omega / (2.0 * PI)
    }
}

impl Controller {
    pub fn new(spec: &SwimmerSpec, stations: &[f64]) -> Result<Controller> {
        let c = spec.actuation.amplitude;
        let envelope = stations.iter().map(|&x| envelope(x, spec.length).map(|v| c * v)).collect::<Result<_>>()?;
        let phase = stations.iter().map(|&x| spec.wave_number() * x).collect();
        Ok(Controller { spec: spec.clone(), envelope, phase })
    }

    pub fn n_stations(&self) -> usize {
        self.phase.len()
    }

    /// Signal at every station.
    pub fn signals(&self, params: &ControllerParams, t: f64) -> Vec<f64> {
        let r = ramp(t, self.spec.actuation.activation_time);
        self.envelope.iter().zip(&self.phase).map(|(a, ph)| (ph + params.omega * t).sin() * (a * r)).collect()
    }

    /// Taped station signals for a scalar `omega` leaf.
    pub fn signals_var(&self, tape: &mut Tape, omega: Var, t: f64) -> Var {
        let r = ramp(t, self.spec.actuation.activation_time);
        let wt = tape.scale(omega, t);
        let wt = tape.expand(wt, &[self.n_stations()]);
        let ph = tape.constant(Tensor::vector(self.phase.clone()));
        let arg = tape.add(wt, ph);
        let s = tape.sin(arg);
        let amp = tape.constant(Tensor::vector(self.envelope.iter().map(|a| a * r).collect()));
        tape.mul(s, amp)
    }

    /// `dh/domega` at every station.
    pub fn signals_domega(&self, params: &ControllerParams, t: f64) -> Vec<f64> {
        let r = ramp(t, self.spec.actuation.activation_time);
        self.envelope.iter().zip(&self.phase).map(|(a, ph)| a * t * (ph + params.omega * t).cos() * r).collect()
    }
}

#[cfg(test)]
mod tests;
