use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::grid::MacGrid;
use super::state::FluidState;
use crate::autodiff::{Padding, Tape, Tensor, Var};
use crate::coupling::{BcVars, BoundaryCondition};
use crate::error::{Error, Result};

/// Number of input channels: curl, pressure, mask, boundary vx, boundary vy.
pub const IN_CHANNELS: usize = 5;
const OUT_CHANNELS: usize = 2;
const MAGIC: &[u8; 8] = b"SSWNET\0\0";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    /// Channel width of each encoder level; the length is the number of levels.
    pub widths: Vec<usize>,
    /// Odd convolution kernel size.
    pub kernel: usize,
    pub padding: Padding,
    /// Curl normalization and output step, m^2/s.
    pub a_scale: f64,
    /// Pressure normalization and output step, Pa.
    pub p_scale: f64,
    /// Boundary velocity normalization, m/s.
    pub v_scale: f64,
    /// Standard deviation multiplier for the output layer at initialization.
    pub head_init: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            widths: vec![20, 40, 80],
            kernel: 3,
            padding: Padding::Zero,
            a_scale: 2.5e-4,
            p_scale: 1.0,
            v_scale: 0.05,
            head_init: 0.1,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("network needs at least one level of non-zero width".into()));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel size must be odd, got {}", self.kernel)));
        }
        if [self.a_scale, self.p_scale, self.v_scale].iter().any(|s| !(*s > 0.0)) || !(self.head_init >= 0.0) {
            return Err(Error::Config("network scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LayerSpec {
    name: String,
    weight: Vec<usize>,
    bias: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Encoder-decoder with skip connections predicting the next curl and pressure.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateNet {
    pub config: NetConfig,
    pub layers: Vec<ConvLayer>,
}

/// Network weights on a tape, in layer order.
#[derive(Clone, Debug)]
pub struct NetVars {
    pub layers: Vec<(Var, Var)>,
}

fn layer_specs(config: &NetConfig) -> Vec<LayerSpec> {
    let k = config.kernel;
    let w = &config.widths;
    let mut out = Vec::new();
    let mut conv = |name: String, o: usize, c: usize, k: usize| {
        out.push(LayerSpec { name, weight: vec![o, c, k, k], bias: vec![o] })
    };
    let mut c_in = IN_CHANNELS;
    for (l, &wl) in w.iter().enumerate() {
        conv(format!("enc{l}a"), wl, c_in, k);
        conv(format!("enc{l}b"), wl, wl, k);
        c_in = wl;
    }
    for l in (0..w.len() - 1).rev() {
        conv(format!("dec{l}a"), w[l], w[l + 1] + w[l], k);
        conv(format!("dec{l}b"), w[l], w[l], k);
    }
    conv("head".into(), OUT_CHANNELS, w[0], 1);
    out
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: NetConfig,
    layers: Vec<LayerSpec>,
}

impl SurrogateNet {
    /// He-initialized weights, zero biases, a small output layer.
    pub fn new(config: NetConfig, seed: u64) -> Result<SurrogateNet> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_specs(&config)
            .into_iter()
            .map(|s| {
                let fan_in = (s.weight[1] * s.weight[2] * s.weight[3]) as f64;
                let std = if s.name == "head" { config.head_init / fan_in.sqrt() } else { (2.0 / fan_in).sqrt() };
                let n: usize = s.weight.iter().product();
                let data = if std > 0.0 {
                    let dist = Normal::new(0.0, std).expect("finite std");
                    (0..n).map(|_| dist.sample(&mut rng)).collect()
                } else {
                    vec![0.0; n]
                };
                ConvLayer { name: s.name, weight: Tensor::new(s.weight, data), bias: Tensor::zeros(&s.bias) }
            })
            .collect();
        Ok(SurrogateNet { config, layers })
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Weights as leaves (for training) or constants (for rollouts).
    pub fn vars(&self, tape: &mut Tape, trainable: bool) -> NetVars {
        let mut put = |t: &Tensor| if trainable { tape.leaf(t.clone()) } else { tape.constant(t.clone()) };
        NetVars { layers: self.layers.iter().map(|l| (put(&l.weight), put(&l.bias))).collect() }
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Raw network map `[n, 5, H, W] -> [n, 2, H, W]`.
    pub fn forward(&self, tape: &mut Tape, w: &NetVars, x: Var) -> Var {
        let pad = self.config.padding;
        let wrap = pad == Padding::Wrap;
        let levels = self.config.widths.len();
        let mut it = w.layers.iter().copied();
        let mut conv_act = |tape: &mut Tape, x: Var| {
            let (wt, b) = it.next().expect("layer count");
            let y = tape.conv2d(x, wt, b, pad);
            tape.silu(y)
        };
        let mut skips = Vec::with_capacity(levels);
        let mut h = x;
        for l in 0..levels {
            if l > 0 {
                h = tape.avg_pool2(h);
            }
            h = conv_act(tape, h);
            h = conv_act(tape, h);
            skips.push(h);
        }
        for l in (0..levels - 1).rev() {
            let s = tape.shape(skips[l]).to_vec();
            let up = tape.upsample2(h, s[2], s[3], wrap);
            let cat = tape.concat(&[up, skips[l]], 1);
            h = conv_act(tape, cat);
            h = conv_act(tape, h);
        }
        let (wt, b) = *w.layers.last().expect("head layer");
        tape.conv2d(h, wt, b, pad)
    }

    /// Stacks the five normalized input channels on the corner grid, `[1, 5, ny+1, nx+1]`.
    pub fn input_channels(&self, tape: &mut Tape, a: Var, p: Var, bc: &BcVars, grid: &MacGrid) -> Var {
        let c = &self.config;
        let (hh, ww) = (grid.ny + 1, grid.nx + 1);
        let ch_a = tape.scale(a, 1.0 / c.a_scale);
        let ch_p = tape.pad2d(p, (0, 1, 0, 1), Padding::Edge);
        let ch_p = tape.scale(ch_p, 1.0 / c.p_scale);
        let ch_b = tape.pad2d(bc.b, (0, 1, 0, 1), Padding::Edge);
        let ch_vx = tape.pad2d(bc.vd_x, (0, 1, 0, 0), Padding::Edge);
        let ch_vx = tape.scale(ch_vx, 1.0 / c.v_scale);
        let ch_vy = tape.pad2d(bc.vd_y, (0, 0, 0, 1), Padding::Edge);
        let ch_vy = tape.scale(ch_vy, 1.0 / c.v_scale);
        let chans: Vec<Var> =
            [ch_a, ch_p, ch_b, ch_vx, ch_vy].iter().map(|&v| tape.reshape(v, &[1, 1, hh, ww])).collect();
        tape.concat(&chans, 1)
    }

    /// One predicted fluid step on the tape.
    ///
    /// The pressure is shifted to zero mean over cells with `b < 0.5`.
    pub fn predict_var(
        &self,
        tape: &mut Tape,
        w: &NetVars,
        a: Var,
        p: Var,
        bc: &BcVars,
        grid: &MacGrid,
    ) -> Result<(Var, Var)> {
        if tape.shape(a) != grid.corner_shape() || tape.shape(p) != grid.center_shape() {
            return Err(Error::Shape(format!(
                "fluid state {:?}/{:?} does not match grid {}x{}",
                tape.shape(a),
                tape.shape(p),
                grid.nx,
                grid.ny
            )));
        }
        let (nx, ny) = (grid.nx, grid.ny);
        let (hh, ww) = (ny + 1, nx + 1);
        let x = self.input_channels(tape, a, p, bc, grid);
        let out = self.forward(tape, w, x);
        let out = tape.reshape(out, &[2 * hh, ww]);
        let da = tape.crop2d(out, 0, 0, hh, ww);
        let da = tape.scale(da, self.config.a_scale);
        let a1 = tape.add(a, da);
        let dp = tape.crop2d(out, hh, 0, ny, nx);
        let dp = tape.scale(dp, self.config.p_scale);
        let p1 = tape.add(p, dp);
        let fluid: Vec<f64> = tape.value(bc.b).data().iter().map(|&b| if b < 0.5 { 1.0 } else { 0.0 }).collect();
        let count: f64 = fluid.iter().sum();
        if count == 0.0 {
            return Err(Error::InvalidArgument("no fluid cells to normalize pressure over".into()));
        }
        let wv = tape.constant(Tensor::new(grid.center_shape().to_vec(), fluid));
        let mean = tape.dot(p1, wv);
        let mean = tape.scale(mean, 1.0 / count);
        let mean = tape.expand(mean, &grid.center_shape());
        let p1 = tape.sub(p1, mean);
        tape.check()?;
        Ok((a1, p1))
    }

    /// Untaped single prediction.
    pub fn predict_step(&self, state: &FluidState, bc: &BoundaryCondition, grid: &MacGrid) -> Result<FluidState> {
        state.check_shape(grid)?;
        bc.check_shape(grid)?;
        let mut tape = Tape::new();
        let w = self.vars(&mut tape, false);
        let a = tape.constant(state.a.clone());
        let p = tape.constant(state.p.clone());
        let bcv = bc.constants(&mut tape);
        let (a1, p1) = self.predict_var(&mut tape, &w, a, p, &bcv, grid)?;
        Ok(FluidState { a: tape.value(a1).clone(), p: tape.value(p1).clone() })
    }

    /// Writes magic, version, a JSON manifest and little-endian `f32` weights.
    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = Manifest { config: self.config.clone(), layers: layer_specs(&self.config) };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::format(path, e.to_string()))?;
        let mut buf = Vec::with_capacity(16 + json.len() + 4 * self.n_params());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
        buf.extend_from_slice(&json);
        for l in &self.layers {
            for v in l.weight.data().iter().chain(l.bias.data()) {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SurrogateNet> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = |r: &str| Error::format(path, r.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a network weights file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let body = bytes.get(16..16 + mlen).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
        manifest.config.validate().map_err(|e| bad(&e.to_string()))?;
        if manifest.layers != layer_specs(&manifest.config) {
            return Err(bad("layer manifest does not match the configuration"));
        }
        let mut floats = bytes[16 + mlen..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let mut take = |shape: &[usize]| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = floats.by_ref().take(n).collect();
            if data.len() != n {
                return Err(bad("truncated weights"));
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(bad("non-finite weight"));
            }
            Ok(Tensor::new(shape.to_vec(), data))
        };
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for s in &manifest.layers {
            let weight = take(&s.weight)?;
            let bias = take(&s.bias)?;
            layers.push(ConvLayer { name: s.name.clone(), weight, bias });
        }
        if floats.next().is_some() || !(bytes.len() - 16 - mlen).is_multiple_of(4) {
            return Err(bad("trailing data after weights"));
        }
        Ok(SurrogateNet { config: manifest.config, layers })
    }

    /// Rounds every weight to `f32`, matching what [`SurrogateNet::save`] stores.
    pub fn rounded_to_f32(mut self) -> SurrogateNet {
        for t in self.params_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        self
    }
}
