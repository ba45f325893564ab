//! Named parameter store: seeded initialization, lookup, and the binary
//! model-file format.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::util::{fnv1a64, seed_stream};

const MAGIC: &[u8; 8] = b"DWHRMODL";
const FORMAT_VERSION: u32 = 1;
/// Names reserved for normalization statistics riding along in the model
/// file; they are not parameters.
pub const NORM_MEAN_NAME: &str = "norm.mean";
pub const NORM_STD_NAME: &str = "norm.std";

/// Per-(sensor, variable) channel statistics captured from the training
/// split and applied to every split at inference time.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

enum Init {
    /// Uniform in +-1/sqrt(fan_in).
    UniformFanIn(usize),
    Zeros,
    Ones,
    /// Row-constant log-spectrum, `ln(1..=d_state)` per inner channel, so
    /// that minus its exponential is the strictly negative sequence
    /// -1, -2, ..., -d_state.
    ALog,
    /// Bias such that softplus(bias) is log-uniform in [0.001, 0.1].
    DtBias,
}

struct ParamSpec {
    name: &'static str,
    shape: Vec<usize>,
    init: Init,
}

fn registry(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let (n, m, d, c) = (cfg.n_sensors, cfg.m_vars, cfg.d_embed, cfg.n_classes);
    let (p, k) = (cfg.mse_kernel, cfg.lte_kernel);
    let e = cfg.expand_ratio;
    let di = cfg.d_inner();
    let ds = cfg.d_state;
    let f = cfg.token_len();
    let mut specs = vec![
        ParamSpec { name: "mse.weight", shape: vec![n * m * d, 1, p], init: Init::UniformFanIn(p) },
        ParamSpec { name: "mse.bias", shape: vec![n * m * d], init: Init::Zeros },
        ParamSpec { name: "lte.weight", shape: vec![m * d, 1, k], init: Init::UniformFanIn(k) },
        ParamSpec { name: "lte.bias", shape: vec![m * d], init: Init::Zeros },
        ParamSpec { name: "ccf.norm.gamma", shape: vec![m * d], init: Init::Ones },
        ParamSpec { name: "ccf.norm.beta", shape: vec![m * d], init: Init::Zeros },
        ParamSpec { name: "ccf.w1", shape: vec![m * e * d, d, 1], init: Init::UniformFanIn(d) },
        ParamSpec { name: "ccf.b1", shape: vec![m * e * d], init: Init::Zeros },
        ParamSpec { name: "ccf.w2", shape: vec![m * d, e * d, 1], init: Init::UniformFanIn(e * d) },
        ParamSpec { name: "ccf.b2", shape: vec![m * d], init: Init::Zeros },
        ParamSpec { name: "cvf.norm.gamma", shape: vec![d * m], init: Init::Ones },
        ParamSpec { name: "cvf.norm.beta", shape: vec![d * m], init: Init::Zeros },
        ParamSpec { name: "cvf.w1", shape: vec![d * e * m, m, 1], init: Init::UniformFanIn(m) },
        ParamSpec { name: "cvf.b1", shape: vec![d * e * m], init: Init::Zeros },
        ParamSpec { name: "cvf.w2", shape: vec![d * m, e * m, 1], init: Init::UniformFanIn(e * m) },
        ParamSpec { name: "cvf.b2", shape: vec![d * m], init: Init::Zeros },
    ];
    if cfg.enable_gta {
        specs.extend([
            ParamSpec { name: "mamba.in_proj", shape: vec![di, d], init: Init::UniformFanIn(d) },
            ParamSpec { name: "mamba.gate_proj", shape: vec![di, d], init: Init::UniformFanIn(d) },
            ParamSpec { name: "mamba.conv.weight", shape: vec![di, 1, cfg.d_conv], init: Init::UniformFanIn(cfg.d_conv) },
            ParamSpec { name: "mamba.conv.bias", shape: vec![di], init: Init::Zeros },
            ParamSpec { name: "mamba.dt_proj.weight", shape: vec![di, di], init: Init::UniformFanIn(di) },
            ParamSpec { name: "mamba.dt_proj.bias", shape: vec![di], init: Init::DtBias },
            ParamSpec { name: "mamba.b_proj", shape: vec![ds, di], init: Init::UniformFanIn(di) },
            ParamSpec { name: "mamba.c_proj", shape: vec![ds, di], init: Init::UniformFanIn(di) },
            ParamSpec { name: "mamba.a_log", shape: vec![di, ds], init: Init::ALog },
            ParamSpec { name: "mamba.d_skip", shape: vec![di], init: Init::Ones },
            ParamSpec { name: "mamba.out_proj", shape: vec![d, di], init: Init::UniformFanIn(di) },
        ]);
    }
    if cfg.enable_csi {
        specs.extend([
            ParamSpec { name: "csi.q", shape: vec![f, f], init: Init::UniformFanIn(f) },
            ParamSpec { name: "csi.k", shape: vec![f, f], init: Init::UniformFanIn(f) },
            ParamSpec { name: "csi.v", shape: vec![f, f], init: Init::UniformFanIn(f) },
            ParamSpec { name: "csi.w", shape: vec![f, f], init: Init::UniformFanIn(f) },
        ]);
    }
    specs.push(ParamSpec { name: "fc.weight", shape: vec![c, n * f], init: Init::UniformFanIn(n * f) });
    specs.push(ParamSpec { name: "fc.bias", shape: vec![c], init: Init::Zeros });
    specs
}

/// All learned tensors of one model instance, in a stable order, plus
/// optional normalization statistics captured at training time.
pub struct ModelState {
    params: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
    pub norm_stats: Option<NormStats>,
}

/// Immutable, thread-safe copy of a state's values, used to rebuild
/// per-worker states for parallel evaluation.
#[derive(Clone)]
pub struct ParamSnapshot {
    entries: Arc<Vec<(String, Vec<usize>, Vec<f64>)>>,
    norm_stats: Option<NormStats>,
}

impl ModelState {
    /// Fresh parameters drawn from the config's seed. Weight matrices and
    /// convolution kernels start uniform in +-1/sqrt(fan_in); biases start
    /// at zero; normalization scales at one; SSM-specific tensors follow
    /// their conventional spectra (see `Init`).
    pub fn init(cfg: &ModelConfig) -> Result<ModelState> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed_stream(cfg.seed, "init"));
        let mut params = Vec::new();
        for spec in registry(cfg) {
            let numel: usize = spec.shape.iter().product();
            let data: Vec<f64> = match spec.init {
                Init::UniformFanIn(fan_in) => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    (0..numel).map(|_| rng.gen_range(-bound..=bound)).collect()
                }
                Init::Zeros => vec![0.0; numel],
                Init::Ones => vec![1.0; numel],
                Init::ALog => {
                    let ds = *spec.shape.last().expect("a_log has a state axis");
                    (0..numel).map(|i| ((i % ds + 1) as f64).ln()).collect()
                }
                Init::DtBias => {
                    let (lo, hi) = (0.001f64.ln(), 0.1f64.ln());
                    (0..numel)
                        .map(|_| {
                            let dt = (lo + rng.gen::<f64>() * (hi - lo)).exp();
                            dt.exp_m1().ln()
                        })
                        .collect()
                }
            };
            let t = Tensor::param_from_vec(data, &spec.shape)?;
            params.push((spec.name.to_string(), t));
        }
        Ok(ModelState::from_parts(params, None))
    }

    fn from_parts(params: Vec<(String, Tensor)>, norm_stats: Option<NormStats>) -> ModelState {
        let index = params
            .iter()
            .enumerate()
            .map(|(i, (n, _))| (n.clone(), i))
            .collect();
        ModelState { params, index, norm_stats }
    }

    pub fn param(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.params[i].1)
            .ok_or_else(|| Error::internal(format!("no parameter named {name:?} in this state")))
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn n_tensors(&self) -> usize {
        self.params.len()
    }

    /// Total learned scalar count (normalization statistics excluded).
    pub fn n_params(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn clear_grads(&self) {
        for (_, t) in &self.params {
            t.clear_grad();
        }
    }

    /// Digest over parameter values and normalization statistics; two states
    /// with equal digests hold bitwise-equal numbers.
    pub fn values_digest(&self) -> u64 {
        let mut bytes = Vec::new();
        for (name, t) in &self.params {
            bytes.extend_from_slice(name.as_bytes());
            for v in t.data().iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        if let Some(ns) = &self.norm_stats {
            for v in ns.mean.iter().chain(ns.std.iter()) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fnv1a64(&bytes)
    }

    /// Copies of all parameter values, in registry order.
    pub fn clone_values(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|(_, t)| t.to_vec()).collect()
    }

    /// Writes values previously taken with `clone_values` back in place.
    pub fn restore_values(&self, values: &[Vec<f64>]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::internal(format!(
                "restore_values: {} value vectors for {} parameters",
                values.len(),
                self.params.len()
            )));
        }
        for ((_, t), v) in self.params.iter().zip(values) {
            t.set_data(v)?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> ParamSnapshot {
        let entries = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), t.shape().to_vec(), t.to_vec()))
            .collect();
        ParamSnapshot {
            entries: Arc::new(entries),
            norm_stats: self.norm_stats.clone(),
        }
    }

    pub fn from_snapshot(snap: &ParamSnapshot) -> Result<ModelState> {
        let mut params = Vec::with_capacity(snap.entries.len());
        for (name, shape, values) in snap.entries.iter() {
            params.push((name.clone(), Tensor::param_from_vec(values.clone(), shape)?));
        }
        Ok(ModelState::from_parts(params, snap.norm_stats.clone()))
    }

    /// Serializes to the binary model file: magic, format version, config
    /// digest, then length-prefixed named tensors (little-endian).
    pub fn save(&self, path: &Path, cfg: &ModelConfig) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&cfg.digest().to_le_bytes())?;
        let extra = match &self.norm_stats {
            Some(_) => 2,
            None => 0,
        };
        w.write_all(&u32::try_from(self.params.len() + extra).expect("tensor count fits u32").to_le_bytes())?;
        let write_tensor = |w: &mut BufWriter<std::fs::File>, name: &str, shape: &[usize], data: &[f64]| -> Result<()> {
            w.write_all(&u32::try_from(name.len()).expect("name length fits u32").to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&u32::try_from(shape.len()).expect("rank fits u32").to_le_bytes())?;
            for &dim in shape {
                w.write_all(&u32::try_from(dim).expect("dim fits u32").to_le_bytes())?;
            }
            for v in data {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        };
        for (name, t) in &self.params {
            write_tensor(&mut w, name, t.shape(), &t.data())?;
        }
        if let Some(ns) = &self.norm_stats {
            write_tensor(&mut w, NORM_MEAN_NAME, &[ns.mean.len()], &ns.mean)?;
            write_tensor(&mut w, NORM_STD_NAME, &[ns.std.len()], &ns.std)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a model file written by `save`, checking that it belongs to
    /// `cfg` (same architecture digest) and carries exactly the expected
    /// tensors with the expected shapes.
    pub fn load(path: &Path, cfg: &ModelConfig) -> Result<ModelState> {
        cfg.validate()?;
        let file = std::fs::File::open(path)?;
        let mut r = BufReader::new(file);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format(format!(
                "{} is not a model file (bad magic)",
                path.display()
            )));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported model format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let digest = read_u64(&mut r)?;
        if digest != cfg.digest() {
            return Err(Error::config(
                "model file was produced by a different configuration (digest mismatch); \
                 pass the config the model was trained with"
                    .to_string(),
            ));
        }
        let count = read_u32(&mut r)? as usize;
        let mut loaded: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| Error::format("tensor name is not UTF-8"))?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u32(&mut r)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut bytes = vec![0u8; numel * 8];
            r.read_exact(&mut bytes)?;
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if loaded.insert(name.clone(), (shape, data)).is_some() {
                return Err(Error::format(format!("duplicate tensor {name:?} in model file")));
            }
        }
        let mut params = Vec::new();
        for spec in registry(cfg) {
            let (shape, data) = loaded.remove(spec.name).ok_or_else(|| {
                Error::format(format!("model file is missing tensor {:?}", spec.name))
            })?;
            if shape != spec.shape {
                return Err(Error::format(format!(
                    "tensor {:?} has shape {shape:?}, expected {:?}",
                    spec.name, spec.shape
                )));
            }
            params.push((spec.name.to_string(), Tensor::param_from_vec(data, &shape)?));
        }
        let norm_stats = match (loaded.remove(NORM_MEAN_NAME), loaded.remove(NORM_STD_NAME)) {
            (Some((_, mean)), Some((_, std))) => {
                if mean.len() != std.len() {
                    return Err(Error::format(
                        "normalization mean/std lengths differ in model file".to_string(),
                    ));
                }
                Some(NormStats { mean, std })
            }
            (None, None) => None,
            _ => {
                return Err(Error::format(
                    "model file carries only one of the two normalization tensors".to_string(),
                ))
            }
        };
        if let Some(extra) = loaded.keys().next() {
            return Err(Error::format(format!("unexpected tensor {extra:?} in model file")));
        }
        Ok(ModelState::from_parts(params, norm_stats))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
