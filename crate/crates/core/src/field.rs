//! The two-factor field: per-level coefficient and basis grid reads
//! multiplied element-wise, concatenated with a One-Blob encoding of the
//! coordinate, and regressed to intensity by a small MLP.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coords::Bounds;
use crate::encode::{OneBlobConfig, SawtoothConfig};
use crate::error::{Error, Result};
use crate::grid::{check_domain, resolution_schedule, Corners, GridPyramid, LevelGrid, PyramidKind};
use crate::mlp::{Mlp, MlpCache, MlpGrads};
use crate::volume::write_file;

/// Which component of the model is removed, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    NoBasis,
    NoCoeff,
    NoPeriodic,
    NoOneblob,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoBasis,
        Variant::NoCoeff,
        Variant::NoPeriodic,
        Variant::NoOneblob,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoBasis => "no-basis",
            Variant::NoCoeff => "no-coeff",
            Variant::NoPeriodic => "no-periodic",
            Variant::NoOneblob => "no-oneblob",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Architecture of a [`TwoFactorField`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub levels: usize,
    pub coeff_resolution: usize,
    pub basis_min_resolution: usize,
    pub basis_max_resolution: usize,
    pub oneblob: OneBlobConfig,
    pub hidden: Vec<usize>,
    pub variant: Variant,
    /// Grid values start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            levels: 6,
            coeff_resolution: 32,
            basis_min_resolution: 32,
            basis_max_resolution: 128,
            oneblob: OneBlobConfig::default(),
            hidden: vec![64, 64],
            variant: Variant::Full,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::Config("levels must be positive".into()));
        }
        if self.coeff_resolution < 2 {
            return Err(Error::Config("coefficient resolution must be >= 2".into()));
        }
        resolution_schedule(self.basis_min_resolution, self.basis_max_resolution, self.levels)
            .map_err(|e| Error::Config(e.to_string()))?;
        self.oneblob.validate()?;
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::Config("init_scale must be non-negative".into()));
        }
        Ok(())
    }

    pub fn mlp_input_width(&self) -> usize {
        match self.variant {
            Variant::NoOneblob => self.levels,
            _ => self.levels + self.oneblob.width(),
        }
    }
}

/// Activations of one forward pass, reused across calls to avoid allocation.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    coeff: Vec<(Corners, f64)>,
    basis: Vec<(Corners, f64)>,
    input: Vec<f64>,
    mlp: MlpCache,
    pub output: f64,
}

/// Gradient contributions collected away from the parameters, so several
/// workers can run backward passes over a shared read-only field.
#[derive(Debug, Clone)]
pub struct GradShard {
    coeff: Vec<Vec<(Corners, f64)>>,
    basis: Vec<Vec<(Corners, f64)>>,
    pub mlp: MlpGrads,
}

impl GradShard {
    pub fn clear(&mut self) {
        self.coeff.iter_mut().for_each(Vec::clear);
        self.basis.iter_mut().for_each(Vec::clear);
        self.mlp.zero();
    }
}

#[derive(Debug, Clone)]
pub struct TwoFactorField {
    pub config: FieldConfig,
    pub coeff: GridPyramid,
    pub basis: GridPyramid,
    pub sawtooth: SawtoothConfig,
    pub mlp: Mlp,
    pub mlp_grads: MlpGrads,
    /// Normalization frame for scanner-space queries.
    pub bounds: Option<Bounds>,
    /// Raw intensity range of the training volume.
    pub intensity_range: (f64, f64),
    /// Free-form metadata echoed into checkpoints (e.g. the training config).
    pub metadata: serde_json::Value,
    pending: Option<Trace>,
}

/// Compares model state; a pending forward trace is ignored.
impl PartialEq for TwoFactorField {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.coeff == other.coeff
            && self.basis == other.basis
            && self.sawtooth == other.sawtooth
            && self.mlp == other.mlp
            && self.mlp_grads == other.mlp_grads
            && self.bounds == other.bounds
            && self.intensity_range == other.intensity_range
            && self.metadata == other.metadata
    }
}

impl TwoFactorField {
    pub fn new(config: FieldConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let k = config.levels;
        let coeff_levels = (0..k)
            .map(|_| LevelGrid::random(config.coeff_resolution, config.init_scale, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let schedule = resolution_schedule(config.basis_min_resolution, config.basis_max_resolution, k)?;
        let basis_levels = schedule
            .iter()
            .map(|&r| LevelGrid::random(r, config.init_scale, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mlp = Mlp::new(config.mlp_input_width(), &config.hidden, &mut rng);
        let mlp_grads = mlp.zero_grads();
        Ok(Self {
            coeff: GridPyramid {
                kind: PyramidKind::Coefficient,
                levels: coeff_levels,
            },
            basis: GridPyramid {
                kind: PyramidKind::Basis,
                levels: basis_levels,
            },
            sawtooth: SawtoothConfig::new(k),
            mlp,
            mlp_grads,
            bounds: None,
            intensity_range: (0.0, 1.0),
            metadata: serde_json::Value::Null,
            pending: None,
            config,
        })
    }

    pub fn levels(&self) -> usize {
        self.config.levels
    }

    pub fn param_count(&self) -> usize {
        self.coeff.param_count() + self.basis.param_count() + self.mlp.param_count()
    }

    pub fn new_trace(&self) -> Trace {
        let k = self.levels();
        let empty = Corners {
            index: [0; 8],
            weight: [0.0; 8],
        };
        Trace {
            coeff: vec![(empty, 1.0); k],
            basis: vec![(empty, 1.0); k],
            input: vec![0.0; self.mlp.input_width()],
            mlp: MlpCache::default(),
            output: 0.0,
        }
    }

    pub fn new_shard(&self) -> GradShard {
        let k = self.levels();
        GradShard {
            coeff: vec![Vec::new(); k],
            basis: vec![Vec::new(); k],
            mlp: self.mlp.zero_grads(),
        }
    }

    /// Fills the first K entries of `trace.input` with the two-factor features.
    fn features_into(&self, p: [f64; 3], trace: &mut Trace) {
        let variant = self.config.variant;
        for i in 0..self.levels() {
            let c = if variant == Variant::NoCoeff {
                1.0
            } else {
                let g = &self.coeff.levels[i];
                let corners = g.corners(p);
                let v = g.blend(&corners);
                trace.coeff[i].0 = corners;
                v
            };
            let b = if variant == Variant::NoBasis {
                1.0
            } else {
                let q = if variant == Variant::NoPeriodic { p } else { self.sawtooth.apply(p, i) };
                let g = &self.basis.levels[i];
                let corners = g.corners(q);
                let v = g.blend(&corners);
                trace.basis[i].0 = corners;
                v
            };
            trace.coeff[i].1 = c;
            trace.basis[i].1 = b;
            trace.input[i] = c * b;
        }
    }

    pub fn two_factor_features(&self, p: [f64; 3]) -> Result<Vec<f64>> {
        check_domain(p)?;
        let mut trace = self.new_trace();
        self.features_into(p, &mut trace);
        Ok(trace.input[..self.levels()].to_vec())
    }

    /// Forward pass recording activations into `trace`.
    pub fn forward_traced(&self, p: [f64; 3], trace: &mut Trace) -> Result<f64> {
        check_domain(p)?;
        self.features_into(p, trace);
        if self.config.variant != Variant::NoOneblob {
            let k = self.levels();
            self.config.oneblob.encode_into(p, &mut trace.input[k..]);
        }
        trace.output = self.mlp.forward(&trace.input, &mut trace.mlp);
        Ok(trace.output)
    }

    /// Raw (unclamped) intensity in normalized units.
    pub fn predict(&self, p: [f64; 3]) -> Result<f64> {
        let mut trace = self.new_trace();
        self.forward_traced(p, &mut trace)
    }

    /// Chain rule from `upstream = dL/d(output)` into `shard`.
    pub fn backward_traced(&self, trace: &mut Trace, upstream: f64, shard: &mut GradShard) {
        if upstream == 0.0 {
            return;
        }
        let k = self.levels();
        let variant = self.config.variant;
        let dinput = self.mlp.backward(&mut trace.mlp, upstream, &mut shard.mlp);
        for i in 0..k {
            let ds = dinput[i];
            let (cc, c) = trace.coeff[i];
            let (bc, b) = trace.basis[i];
            if variant != Variant::NoCoeff {
                shard.coeff[i].push((cc, ds * b));
            }
            if variant != Variant::NoBasis {
                shard.basis[i].push((bc, ds * c));
            }
        }
    }

    /// Scatter a shard into the parameter gradients, in recorded order.
    pub fn apply_shard(&mut self, shard: &GradShard) {
        for (grid, entries) in self.coeff.levels.iter_mut().zip(&shard.coeff) {
            for (c, s) in entries {
                grid.scatter(c, *s);
            }
        }
        for (grid, entries) in self.basis.levels.iter_mut().zip(&shard.basis) {
            for (c, s) in entries {
                grid.scatter(c, *s);
            }
        }
        self.mlp_grads.add_assign(&shard.mlp);
    }

    /// Forward pass that keeps its activations for a following [`backward`](Self::backward).
    pub fn forward(&mut self, p: [f64; 3]) -> Result<f64> {
        let mut trace = self.pending.take().unwrap_or_else(|| self.new_trace());
        let out = self.forward_traced(p, &mut trace)?;
        self.pending = Some(trace);
        Ok(out)
    }

    /// Accumulates `upstream * d(output)/d(params)` for the last [`forward`](Self::forward).
    pub fn backward(&mut self, upstream: f64) -> Result<()> {
        let mut trace = self.pending.take().ok_or(Error::NoForward)?;
        let mut shard = self.new_shard();
        self.backward_traced(&mut trace, upstream, &mut shard);
        self.apply_shard(&shard);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.coeff.zero_grad();
        self.basis.zero_grad();
        self.mlp_grads.zero();
    }

    /// Parameter tensors in checkpoint order: coefficient levels, basis
    /// levels, then weights and bias of each MLP layer.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        out.extend(self.coeff.levels.iter().map(|g| g.values.as_slice()));
        out.extend(self.basis.levels.iter().map(|g| g.values.as_slice()));
        out.extend(self.mlp.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        out.extend(self.coeff.levels.iter_mut().map(|g| g.values.as_mut_slice()));
        out.extend(self.basis.levels.iter_mut().map(|g| g.values.as_mut_slice()));
        out.extend(self.mlp.tensors_mut());
        out
    }

    /// Accumulated gradients, aligned with [`Self::tensors`].
    pub fn grad_tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        out.extend(self.coeff.levels.iter().map(|g| g.grad.as_slice()));
        out.extend(self.basis.levels.iter().map(|g| g.grad.as_slice()));
        out.extend(self.mlp_grads.tensors());
        out
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TFSRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    field: FieldConfig,
    basis_resolutions: Vec<usize>,
    frequencies: Vec<f64>,
    bounds: Option<Bounds>,
    intensity_range: [f64; 2],
    metadata: serde_json::Value,
}

/// Layout: magic (8 bytes), version (u32 LE), header length (u64 LE), JSON
/// header, then every parameter tensor as little-endian `f64`.
pub fn encode_checkpoint(m: &TwoFactorField) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        field: m.config.clone(),
        basis_resolutions: m.basis.resolutions(),
        frequencies: m.sawtooth.frequencies.clone(),
        bounds: m.bounds,
        intensity_range: [m.intensity_range.0, m.intensity_range.1],
        metadata: m.metadata.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * m.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in m.tensors() {
        let start = out.len();
        out.resize(start + 8 * t.len(), 0);
        LittleEndian::write_f64_into(t, &mut out[start..]);
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TwoFactorField> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < 20 {
        return Err(bad("file too short"));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = LittleEndian::read_u32(&bytes[8..12]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let json_len = LittleEndian::read_u64(&bytes[12..20]) as usize;
    let json_end = 20usize.checked_add(json_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[20..json_end]).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

    let mut m = TwoFactorField::new(header.field).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if m.basis.resolutions() != header.basis_resolutions || m.sawtooth.frequencies != header.frequencies {
        return Err(bad("header resolutions or frequencies disagree with the field config"));
    }
    m.bounds = header.bounds;
    m.intensity_range = (header.intensity_range[0], header.intensity_range[1]);
    m.metadata = header.metadata;

    let expected = 8 * m.param_count();
    let payload = &bytes[json_end..];
    if payload.len() != expected {
        return Err(Error::Checkpoint(format!(
            "parameter payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let mut offset = 0;
    for t in m.tensors_mut() {
        let n = 8 * t.len();
        LittleEndian::read_f64_into(&payload[offset..offset + n], t);
        offset += n;
    }
    Ok(m)
}

pub fn save_checkpoint(m: &TwoFactorField, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_checkpoint(m)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TwoFactorField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and checks its architecture against `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &FieldConfig) -> Result<TwoFactorField> {
    let m = load_checkpoint(path)?;
    let c = &m.config;
    let same = c.levels == expected.levels
        && c.coeff_resolution == expected.coeff_resolution
        && c.basis_min_resolution == expected.basis_min_resolution
        && c.basis_max_resolution == expected.basis_max_resolution
        && c.oneblob == expected.oneblob
        && c.hidden == expected.hidden
        && c.variant == expected.variant;
    if !same {
        return Err(Error::Checkpoint(format!(
            "shape mismatch: checkpoint has K={} coeff={} basis={}..{} bins={} hidden={:?} variant={}, expected K={} coeff={} basis={}..{} bins={} hidden={:?} variant={}",
            c.levels,
            c.coeff_resolution,
            c.basis_min_resolution,
            c.basis_max_resolution,
            c.oneblob.n_bins,
            c.hidden,
            c.variant,
            expected.levels,
            expected.coeff_resolution,
            expected.basis_min_resolution,
            expected.basis_max_resolution,
            expected.oneblob.n_bins,
            expected.hidden,
            expected.variant,
        )));
    }
    Ok(m)
}
