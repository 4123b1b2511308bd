//! Multiresolution hash-grid texture field over normalized object space.
//!
//! The field maps a 3D point in [-1,1]^3 to RGB: per level the point is
//! scaled to the level resolution, the 8 surrounding corner feature
//! vectors are fetched (dense row-major at coarse levels, XOR-hashed once
//! the full grid no longer fits the table) and trilinearly blended; the
//! concatenated features go through a linear decoder and a per-channel
//! sigmoid. Gradients are analytic and touch at most 8 rows per level
//! plus the decoder.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::V3;

const HASH_PRIME_Y: u64 = 2_654_435_761;
const HASH_PRIME_Z: u64 = 805_459_861;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct HashGridConfig {
    pub levels: usize,
    pub base_resolution: u32,
    pub growth_factor: f64,
    pub features_per_level: usize,
    pub table_size_log2: u32,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        HashGridConfig {
            levels: 8,
            base_resolution: 16,
            growth_factor: 1.5,
            features_per_level: 2,
            table_size_log2: 14,
        }
    }
}

impl HashGridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::Config("hash grid needs at least 1 level".into()));
        }
        if self.features_per_level < 1 {
            return Err(Error::Config("features_per_level must be >= 1".into()));
        }
        if !(4..=24).contains(&self.table_size_log2) {
            return Err(Error::Config("table_size_log2 must be in [4, 24]".into()));
        }
        if self.base_resolution < 1 || self.growth_factor < 1.0 {
            return Err(Error::Config(
                "base_resolution >= 1 and growth_factor >= 1 required".into(),
            ));
        }
        Ok(())
    }

    pub fn table_size(&self) -> usize {
        1usize << self.table_size_log2
    }

    pub fn resolution(&self, level: usize) -> u32 {
        (self.base_resolution as f64 * self.growth_factor.powi(level as i32)).floor() as u32
    }

    /// Coarse levels where the full corner grid fits in the table are
    /// stored dense (Instant-NGP convention).
    pub fn is_dense(&self, level: usize) -> bool {
        let side = self.resolution(level) as usize + 1;
        side.checked_pow(3)
            .map(|n| n <= self.table_size())
            .unwrap_or(false)
    }

    pub fn feature_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    pub fn param_count(&self) -> usize {
        // tables + decoder weights + biases
        self.levels * self.table_size() * self.features_per_level + 3 * self.feature_dim() + 3
    }
}

/// The optimizable texture: hash tables plus a linear decoder, stored as
/// one flat parameter vector (tables level-major, then decoder weights
/// row-major by output channel, then 3 biases).
#[derive(Debug, Clone, PartialEq)]
pub struct TextureField {
    pub config: HashGridConfig,
    pub params: Vec<f64>,
}

/// Sparse parameter gradient; indices may repeat and must be summed.
#[derive(Debug, Clone, Default)]
pub struct SparseGrad {
    pub entries: Vec<(usize, f64)>,
}

impl SparseGrad {
    pub fn accumulate_into(&self, dense: &mut [f64]) {
        for &(i, v) in &self.entries {
            dense[i] += v;
        }
    }

    /// Distinct table-row/parameter indices touched.
    pub fn support(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = self.entries.iter().map(|e| e.0).collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }
}

pub fn hash_index(config: &HashGridConfig, level: usize, coord: [u32; 3]) -> usize {
    let res = config.resolution(level);
    debug_assert!(coord.iter().all(|&c| c <= res));
    if config.is_dense(level) {
        let side = res as usize + 1;
        coord[0] as usize + side * (coord[1] as usize + side * coord[2] as usize)
    } else {
        let h = (coord[0] as u64)
            ^ (coord[1] as u64).wrapping_mul(HASH_PRIME_Y)
            ^ (coord[2] as u64).wrapping_mul(HASH_PRIME_Z);
        (h % config.table_size() as u64) as usize
    }
}

pub fn init_random(config: HashGridConfig, seed: u64) -> Result<TextureField> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![0.0f64; config.param_count()];
    let table_len = config.levels * config.table_size() * config.features_per_level;
    for p in params[..table_len].iter_mut() {
        *p = rng.gen_range(-1e-2..1e-2);
    }
    let s = 1.0 / (config.feature_dim() as f64).sqrt();
    let decoder_len = 3 * config.feature_dim();
    for p in params[table_len..table_len + decoder_len].iter_mut() {
        *p = rng.gen_range(-s..s);
    }
    // biases stay 0
    Ok(TextureField { config, params })
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct CellStencil {
    /// (parameter offset of the row's first feature, trilinear weight)
    corners: [(usize, f64); 8],
}

impl TextureField {
    fn table_offset(&self, level: usize) -> usize {
        level * self.config.table_size() * self.config.features_per_level
    }

    fn decoder_offset(&self) -> usize {
        self.config.levels * self.config.table_size() * self.config.features_per_level
    }

    fn weight_index(&self, channel: usize, k: usize) -> usize {
        self.decoder_offset() + channel * self.config.feature_dim() + k
    }

    fn bias_index(&self, channel: usize) -> usize {
        self.decoder_offset() + 3 * self.config.feature_dim() + channel
    }

    fn stencil(&self, level: usize, point: V3) -> CellStencil {
        let res = self.config.resolution(level);
        let f = self.config.features_per_level;
        let mut cell = [0u32; 3];
        let mut frac = [0.0f64; 3];
        for axis in 0..3 {
            let u = ((point[axis] + 1.0) * 0.5).clamp(0.0, 1.0) * res as f64;
            let c = (u.floor() as u32).min(res.saturating_sub(1));
            cell[axis] = c;
            frac[axis] = u - c as f64;
        }
        let base = self.table_offset(level);
        let mut corners = [(0usize, 0.0f64); 8];
        for (i, corner) in corners.iter_mut().enumerate() {
            let dx = (i & 1) as u32;
            let dy = ((i >> 1) & 1) as u32;
            let dz = ((i >> 2) & 1) as u32;
            let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
            let row = hash_index(
                &self.config,
                level,
                [cell[0] + dx, cell[1] + dy, cell[2] + dz],
            );
            *corner = (base + row * f, w);
        }
        CellStencil { corners }
    }

    fn features(&self, point: V3) -> Vec<f64> {
        let f = self.config.features_per_level;
        let mut feats = vec![0.0f64; self.config.feature_dim()];
        for level in 0..self.config.levels {
            let st = self.stencil(level, point);
            let out = &mut feats[level * f..(level + 1) * f];
            for &(off, w) in &st.corners {
                for (j, o) in out.iter_mut().enumerate() {
                    *o += w * self.params[off + j];
                }
            }
        }
        feats
    }

    fn decode(&self, feats: &[f64]) -> [f64; 3] {
        let mut rgb = [0.0f64; 3];
        for (c, v) in rgb.iter_mut().enumerate() {
            let mut acc = self.params[self.bias_index(c)];
            for (k, ft) in feats.iter().enumerate() {
                acc += self.params[self.weight_index(c, k)] * ft;
            }
            *v = sigmoid(acc);
        }
        rgb
    }

    /// RGB in the open interval (0,1)^3.
    pub fn eval_color(&self, point: V3) -> [f64; 3] {
        self.decode(&self.features(point))
    }

    /// Analytic gradient of `upstream . color` with respect to the
    /// parameters. Support is at most 8 rows per level plus the decoder.
    pub fn eval_color_backward(&self, point: V3, upstream: [f64; 3]) -> SparseGrad {
        let f = self.config.features_per_level;
        let feats = self.features(point);
        let y = self.decode(&feats);
        let g: [f64; 3] = std::array::from_fn(|c| y[c] * (1.0 - y[c]) * upstream[c]);

        let mut grad = SparseGrad::default();
        // decoder weights and biases
        for c in 0..3 {
            if g[c] == 0.0 {
                continue;
            }
            grad.entries.push((self.bias_index(c), g[c]));
            for (k, ft) in feats.iter().enumerate() {
                grad.entries.push((self.weight_index(c, k), ft * g[c]));
            }
        }
        // pull back to table rows through the decoder and trilinear weights
        let mut dfeat = vec![0.0f64; self.config.feature_dim()];
        for c in 0..3 {
            if g[c] == 0.0 {
                continue;
            }
            for (k, df) in dfeat.iter_mut().enumerate() {
                *df += self.params[self.weight_index(c, k)] * g[c];
            }
        }
        for level in 0..self.config.levels {
            let st = self.stencil(level, point);
            let d = &dfeat[level * f..(level + 1) * f];
            if d.iter().all(|&v| v == 0.0) {
                continue;
            }
            for &(off, w) in &st.corners {
                for (j, &dj) in d.iter().enumerate() {
                    grad.entries.push((off + j, w * dj));
                }
            }
        }
        grad
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"MTXF0001";

pub fn save_checkpoint(field: &TextureField, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::with_capacity(64 + field.params.len() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(field.config.levels as u32).to_le_bytes());
    buf.extend_from_slice(&field.config.base_resolution.to_le_bytes());
    buf.extend_from_slice(&field.config.growth_factor.to_le_bytes());
    buf.extend_from_slice(&(field.config.features_per_level as u32).to_le_bytes());
    buf.extend_from_slice(&field.config.table_size_log2.to_le_bytes());
    buf.extend_from_slice(&(field.params.len() as u64).to_le_bytes());
    for p in &field.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TextureField> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let need = |n: usize, at: usize| -> Result<()> {
        if bytes.len() < at + n {
            Err(Error::Checkpoint("truncated checkpoint".into()))
        } else {
            Ok(())
        }
    };
    need(8, 0)?;
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    need(4 * 4 + 8 + 8, 8)?;
    let levels = u32_at(8) as usize;
    let base_resolution = u32_at(12);
    let growth_factor = f64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let features_per_level = u32_at(24) as usize;
    let table_size_log2 = u32_at(28);
    let count = u64::from_le_bytes(bytes[32..40].try_into().unwrap()) as usize;
    let config = HashGridConfig {
        levels,
        base_resolution,
        growth_factor,
        features_per_level,
        table_size_log2,
    };
    config.validate()?;
    if count != config.param_count() {
        return Err(Error::Checkpoint(format!(
            "parameter count {count} does not match config ({})",
            config.param_count()
        )));
    }
    need(count * 8, 40)?;
    let params: Vec<f64> = (0..count)
        .map(|i| f64::from_le_bytes(bytes[40 + i * 8..48 + i * 8].try_into().unwrap()))
        .collect();
    Ok(TextureField { config, params })
}
