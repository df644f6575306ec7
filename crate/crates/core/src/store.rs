//! Persistence: the sparse ensemble file, parameter accounting and IDX
//! dataset ingestion.
//!
//! # Ensemble file layout
//!
//! All integers little-endian.
//!
//! | field | type |
//! |---|---|
//! | magic `SPEN1` | 5 bytes |
//! | version | u16 |
//! | value dtype (0 = f64, 1 = f32, lossy) | u8 |
//! | layer count, then per layer `in`, `out` (u32) and activation (u8: 0 relu, 1 identity) | |
//! | class count | u32 |
//! | parameter count K | u64 |
//! | metadata length, then UTF-8 JSON object of strings | u32 + bytes |
//! | chain count M | u32 |
//! | per chain: method u8, seed u64, source iterations i32 (−1 none), samples u32, active u64, mask offset u64, values offset u64 | 41 bytes |
//! | packed masks, one per chain, ⌈K/8⌉ bytes, bit k at byte k/8, bit k%8 | |
//! | values, per chain `samples × active` in sample-major order | |
//! | CRC-32 (IEEE) of every preceding byte | u32 |
//!
//! Offsets are absolute byte positions and must follow the layout exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::mask::{MaskMethod, MaskProvenance, SparsityMask};
use crate::nn::{Activation, LayerSpec, NetworkSpec};
use crate::sample::{ChainGroup, PosteriorEnsemble};

pub use crate::data::synth_blobs;

pub const MAGIC: &[u8; 5] = b"SPEN1";
pub const VERSION: u16 = 1;
pub const DATA_DIR_ENV: &str = "SPARSE_POSTERIOR_DATA";

const CHAIN_RECORD: usize = 41;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ValueType {
    #[default]
    F64,
    /// Halves the file; values no longer round-trip exactly.
    F32,
}

impl ValueType {
    fn code(self) -> u8 {
        match self {
            ValueType::F64 => 0,
            ValueType::F32 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            ValueType::F64 => 8,
            ValueType::F32 => 4,
        }
    }
}

/// Σ over chains of samples × active coordinates.
pub fn total_stored_params(ensemble: &PosteriorEnsemble) -> u64 {
    stored_param_count(
        ensemble
            .groups()
            .iter()
            .map(|g| (g.samples.len(), g.mask.active_count())),
    )
}

/// Stored values for chains given as `(samples, active)` pairs.
pub fn stored_param_count(chains: impl IntoIterator<Item = (usize, usize)>) -> u64 {
    chains.into_iter().map(|(s, a)| s as u64 * a as u64).sum()
}

pub fn encode_ensemble(ensemble: &PosteriorEnsemble, dtype: ValueType) -> Result<Vec<u8>> {
    let net = ensemble.net();
    if let Some(g) = ensemble.groups().iter().position(|g| g.samples.is_empty()) {
        return Err(Error::Usage(format!("chain {g} has no samples; refusing to save")));
    }
    let metadata = serde_json::to_vec(ensemble.metadata())
        .map_err(|e| Error::Format(format!("metadata: {e}")))?;
    let k = net.num_params();
    let packed_len = k.div_ceil(8);

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype.code());
    out.extend_from_slice(&u32_of(net.layers().len())?.to_le_bytes());
    for l in net.layers() {
        out.extend_from_slice(&u32_of(l.in_dim)?.to_le_bytes());
        out.extend_from_slice(&u32_of(l.out_dim)?.to_le_bytes());
        out.push(match l.activation {
            Activation::Relu => 0,
            Activation::Identity => 1,
        });
    }
    out.extend_from_slice(&u32_of(net.num_classes())?.to_le_bytes());
    out.extend_from_slice(&(k as u64).to_le_bytes());
    out.extend_from_slice(&u32_of(metadata.len())?.to_le_bytes());
    out.extend_from_slice(&metadata);
    let m = ensemble.num_chains();
    out.extend_from_slice(&u32_of(m)?.to_le_bytes());

    let mut mask_pos = out.len() + m * CHAIN_RECORD;
    let mut value_pos = mask_pos + m * packed_len;
    for g in ensemble.groups() {
        let active = g.mask.active_count();
        let p = &g.provenance;
        out.push(p.method.code());
        out.extend_from_slice(&p.seed.to_le_bytes());
        let iters = match p.source_iterations {
            Some(i) => i32::try_from(i).map_err(|_| Error::Format("source iterations overflow".into()))?,
            None => -1,
        };
        out.extend_from_slice(&iters.to_le_bytes());
        out.extend_from_slice(&u32_of(g.samples.len())?.to_le_bytes());
        out.extend_from_slice(&(active as u64).to_le_bytes());
        out.extend_from_slice(&(mask_pos as u64).to_le_bytes());
        out.extend_from_slice(&(value_pos as u64).to_le_bytes());
        mask_pos += packed_len;
        value_pos += g.samples.len() * active * dtype.width();
    }
    for g in ensemble.groups() {
        out.extend_from_slice(&g.mask.to_packed());
    }
    for g in ensemble.groups() {
        for s in &g.samples {
            for &v in s {
                match dtype {
                    ValueType::F64 => out.extend_from_slice(&v.to_le_bytes()),
                    ValueType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn u32_of(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{n} does not fit the u32 header field")))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Integrity(format!("record at byte {} runs past the end", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Integrity(format!("size {v} overflows")))
    }
}

pub fn decode_ensemble(bytes: &[u8]) -> Result<PosteriorEnsemble> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Format("not an ensemble file (bad magic)".into()));
    }
    if bytes.len() < MAGIC.len() + 2 + 4 {
        return Err(Error::Integrity("file truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::Integrity("CRC mismatch".into()));
    }
    let mut c = Cursor {
        buf: body,
        pos: MAGIC.len(),
    };
    let version = c.u16()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = match c.u8()? {
        0 => ValueType::F64,
        1 => ValueType::F32,
        d => return Err(Error::Format(format!("unknown value type {d}"))),
    };
    let num_layers = c.u32()? as usize;
    if num_layers == 0 || num_layers > body.len() {
        return Err(Error::Integrity(format!("implausible layer count {num_layers}")));
    }
    let mut layers = Vec::with_capacity(num_layers);
    for _ in 0..num_layers {
        let i = c.u32()? as usize;
        let o = c.u32()? as usize;
        let act = match c.u8()? {
            0 => Activation::Relu,
            1 => Activation::Identity,
            a => return Err(Error::Format(format!("unknown activation code {a}"))),
        };
        layers.push(LayerSpec::new(i, o, act).map_err(|e| Error::Integrity(e.to_string()))?);
    }
    let num_classes = c.u32()? as usize;
    let net = NetworkSpec::new(layers, num_classes).map_err(|e| Error::Integrity(e.to_string()))?;
    let k = c.usize()?;
    if k != net.num_params() {
        return Err(Error::Integrity(format!(
            "header declares {k} parameters, layers imply {}",
            net.num_params()
        )));
    }
    let meta_len = c.u32()? as usize;
    let metadata: BTreeMap<String, String> = serde_json::from_slice(c.take(meta_len)?)
        .map_err(|e| Error::Format(format!("metadata: {e}")))?;
    let m = c.u32()? as usize;
    if m.checked_mul(CHAIN_RECORD).is_none_or(|n| n > body.len()) {
        return Err(Error::Integrity(format!("implausible chain count {m}")));
    }

    let packed_len = k.div_ceil(8);
    let mut records = Vec::with_capacity(m);
    let mut mask_pos = c.pos + m * CHAIN_RECORD;
    let mut value_pos = mask_pos + m * packed_len;
    for g in 0..m {
        let method = MaskMethod::from_code(c.u8()?)
            .ok_or_else(|| Error::Format(format!("chain {g}: unknown mask method")))?;
        let seed = c.u64()?;
        let iters = c.i32()?;
        let samples = c.u32()? as usize;
        let active = c.usize()?;
        let mo = c.usize()?;
        let vo = c.usize()?;
        if mo != mask_pos || vo != value_pos {
            return Err(Error::Integrity(format!("chain {g}: offsets do not follow the layout")));
        }
        let bytes = samples
            .checked_mul(active)
            .and_then(|n| n.checked_mul(dtype.width()))
            .ok_or_else(|| Error::Integrity(format!("chain {g}: value block overflows")))?;
        mask_pos += packed_len;
        value_pos = value_pos
            .checked_add(bytes)
            .ok_or_else(|| Error::Integrity("value block overflows".into()))?;
        let source_iterations = match iters {
            -1 => None,
            i if i >= 0 => Some(i as u32),
            i => return Err(Error::Format(format!("chain {g}: bad source iterations {i}"))),
        };
        records.push((
            MaskProvenance {
                method,
                seed,
                source_iterations,
            },
            samples,
            active,
        ));
    }
    if value_pos != body.len() {
        return Err(Error::Integrity(format!(
            "layout needs {value_pos} bytes before the checksum, file has {}",
            body.len()
        )));
    }
    let mut masks = Vec::with_capacity(m);
    for (g, (_, _, active)) in records.iter().enumerate() {
        let mask = SparsityMask::from_packed(&net, c.take(packed_len)?)
            .map_err(|e| Error::Integrity(format!("chain {g}: {e}")))?;
        if mask.active_count() != *active {
            return Err(Error::Integrity(format!("chain {g}: active count disagrees with mask")));
        }
        masks.push(mask);
    }
    let mut groups = Vec::with_capacity(m);
    for ((provenance, s, active), mask) in records.into_iter().zip(masks) {
        let mut samples = Vec::with_capacity(s);
        for _ in 0..s {
            let raw = c.take(active * dtype.width())?;
            let vals = match dtype {
                ValueType::F64 => raw
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect(),
                ValueType::F32 => raw
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                    .collect(),
            };
            samples.push(vals);
        }
        groups.push(ChainGroup {
            mask,
            provenance,
            samples,
        });
    }
    PosteriorEnsemble::new(net, groups, metadata)
}

pub fn save_ensemble(ensemble: &PosteriorEnsemble, path: &Path) -> Result<()> {
    save_ensemble_as(ensemble, path, ValueType::F64)
}

pub fn save_ensemble_as(ensemble: &PosteriorEnsemble, path: &Path, dtype: ValueType) -> Result<()> {
    let bytes = encode_ensemble(ensemble, dtype)?;
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

pub fn load_ensemble(path: &Path) -> Result<PosteriorEnsemble> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    decode_ensemble(&bytes)
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Whole file, transparently gunzipped when it starts with the gzip magic.
fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::file(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::file(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format(format!("{}: header truncated", path.display())))
}

/// Images as rows of `rows·cols` pixels scaled to [0,1], with their labels.
pub fn load_idx(images: &Path, labels: &Path, num_classes: usize, split: Split) -> Result<Dataset> {
    let img = read_maybe_gz(images)?;
    if be_u32(&img, 0, images)? != IDX_IMAGES {
        return Err(Error::Format(format!("{}: not an IDX image file", images.display())));
    }
    let n = be_u32(&img, 4, images)? as usize;
    let rows = be_u32(&img, 8, images)? as usize;
    let cols = be_u32(&img, 12, images)? as usize;
    let dim = rows * cols;
    let pixels = &img[16..];
    if pixels.len() != n * dim {
        return Err(Error::Consistency(format!(
            "{}: expected {} pixel bytes, found {}",
            images.display(),
            n * dim,
            pixels.len()
        )));
    }
    let lab = read_maybe_gz(labels)?;
    if be_u32(&lab, 0, labels)? != IDX_LABELS {
        return Err(Error::Format(format!("{}: not an IDX label file", labels.display())));
    }
    let nl = be_u32(&lab, 4, labels)? as usize;
    if nl != n || lab.len() != 8 + n {
        return Err(Error::Consistency(format!(
            "{} images but {} labels ({} label bytes)",
            n,
            nl,
            lab.len().saturating_sub(8)
        )));
    }
    let features = Array2::from_shape_vec((n, dim), pixels.iter().map(|&p| p as f64 / 255.0).collect())
        .map_err(|e| Error::Dimension(e.to_string()))?;
    let labels_vec = lab[8..].iter().map(|&y| y as usize).collect();
    Dataset::new(features, labels_vec, num_classes, split, images.display().to_string())
}

/// Write an IDX image/label pair; `pixels` holds `count·rows·cols` bytes.
pub fn write_idx(
    images: &Path,
    labels: &Path,
    pixels: &[u8],
    rows: usize,
    cols: usize,
    label_bytes: &[u8],
) -> Result<()> {
    let n = label_bytes.len();
    if pixels.len() != n * rows * cols {
        return Err(Error::Consistency(format!(
            "{} pixel bytes for {n} images of {rows}×{cols}",
            pixels.len()
        )));
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    img.extend_from_slice(&IDX_IMAGES.to_be_bytes());
    for v in [n, rows, cols] {
        img.extend_from_slice(&u32_of(v)?.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    fs::write(images, img).map_err(|e| Error::file(images, e))?;
    let mut lab = Vec::with_capacity(8 + n);
    lab.extend_from_slice(&IDX_LABELS.to_be_bytes());
    lab.extend_from_slice(&u32_of(n)?.to_be_bytes());
    lab.extend_from_slice(label_bytes);
    fs::write(labels, lab).map_err(|e| Error::file(labels, e))
}

/// `--data-dir` if given, else `$SPARSE_POSTERIOR_DATA`.
pub fn resolve_data_dir(flag: Option<&Path>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
}

fn find_file(dir: &Path, stem: &str) -> Option<PathBuf> {
    [stem.to_string(), format!("{stem}.gz")]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
}

/// Fashion-MNIST split from the standard file names (optionally `.gz`).
pub fn load_fmnist(dir: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let missing = |what: &str| {
        Error::file(
            dir.join(format!("{prefix}-{what}-idx*-ubyte")),
            std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found"),
        )
    };
    let images = find_file(dir, &format!("{prefix}-images-idx3-ubyte")).ok_or_else(|| missing("images"))?;
    let labels = find_file(dir, &format!("{prefix}-labels-idx1-ubyte")).ok_or_else(|| missing("labels"))?;
    load_idx(&images, &labels, 10, split)
}

/// Both FMNIST splits if the files are present under `dir`.
pub fn fmnist_available(dir: &Path) -> bool {
    ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"]
        .iter()
        .all(|s| find_file(dir, s).is_some())
}
