//! On-disk weight container: a directory holding `manifest.json` and one
//! little-endian `f32` row-major blob per stored array.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::layer::{Activation, LayerSlot};
use super::net::DenseNet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_NAME: &str = "rmtprune-weights";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Full,
    Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobEntry {
    pub file: String,
    /// `[rows, cols]` for matrices, `[len]` for vectors.
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub kind: SlotKind,
    pub out_dim: usize,
    pub in_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    /// `[W]` or `[W1, W2]`.
    pub weights: Vec<BlobEntry>,
    pub bias: BlobEntry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub activation: Activation,
    pub final_activation: bool,
    pub topology: Vec<usize>,
    pub layers: Vec<LayerEntry>,
}

fn write_blob<'a, T: Scalar>(dir: &Path, file: &str, values: impl Iterator<Item = &'a T>) -> Result<()> {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
    let path = dir.join(file);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

fn read_blob<T: Scalar>(dir: &Path, entry: &BlobEntry) -> Result<Vec<T>> {
    if entry.file.contains('/') || entry.file.contains('\\') || entry.file.starts_with('.') {
        return Err(Error::format(
            dir.join(MANIFEST),
            format!("blob name {:?} is not a plain file name", entry.file),
        ));
    }
    let path = dir.join(&entry.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let want: usize = entry.shape.iter().product();
    if bytes.len() != 4 * want {
        return Err(Error::format(
            &path,
            format!(
                "{} bytes, expected {} for shape {:?}",
                bytes.len(),
                4 * want,
                entry.shape
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect())
}

fn read_matrix<T: Scalar>(dir: &Path, entry: &BlobEntry) -> Result<Array2<T>> {
    let &[r, c] = entry.shape.as_slice() else {
        return Err(Error::format(
            dir.join(MANIFEST),
            format!("{} is not a matrix: {:?}", entry.file, entry.shape),
        ));
    };
    let v = read_blob(dir, entry)?;
    Array2::from_shape_vec((r, c), v).map_err(|e| Error::format(dir.join(&entry.file), e.to_string()))
}

/// Write `net` into `dir`, creating it if needed.
pub fn save<T: Scalar>(net: &DenseNet<T>, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut layers = Vec::with_capacity(net.depth());
    for (l, slot) in net.slots.iter().enumerate() {
        let mats = slot.matrices();
        let names: Vec<String> = if mats.len() == 1 {
            vec![format!("layer{l}_w.f32")]
        } else {
            vec![format!("layer{l}_w1.f32"), format!("layer{l}_w2.f32")]
        };
        let mut weights = Vec::new();
        for (m, name) in mats.iter().zip(names) {
            write_blob(dir, &name, m.iter())?;
            weights.push(BlobEntry {
                file: name,
                shape: vec![m.nrows(), m.ncols()],
            });
        }
        let bias_name = format!("layer{l}_bias.f32");
        write_blob(dir, &bias_name, slot.bias().iter())?;
        layers.push(LayerEntry {
            kind: if slot.is_split() {
                SlotKind::Split
            } else {
                SlotKind::Full
            },
            out_dim: slot.out_dim(),
            in_dim: slot.in_dim(),
            rank: slot.rank(),
            weights,
            bias: BlobEntry {
                file: bias_name,
                shape: vec![slot.out_dim()],
            },
        });
    }
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        activation: net.activation,
        final_activation: net.final_activation,
        topology: net.topology(),
        layers,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if m.format != FORMAT_NAME || m.version != FORMAT_VERSION {
        return Err(Error::format(
            &path,
            format!(
                "unsupported container {} v{}; expected {FORMAT_NAME} v{FORMAT_VERSION}",
                m.format, m.version
            ),
        ));
    }
    Ok(m)
}

pub fn load<T: Scalar>(dir: &Path) -> Result<DenseNet<T>> {
    let m = read_manifest(dir)?;
    let mpath = dir.join(MANIFEST);
    let mut slots = Vec::with_capacity(m.layers.len());
    for (l, e) in m.layers.iter().enumerate() {
        let bias = Array1::from(read_blob::<T>(dir, &e.bias)?);
        let slot = match (e.kind, e.weights.as_slice()) {
            (SlotKind::Full, [w]) => LayerSlot::full(read_matrix(dir, w)?, bias)?,
            (SlotKind::Split, [w1, w2]) => LayerSlot::split(read_matrix(dir, w1)?, read_matrix(dir, w2)?, bias)?,
            (kind, w) => {
                return Err(Error::format(
                    &mpath,
                    format!("layer {l}: {kind:?} slot with {} weight blobs", w.len()),
                ));
            }
        };
        if slot.out_dim() != e.out_dim || slot.in_dim() != e.in_dim || slot.rank() != e.rank {
            return Err(Error::format(
                &mpath,
                format!("layer {l}: blob shapes disagree with the declared dimensions"),
            ));
        }
        slots.push(slot);
    }
    let net =
        DenseNet::new(slots, m.activation, m.final_activation).map_err(|e| Error::format(&mpath, e.to_string()))?;
    if net.topology() != m.topology {
        return Err(Error::format(
            &mpath,
            format!("topology {:?} disagrees with layers {:?}", m.topology, net.topology()),
        ));
    }
    Ok(net)
}
