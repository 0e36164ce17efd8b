//! Directory container: `manifest.json` plus one little-endian `.bin` per
//! array (`complex64` as interleaved re/im `f32`, `float32` for reals).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use promptmr_core::phantom::{CaseRecord, PhantomSpec};
use promptmr_core::physics::{CoilSensitivities, ComplexArray, FrameAxis, KSpaceVolume, UndersampleMask};
use promptmr_core::{Complex64, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, AppResult};

pub const CASE_MAGIC: &str = "PROMPTMR-CASE";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Complex64,
    Float32,
}

impl Dtype {
    fn bytes_per_element(self) -> u64 {
        match self {
            Dtype::Complex64 => 8,
            Dtype::Float32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub file: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    /// Axis names, slowest first (row-major).
    pub axes: Vec<String>,
    pub byte_length: u64,
}

/// What a container holds; readers ignore keys they do not know.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub magic: String,
    pub format_version: u32,
    pub kind: String,
    pub frame_axis: FrameAxis,
    #[serde(default)]
    pub spec: Option<PhantomSpec>,
    #[serde(default)]
    pub mask: Option<UndersampleMask>,
    /// Free-form string metadata (case name, task, stage tags, ...).
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    pub arrays: BTreeMap<String, ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    Complex(ComplexArray),
    Real(Tensor),
}

impl ArrayData {
    fn dtype(&self) -> Dtype {
        match self {
            ArrayData::Complex(_) => Dtype::Complex64,
            ArrayData::Real(_) => Dtype::Float32,
        }
    }

    fn shape(&self) -> &[usize] {
        match self {
            ArrayData::Complex(c) => c.shape(),
            ArrayData::Real(t) => t.shape(),
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        match self {
            ArrayData::Complex(c) => c
                .data()
                .iter()
                .flat_map(|v| [(v.re as f32).to_le_bytes(), (v.im as f32).to_le_bytes()])
                .flatten()
                .collect(),
            ArrayData::Real(t) => t.data().iter().flat_map(|v| (*v as f32).to_le_bytes()).collect(),
        }
    }
}

/// A container in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub manifest: Manifest,
    pub arrays: BTreeMap<String, ArrayData>,
}

impl Container {
    pub fn new(kind: &str, frame_axis: FrameAxis) -> Self {
        Self {
            manifest: Manifest {
                magic: CASE_MAGIC.into(),
                format_version: FORMAT_VERSION,
                kind: kind.into(),
                frame_axis,
                spec: None,
                mask: None,
                meta: BTreeMap::new(),
                arrays: BTreeMap::new(),
            },
            arrays: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, axes: &[&str], data: ArrayData) {
        assert_eq!(axes.len(), data.shape().len(), "axis names for {name}");
        let entry = ArrayEntry {
            file: format!("{name}.bin"),
            dtype: data.dtype(),
            shape: data.shape().to_vec(),
            axes: axes.iter().map(|s| s.to_string()).collect(),
            byte_length: data.shape().iter().product::<usize>() as u64 * data.dtype().bytes_per_element(),
        };
        self.manifest.arrays.insert(name.into(), entry);
        self.arrays.insert(name.into(), data);
    }

    pub fn real(&self, name: &str) -> AppResult<&Tensor> {
        match self.arrays.get(name) {
            Some(ArrayData::Real(t)) => Ok(t),
            Some(_) => Err(AppError::Data(format!("array {name} is not float32"))),
            None => Err(AppError::Data(format!("missing array {name}"))),
        }
    }

    pub fn complex(&self, name: &str) -> AppResult<&ComplexArray> {
        match self.arrays.get(name) {
            Some(ArrayData::Complex(c)) => Ok(c),
            Some(_) => Err(AppError::Data(format!("array {name} is not complex64"))),
            None => Err(AppError::Data(format!("missing array {name}"))),
        }
    }

    pub fn meta(&self, key: &str) -> AppResult<&str> {
        self.manifest
            .meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| AppError::Data(format!("manifest lacks meta.{key}")))
    }

    pub fn write(&self, dir: &Path) -> AppResult<()> {
        fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
        for (name, data) in &self.arrays {
            let p = dir.join(&self.manifest.arrays[name].file);
            fs::write(&p, data.to_bytes()).map_err(|e| AppError::io(&p, e))?;
        }
        let p = dir.join(MANIFEST);
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&p, json + "\n").map_err(|e| AppError::io(&p, e))
    }

    pub fn read(dir: &Path) -> AppResult<Self> {
        let p = dir.join(MANIFEST);
        let text = fs::read_to_string(&p).map_err(|e| AppError::io(&p, e))?;
        let raw: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| AppError::Data(format!("{}: {e}", p.display())))?;
        match raw.get("magic").and_then(|m| m.as_str()) {
            Some(CASE_MAGIC) => {}
            other => return Err(AppError::Data(format!("{}: bad magic {other:?}", p.display()))),
        }
        match raw.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            other => return Err(AppError::Data(format!("{}: unsupported format_version {other:?}", p.display()))),
        }
        let manifest: Manifest =
            serde_json::from_value(raw).map_err(|e| AppError::Data(format!("{}: {e}", p.display())))?;
        let mut arrays = BTreeMap::new();
        for (name, entry) in &manifest.arrays {
            let n: usize = entry.shape.iter().product();
            let expected = n as u64 * entry.dtype.bytes_per_element();
            if entry.byte_length != expected {
                return Err(AppError::Data(format!(
                    "array {name}: byte_length {} does not match shape {:?}",
                    entry.byte_length, entry.shape
                )));
            }
            if entry.axes.len() != entry.shape.len() {
                return Err(AppError::Data(format!("array {name}: axes do not match shape")));
            }
            if entry.file.contains('/') || entry.file.contains('\\') || entry.file.starts_with('.') {
                return Err(AppError::Data(format!("array {name}: invalid file name {}", entry.file)));
            }
            let f = dir.join(&entry.file);
            let bytes = fs::read(&f).map_err(|e| AppError::io(&f, e))?;
            if bytes.len() as u64 != expected {
                return Err(AppError::Data(format!(
                    "{}: expected {expected} bytes, found {}",
                    f.display(),
                    bytes.len()
                )));
            }
            let floats: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            let data = match entry.dtype {
                Dtype::Float32 => ArrayData::Real(Tensor::new(&entry.shape, floats)?),
                Dtype::Complex64 => ArrayData::Complex(ComplexArray::new(
                    &entry.shape,
                    floats.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect(),
                )?),
            };
            arrays.insert(name.clone(), data);
        }
        Ok(Self { manifest, arrays })
    }
}

pub const KIND_CASE: &str = "case";
pub const KIND_RECON: &str = "reconstruction";

/// Container for a simulated case.
pub fn case_container(case: &CaseRecord) -> Container {
    let mut c = Container::new(KIND_CASE, case.kspace.frame_axis);
    c.manifest.spec = Some(case.spec.clone());
    c.insert("kspace", &["frame", "coil", "ky", "kx"], ArrayData::Complex(case.kspace.data.clone()));
    c.insert("target", &["frame", "ky", "kx"], ArrayData::Real(case.target.clone()));
    c.insert("sens_true", &["coil", "ky", "kx"], ArrayData::Complex(case.sens_true.maps.clone()));
    c
}

pub fn write_case(case: &CaseRecord, dir: &Path) -> AppResult<()> {
    case_container(case).write(dir)
}

pub fn read_case(dir: &Path) -> AppResult<CaseRecord> {
    let c = Container::read(dir)?;
    if c.manifest.kind != KIND_CASE {
        return Err(AppError::Data(format!("{}: not a case container ({})", dir.display(), c.manifest.kind)));
    }
    let spec = c
        .manifest
        .spec
        .clone()
        .ok_or_else(|| AppError::Data(format!("{}: manifest lacks spec", dir.display())))?;
    let kspace = KSpaceVolume::new(c.complex("kspace")?.clone(), c.manifest.frame_axis)?;
    let target = c.real("target")?.clone();
    let sens_true = CoilSensitivities::new(c.complex("sens_true")?.clone())?;
    let [f, coils, h, w] = kspace.dims();
    if target.shape() != [f, h, w] || sens_true.dims() != [coils, h, w] {
        return Err(AppError::Data(format!("{}: inconsistent array shapes", dir.display())));
    }
    if spec.grid != [h, w] || spec.n_frames != f || spec.n_coils != coils || spec.frame_axis != c.manifest.frame_axis {
        return Err(AppError::Data(format!("{}: spec disagrees with array shapes", dir.display())));
    }
    Ok(CaseRecord { kspace, target, sens_true, spec })
}

/// Mask as a `[ky]` 0/1 array.
pub fn mask_array(mask: &UndersampleMask) -> ArrayData {
    ArrayData::Real(
        Tensor::new(&[mask.len()], mask.keep.iter().map(|&k| if k { 1.0 } else { 0.0 }).collect())
            .expect("mask shape"),
    )
}
