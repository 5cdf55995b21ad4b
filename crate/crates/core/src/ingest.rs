//! Checkpoint bundle reader.
//!
//! A bundle is a directory (or a zip archive with the same layout) holding a
//! `manifest.json` and one raw little-endian `f32` file per tensor.

use std::collections::HashSet;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorKind {
    Weight,
    Bias,
    Excluded,
}

impl TensorKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "weight" => Some(TensorKind::Weight),
            "bias" => Some(TensorKind::Bias),
            "excluded" => Some(TensorKind::Excluded),
            _ => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            TensorKind::Weight => "weight",
            TensorKind::Bias => "bias",
            TensorKind::Excluded => "excluded",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    /// Row-major.
    pub data: Vec<f32>,
}

impl TensorRecord {
    pub fn new(
        name: impl Into<String>,
        kind: TensorKind,
        shape: Vec<usize>,
        data: Vec<f32>,
    ) -> Result<Self> {
        let record = TensorRecord {
            name: name.into(),
            kind,
            shape,
            data,
        };
        record.check()?;
        Ok(record)
    }

    pub fn weight(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(name, TensorKind::Weight, vec![rows, cols], data)
    }

    pub fn bias(name: impl Into<String>, data: Vec<f32>) -> Result<Self> {
        let len = data.len();
        Self::new(name, TensorKind::Bias, vec![len], data)
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_included(&self) -> bool {
        self.kind != TensorKind::Excluded
    }

    /// `(rows, cols)` of a weight matrix.
    pub fn matrix_dims(&self) -> Option<(usize, usize)> {
        match (self.kind, self.shape.as_slice()) {
            (TensorKind::Weight, &[r, c]) => Some((r, c)),
            _ => None,
        }
    }

    fn check(&self) -> Result<()> {
        let err = |message: String| Error::Tensor {
            name: self.name.clone(),
            message,
        };
        if self.shape.is_empty() || self.shape.contains(&0) {
            return Err(err(format!("shape {:?} must have positive extents", self.shape)));
        }
        match self.kind {
            TensorKind::Weight if self.shape.len() != 2 => {
                return Err(err(format!("weight must be 2-D, got shape {:?}", self.shape)))
            }
            TensorKind::Bias if self.shape.len() != 1 => {
                return Err(err(format!("bias must be 1-D, got shape {:?}", self.shape)))
            }
            _ => {}
        }
        if self.element_count() != self.data.len() {
            return Err(err(format!(
                "length mismatch: shape {:?} needs {} values, found {}",
                self.shape,
                self.element_count(),
                self.data.len()
            )));
        }
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteTensor {
                name: self.name.clone(),
                index,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSnapshot {
    pub seed: i64,
    pub step: u64,
    pub eval_accuracy: Option<f64>,
    pub tensors: Vec<TensorRecord>,
}

impl WeightSnapshot {
    pub fn new(
        seed: i64,
        step: u64,
        eval_accuracy: Option<f64>,
        tensors: Vec<TensorRecord>,
    ) -> Result<Self> {
        let snapshot = WeightSnapshot {
            seed,
            step,
            eval_accuracy,
            tensors,
        };
        snapshot.check()?;
        Ok(snapshot)
    }

    pub fn weights(&self) -> impl Iterator<Item = &TensorRecord> {
        self.tensors.iter().filter(|t| t.kind == TensorKind::Weight)
    }

    pub fn biases(&self) -> impl Iterator<Item = &TensorRecord> {
        self.tensors.iter().filter(|t| t.kind == TensorKind::Bias)
    }

    fn check(&self) -> Result<()> {
        if let Some(acc) = self.eval_accuracy {
            if !(0.0..=1.0).contains(&acc) {
                return Err(Error::Manifest {
                    field: "eval_accuracy".into(),
                    message: format!("{acc} is outside [0, 1]"),
                });
            }
        }
        let mut seen = HashSet::new();
        for tensor in &self.tensors {
            if !seen.insert(tensor.name.as_str()) {
                return Err(Error::Tensor {
                    name: tensor.name.clone(),
                    message: "duplicate tensor name".into(),
                });
            }
            tensor.check()?;
        }
        if self.weights().next().is_none() {
            return Err(Error::NoWeightMatrices);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: String,
    pub dtype: String,
    pub shape: Vec<i64>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: i64,
    pub step: i64,
    pub eval_accuracy: Option<f64>,
    pub tensors: Vec<TensorEntry>,
}

pub fn validate_manifest(manifest: &Manifest) -> Result<()> {
    let fail = |field: String, message: String| Err(Error::Manifest { field, message });
    if manifest.format_version != FORMAT_VERSION {
        return fail(
            "format_version".into(),
            format!("unknown format_version {}", manifest.format_version),
        );
    }
    if manifest.step < 0 {
        return fail("step".into(), format!("step {} is negative", manifest.step));
    }
    if let Some(acc) = manifest.eval_accuracy {
        if !acc.is_finite() || !(0.0..=1.0).contains(&acc) {
            return fail("eval_accuracy".into(), format!("{acc} is outside [0, 1]"));
        }
    }
    let mut names = HashSet::new();
    for (i, entry) in manifest.tensors.iter().enumerate() {
        let field = |f: &str| format!("tensors[{i}].{f}");
        if !names.insert(entry.name.as_str()) {
            return fail(field("name"), format!("duplicate tensor name `{}`", entry.name));
        }
        let Some(kind) = TensorKind::parse(&entry.kind) else {
            return fail(field("kind"), format!("illegal kind `{}`", entry.kind));
        };
        if entry.dtype != "f32" {
            return fail(field("dtype"), format!("unsupported dtype `{}`", entry.dtype));
        }
        if entry.shape.is_empty() || entry.shape.iter().any(|&n| n <= 0) {
            return fail(
                field("shape"),
                format!("shape {:?} must have positive extents", entry.shape),
            );
        }
        let rank_ok = match kind {
            TensorKind::Weight => entry.shape.len() == 2,
            TensorKind::Bias => entry.shape.len() == 1,
            TensorKind::Excluded => true,
        };
        if !rank_ok {
            return fail(
                field("shape"),
                format!("kind `{}` cannot have shape {:?}", entry.kind, entry.shape),
            );
        }
        if entry.file.is_empty() {
            return fail(field("file"), "empty file name".into());
        }
    }
    Ok(())
}

/// Source of bundle members, either a directory or a zip archive.
enum BundleSource {
    Dir(PathBuf),
    Zip(PathBuf, zip::ZipArchive<fs::File>),
}

impl BundleSource {
    fn open(path: &Path) -> Result<Self> {
        let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
        if meta.is_dir() {
            return Ok(BundleSource::Dir(path.to_path_buf()));
        }
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let archive = zip::ZipArchive::new(file).map_err(|e| Error::ManifestParse {
            path: path.to_path_buf(),
            message: format!("not a bundle directory or zip archive: {e}"),
        })?;
        Ok(BundleSource::Zip(path.to_path_buf(), archive))
    }

    fn root(&self) -> &Path {
        match self {
            BundleSource::Dir(p) | BundleSource::Zip(p, _) => p,
        }
    }

    /// Reads a member; `Ok(None)` when it does not exist.
    fn read(&mut self, name: &str) -> Result<Option<Vec<u8>>> {
        match self {
            BundleSource::Dir(dir) => {
                let path = dir.join(name);
                match fs::read(&path) {
                    Ok(bytes) => Ok(Some(bytes)),
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                    Err(e) => Err(Error::io(path, e)),
                }
            }
            BundleSource::Zip(path, archive) => {
                let mut member = match archive.by_name(name) {
                    Ok(m) => m,
                    Err(zip::result::ZipError::FileNotFound) => return Ok(None),
                    Err(e) => {
                        return Err(Error::io(
                            path.join(name),
                            std::io::Error::other(e.to_string()),
                        ))
                    }
                };
                let mut bytes = Vec::with_capacity(member.size() as usize);
                member
                    .read_to_end(&mut bytes)
                    .map_err(|e| Error::io(path.join(name), e))?;
                Ok(Some(bytes))
            }
        }
    }
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<WeightSnapshot> {
    let path = path.as_ref();
    let mut source = BundleSource::open(path)?;
    let manifest_bytes = source
        .read(MANIFEST_NAME)?
        .ok_or_else(|| Error::MissingManifest {
            path: path.to_path_buf(),
        })?;
    let manifest: Manifest =
        serde_json::from_slice(&manifest_bytes).map_err(|e| Error::ManifestParse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    validate_manifest(&manifest)?;

    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for entry in &manifest.tensors {
        let bytes = source.read(&entry.file)?.ok_or_else(|| Error::Tensor {
            name: entry.name.clone(),
            message: format!("file `{}` not found in {}", entry.file, source.root().display()),
        })?;
        let shape: Vec<usize> = entry.shape.iter().map(|&n| n as usize).collect();
        let expected = 4 * shape.iter().product::<usize>();
        if bytes.len() != expected {
            return Err(Error::Tensor {
                name: entry.name.clone(),
                message: format!(
                    "length mismatch: shape {:?} needs {} bytes, file holds {} ({} floats)",
                    shape,
                    expected,
                    bytes.len(),
                    bytes.len() as f64 / 4.0
                ),
            });
        }
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let kind = TensorKind::parse(&entry.kind).expect("validated kind");
        tensors.push(TensorRecord::new(entry.name.clone(), kind, shape, data)?);
    }

    WeightSnapshot::new(
        manifest.seed,
        manifest.step as u64,
        manifest.eval_accuracy,
        tensors,
    )
}

/// Writes `snapshot` as a bundle directory, creating it if needed.
pub fn write_bundle(snapshot: &WeightSnapshot, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(snapshot.tensors.len());
    for (i, tensor) in snapshot.tensors.iter().enumerate() {
        let file = format!("tensor_{i:04}.bin");
        let bytes: Vec<u8> = tensor.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(path, e))?;
        entries.push(TensorEntry {
            name: tensor.name.clone(),
            kind: tensor.kind.as_str().into(),
            dtype: "f32".into(),
            shape: tensor.shape.iter().map(|&n| n as i64).collect(),
            file,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        seed: snapshot.seed,
        step: snapshot.step as i64,
        eval_accuracy: snapshot.eval_accuracy,
        tensors: entries,
    };
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn manifest_with(entries: Vec<TensorEntry>) -> Manifest {
        Manifest {
            format_version: 1,
            seed: 3,
            step: 10,
            eval_accuracy: Some(0.5),
            tensors: entries,
        }
    }

    fn entry(name: &str, kind: &str, shape: &[i64]) -> TensorEntry {
        TensorEntry {
            name: name.into(),
            kind: kind.into(),
            dtype: "f32".into(),
            shape: shape.to_vec(),
            file: format!("{name}.bin"),
        }
    }

    fn write_raw(dir: &Path, manifest: &Manifest, files: &[(&str, &[f32])]) {
        fs::write(dir.join(MANIFEST_NAME), serde_json::to_vec(manifest).unwrap()).unwrap();
        for (name, data) in files {
            let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(dir.join(name), bytes).unwrap();
        }
    }

    #[test]
    fn minimal_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(vec![entry("fc.weight", "weight", &[2, 2])]);
        write_raw(dir.path(), &m, &[("fc.weight.bin", &[1.0, 2.0, 3.0, 4.0])]);
        let snap = read_bundle(dir.path()).unwrap();
        assert_eq!(snap.weights().count(), 1);
        assert_eq!(snap.biases().count(), 0);
        assert_eq!(snap.tensors[0].data, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(snap.eval_accuracy, Some(0.5));
    }

    #[test]
    fn short_file_is_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(vec![entry("w", "weight", &[2, 2])]);
        write_raw(dir.path(), &m, &[("w.bin", &[1.0, 2.0, 3.0])]);
        let err = read_bundle(dir.path()).unwrap_err();
        assert!(err.to_string().contains("length mismatch"), "{err}");
    }

    #[test]
    fn excluded_tensor_is_retained() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(vec![
            entry("embed.weight", "excluded", &[3, 2]),
            entry("fc.weight", "weight", &[1, 2]),
        ]);
        write_raw(
            dir.path(),
            &m,
            &[("embed.weight.bin", &[0.0; 6]), ("fc.weight.bin", &[1.0, 1.0])],
        );
        let snap = read_bundle(dir.path()).unwrap();
        assert_eq!(snap.tensors.len(), 2);
        assert_eq!(snap.tensors[0].kind, TensorKind::Excluded);
        assert!(!snap.tensors[0].is_included());
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_bundle(dir.path()),
            Err(Error::MissingManifest { .. })
        ));
    }

    #[test]
    fn non_finite_value_reports_index() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(vec![entry("w", "weight", &[1, 3])]);
        write_raw(dir.path(), &m, &[("w.bin", &[1.0, f32::NAN, 0.0])]);
        match read_bundle(dir.path()) {
            Err(Error::NonFiniteTensor { name, index }) => {
                assert_eq!(name, "w");
                assert_eq!(index, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_format_version() {
        let mut m = manifest_with(vec![entry("w", "weight", &[1, 1])]);
        m.format_version = 2;
        let err = validate_manifest(&m).unwrap_err();
        assert!(err.to_string().contains("format_version"));
    }

    #[test]
    fn manifest_validation() {
        let good = manifest_with(vec![entry("w", "weight", &[2, 2]), entry("b", "bias", &[2])]);
        validate_manifest(&good).unwrap();

        let dup = manifest_with(vec![entry("w", "weight", &[2, 2]), entry("w", "bias", &[2])]);
        let err = validate_manifest(&dup).unwrap_err().to_string();
        assert!(err.contains("tensors[1].name") && err.contains("`w`"), "{err}");

        let mut f64_entry = entry("w", "weight", &[2, 2]);
        f64_entry.dtype = "f64".into();
        let err = validate_manifest(&manifest_with(vec![f64_entry])).unwrap_err().to_string();
        assert!(err.contains("tensors[0].dtype") && err.contains("unsupported dtype"), "{err}");

        let bad_kind = manifest_with(vec![entry("w", "kernel", &[2, 2])]);
        assert!(validate_manifest(&bad_kind).is_err());

        let rank3 = manifest_with(vec![entry("w", "weight", &[2, 2, 2])]);
        assert!(validate_manifest(&rank3).is_err());
        let rank3_excluded = manifest_with(vec![entry("w", "excluded", &[2, 2, 2])]);
        validate_manifest(&rank3_excluded).unwrap();
    }

    #[test]
    fn all_excluded_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest_with(vec![entry("embed", "excluded", &[2, 2])]);
        write_raw(dir.path(), &m, &[("embed.bin", &[1.0; 4])]);
        assert!(matches!(read_bundle(dir.path()), Err(Error::NoWeightMatrices)));
    }

    #[test]
    fn zip_archive_layout() {
        let dir = tempfile::tempdir().unwrap();
        let zip_path = dir.path().join("bundle.zip");
        let m = manifest_with(vec![entry("w", "weight", &[1, 2]), entry("b", "bias", &[1])]);
        {
            let file = fs::File::create(&zip_path).unwrap();
            let mut writer = zip::ZipWriter::new(file);
            let opts = zip::write::SimpleFileOptions::default();
            writer.start_file(MANIFEST_NAME, opts).unwrap();
            writer.write_all(&serde_json::to_vec(&m).unwrap()).unwrap();
            writer.start_file("w.bin", opts).unwrap();
            writer.write_all(&[1.5f32, -2.0].map(f32::to_le_bytes).concat()).unwrap();
            writer.start_file("b.bin", opts).unwrap();
            writer.write_all(&0.25f32.to_le_bytes()).unwrap();
            writer.finish().unwrap();
        }
        let snap = read_bundle(&zip_path).unwrap();
        assert_eq!(snap.tensors[0].data, vec![1.5, -2.0]);
        assert_eq!(snap.tensors[1].data, vec![0.25]);
    }
}
