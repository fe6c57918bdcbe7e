use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{GeometryError, MatrixPair};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One matrix: raw little-endian f32, row-major, no header, at `byte_offset`
/// inside `file` (relative to the manifest's directory).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub file: PathBuf,
    pub byte_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorManifest {
    pub entries: Vec<ManifestEntry>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> GeometryError + '_ {
    move |source| GeometryError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// All matrices of one phase directory, by name.
pub fn load_phase(dir: &Path) -> Result<BTreeMap<String, DMatrix<f64>>, GeometryError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io(&manifest_path))?;
    let manifest: TensorManifest = serde_json::from_str(&text)
        .map_err(|e| GeometryError::SchemaViolation(format!("{}: {e}", manifest_path.display())))?;

    let mut out = BTreeMap::new();
    let mut files: BTreeMap<PathBuf, Vec<u8>> = BTreeMap::new();
    for e in &manifest.entries {
        if e.dtype != "f32" {
            return Err(GeometryError::SchemaViolation(format!(
                "`{}` has dtype {}, expected f32",
                e.name, e.dtype
            )));
        }
        if e.rows == 0 || e.cols == 0 {
            return Err(GeometryError::SchemaViolation(format!(
                "`{}` has an empty shape",
                e.name
            )));
        }
        if e.file.is_absolute()
            || e.file
                .components()
                .any(|c| matches!(c, std::path::Component::ParentDir))
        {
            return Err(GeometryError::SchemaViolation(format!(
                "`{}` file must stay inside the directory",
                e.name
            )));
        }
        let path = dir.join(&e.file);
        if !files.contains_key(&path) {
            let bytes = fs::read(&path).map_err(io(&path))?;
            files.insert(path.clone(), bytes);
        }
        let bytes = &files[&path];
        let len = (e.rows * e.cols * 4) as u64;
        let start = e.byte_offset;
        if start.checked_add(len).is_none_or(|end| end > bytes.len() as u64) {
            return Err(GeometryError::ShapeMismatch(format!(
                "`{}` declares {}x{} at offset {start} but {} holds {} bytes",
                e.name,
                e.rows,
                e.cols,
                path.display(),
                bytes.len()
            )));
        }
        let data = &bytes[start as usize..(start + len) as usize];
        let values: Vec<f64> = data
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let matrix = DMatrix::from_row_slice(e.rows, e.cols, &values);
        if out.insert(e.name.clone(), matrix).is_some() {
            return Err(GeometryError::SchemaViolation(format!(
                "duplicate tensor name `{}`",
                e.name
            )));
        }
    }
    Ok(out)
}

/// Pair matrices of two phase directories by name.
pub fn load_pairs(pre_dir: &Path, post_dir: &Path) -> Result<Vec<MatrixPair>, GeometryError> {
    let mut pre = load_phase(pre_dir)?;
    let mut post = load_phase(post_dir)?;
    let names: BTreeSet<String> = pre.keys().chain(post.keys()).cloned().collect();
    names
        .into_iter()
        .map(|name| {
            let w = pre
                .remove(&name)
                .ok_or_else(|| GeometryError::MissingPhase(name.clone()))?;
            let w_prime = post
                .remove(&name)
                .ok_or_else(|| GeometryError::MissingPhase(name.clone()))?;
            MatrixPair::new(name, w, w_prime)
        })
        .collect()
}

/// Pairs from a directory holding `pre/` and `post/` phase subdirectories.
pub fn load_manifest(dir: &Path) -> Result<Vec<MatrixPair>, GeometryError> {
    load_pairs(&dir.join("pre"), &dir.join("post"))
}

/// Write matrices as one `.bin` file per tensor plus the manifest.
pub fn write_phase(dir: &Path, tensors: &[(&str, &DMatrix<f64>)]) -> Result<(), GeometryError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, m) in tensors {
        let file = PathBuf::from(format!("{name}.bin"));
        let mut bytes = Vec::with_capacity(m.len() * 4);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                bytes.extend_from_slice(&(m[(i, j)] as f32).to_le_bytes());
            }
        }
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(io(&path))?;
        entries.push(ManifestEntry {
            name: name.to_string(),
            rows: m.nrows(),
            cols: m.ncols(),
            dtype: "f32".into(),
            file,
            byte_offset: 0,
        });
    }
    let path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(&TensorManifest { entries }).expect("serializable");
    text.push('\n');
    fs::write(&path, text).map_err(io(&path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer() -> DMatrix<f64> {
        DMatrix::from_fn(4, 4, |i, j| (i * 4 + j) as f64 * 0.5)
    }

    #[test]
    fn one_pair() {
        let tmp = tempfile::tempdir().unwrap();
        write_phase(&tmp.path().join("pre"), &[("layer0", &layer())]).unwrap();
        write_phase(&tmp.path().join("post"), &[("layer0", &(layer() * 2.0))]).unwrap();
        let pairs = load_manifest(tmp.path()).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].w, layer());
        assert_eq!(pairs[0].w_prime, layer() * 2.0);
    }

    #[test]
    fn missing_phase() {
        let tmp = tempfile::tempdir().unwrap();
        write_phase(&tmp.path().join("pre"), &[("layer0", &layer())]).unwrap();
        write_phase(&tmp.path().join("post"), &[("layer1", &layer())]).unwrap();
        assert!(matches!(load_manifest(tmp.path()), Err(GeometryError::MissingPhase(_))));
    }

    #[test]
    fn short_file_is_shape_mismatch() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("pre");
        write_phase(&dir, &[("layer0", &layer())]).unwrap();
        fs::write(dir.join("layer0.bin"), vec![0u8; 12 * 4]).unwrap();
        assert!(matches!(load_phase(&dir), Err(GeometryError::ShapeMismatch(_))));
    }

    #[test]
    fn offsets_and_dtype() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        let mut bytes = Vec::new();
        for v in [9.0f32, 1.0, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(dir.join("packed.bin"), bytes).unwrap();
        let manifest =
            r#"{"entries":[{"name":"a","rows":2,"cols":2,"dtype":"f32","file":"packed.bin","byte_offset":4}]}"#;
        fs::write(dir.join(MANIFEST_FILE), manifest).unwrap();
        let m = load_phase(dir).unwrap();
        assert_eq!(m["a"], DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        fs::write(dir.join(MANIFEST_FILE), manifest.replace("f32", "f16")).unwrap();
        assert!(matches!(load_phase(dir), Err(GeometryError::SchemaViolation(_))));
    }
}
