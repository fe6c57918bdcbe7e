//! Atomic output directories.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{0} exists and is not empty (use --force to replace it)")]
    NotEmpty(PathBuf),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// True when `dir` exists and holds at least one entry.
pub fn is_non_empty_dir(dir: &Path) -> bool {
    fs::read_dir(dir).map(|mut it| it.next().is_some()).unwrap_or(false)
}

/// Populate a sibling staging directory with `fill`, then swap it into place.
///
/// On failure the staging directory is removed and `out` is left untouched.
/// An existing non-empty `out` is replaced only when `force` is set.
pub fn write_dir_atomically<E, F>(out: &Path, force: bool, fill: F) -> Result<(), E>
where
    E: From<OutputError>,
    F: FnOnce(&Path) -> Result<(), E>,
{
    if is_non_empty_dir(out) && !force {
        return Err(OutputError::NotEmpty(out.to_path_buf()).into());
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io_err(&parent))?;
    let name = out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let pid = std::process::id();
    let staging = parent.join(format!(".{name}.staging-{pid}"));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    fs::create_dir_all(&staging).map_err(io_err(&staging))?;

    if let Err(e) = fill(&staging) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }

    if out.exists() {
        let old = parent.join(format!(".{name}.old-{pid}"));
        fs::rename(out, &old).map_err(io_err(out))?;
        fs::rename(&staging, out).map_err(io_err(out))?;
        fs::remove_dir_all(&old).map_err(io_err(&old))?;
    } else {
        fs::rename(&staging, out).map_err(io_err(out))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refuses_non_empty_without_force_and_cleans_up_on_error() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("bundle");
        write_dir_atomically::<OutputError, _>(&out, false, |d| fs::write(d.join("a.txt"), "1").map_err(io_err(d)))
            .unwrap();
        assert_eq!(fs::read_to_string(out.join("a.txt")).unwrap(), "1");

        let err = write_dir_atomically::<OutputError, _>(&out, false, |_| Ok(())).unwrap_err();
        assert!(matches!(err, OutputError::NotEmpty(_)));

        let err = write_dir_atomically::<OutputError, _>(&out, true, |d| {
            fs::write(d.join("b.txt"), "2").unwrap();
            Err(OutputError::NotEmpty(d.to_path_buf()))
        });
        assert!(err.is_err());
        assert!(out.join("a.txt").exists());
        assert!(!out.join("b.txt").exists());
        assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 1);

        write_dir_atomically::<OutputError, _>(&out, true, |d| fs::write(d.join("b.txt"), "2").map_err(io_err(d)))
            .unwrap();
        assert!(!out.join("a.txt").exists());
        assert!(out.join("b.txt").exists());
    }
}
