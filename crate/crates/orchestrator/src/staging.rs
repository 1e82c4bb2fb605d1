//! Content-addressed package staging under `<data_root>/packages/<checksum>`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use lambda_proto::{DesiredState, PutPackage};

use crate::supervisor::package_dir;

pub const META_FILE: &str = "package.json";
pub const ARCHIVE_FILE: &str = "archive";
pub const DESIRED_FILE: &str = "desired.json";

pub fn is_staged(data_root: &Path, checksum: &str) -> bool {
    package_dir(data_root, checksum).join(META_FILE).is_file()
}

/// Checksums referenced by `desired` that are not staged yet.
pub fn missing(data_root: &Path, desired: &DesiredState) -> Vec<String> {
    let mut out: Vec<String> =
        desired.functions.iter().map(|f| f.checksum.clone()).filter(|c| !is_staged(data_root, c)).collect();
    out.sort();
    out.dedup();
    out
}

/// Verifies and writes a fetched package. The directory appears atomically.
pub fn stage(data_root: &Path, pkg: &PutPackage) -> io::Result<PathBuf> {
    let bad = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
    match pkg.verify() {
        Ok(true) => {}
        Ok(false) => return Err(bad(format!("checksum mismatch for {}", pkg.meta.checksum))),
        Err(e) => return Err(bad(e.to_string())),
    }
    let dir = package_dir(data_root, &pkg.meta.checksum);
    if dir.join(META_FILE).is_file() {
        return Ok(dir);
    }
    let parent = dir.parent().expect("packages dir");
    fs::create_dir_all(parent)?;
    let tmp = parent.join(format!(".{}.tmp", pkg.meta.checksum));
    let _ = fs::remove_dir_all(&tmp);
    fs::create_dir_all(&tmp)?;
    fs::write(tmp.join(META_FILE), serde_json::to_vec_pretty(&pkg.meta)?)?;
    if pkg.blob.is_some() {
        let bytes = pkg.content().map_err(|e| bad(e.to_string()))?;
        fs::write(tmp.join(ARCHIVE_FILE), bytes)?;
    }
    fs::rename(&tmp, &dir)?;
    Ok(dir)
}

pub fn save_desired(data_root: &Path, desired: &DesiredState) -> io::Result<()> {
    fs::create_dir_all(data_root)?;
    let tmp = data_root.join(".desired.json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(desired)?)?;
    fs::rename(tmp, data_root.join(DESIRED_FILE))
}

pub fn load_desired(data_root: &Path) -> io::Result<Option<DesiredState>> {
    match fs::read(data_root.join(DESIRED_FILE)) {
        Ok(b) => Ok(Some(serde_json::from_slice(&b)?)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}
