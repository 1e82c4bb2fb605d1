//! On-disk state: `packages/<checksum>/`, `vehicles/<id>/state.json` and
//! `vehicles/<id>/logs/<date>.jsonl`.
//!
//! Every write that is acknowledged to a client is fsynced first.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use lambda_proto::{
    DeployedFunction, DesiredState, ErrorCode, LogRecord, PackageMeta, PutPackage, QueryLogs, SetDeployment, Stored,
};
use serde::{Deserialize, Serialize};

use crate::RegistryError;

const META: &str = "package.json";
const BLOB: &str = "blob";
const STATE: &str = "state.json";

fn reject(code: ErrorCode, msg: impl Into<String>) -> RegistryError {
    RegistryError::Rejected(code, msg.into())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VehicleState {
    pub desired: DesiredState,
    /// Revision the vehicle last reported as applied.
    #[serde(default)]
    pub acked_revision: u64,
    #[serde(default)]
    pub last_seen_ms: u64,
}

/// Writes `bytes` to `path` via a synced temporary file and rename.
fn write_durable(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().expect("file inside a directory");
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(".{}.tmp", path.file_name().unwrap().to_string_lossy()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    File::open(dir)?.sync_all()
}

pub struct Store {
    root: PathBuf,
    packages: BTreeMap<String, PackageMeta>,
    by_version: BTreeMap<(String, String), String>,
    vehicles: BTreeMap<String, VehicleState>,
}

impl Store {
    pub fn open(root: &Path) -> Result<Store, RegistryError> {
        let mut s = Store {
            root: root.to_path_buf(),
            packages: BTreeMap::new(),
            by_version: BTreeMap::new(),
            vehicles: BTreeMap::new(),
        };
        fs::create_dir_all(root.join("packages"))?;
        fs::create_dir_all(root.join("vehicles"))?;
        for e in fs::read_dir(root.join("packages"))? {
            let p = e?.path().join(META);
            if p.is_file() {
                let meta: PackageMeta = serde_json::from_slice(&fs::read(&p)?)?;
                s.by_version.insert((meta.name.clone(), meta.version.clone()), meta.checksum.clone());
                s.packages.insert(meta.checksum.clone(), meta);
            }
        }
        for e in fs::read_dir(root.join("vehicles"))? {
            let e = e?;
            let p = e.path().join(STATE);
            if p.is_file() {
                let st: VehicleState = serde_json::from_slice(&fs::read(&p)?)?;
                s.vehicles.insert(e.file_name().to_string_lossy().into_owned(), st);
            }
        }
        Ok(s)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn package_dir(&self, checksum: &str) -> PathBuf {
        self.root.join("packages").join(checksum)
    }

    fn vehicle_dir(&self, id: &str) -> PathBuf {
        self.root.join("vehicles").join(id)
    }

    pub fn put_package(&mut self, pkg: &PutPackage) -> Result<Stored, RegistryError> {
        let meta = &pkg.meta;
        meta.manifest.validate().map_err(|e| reject(ErrorCode::BadRequest, e.to_string()))?;
        if meta.manifest.name != meta.name || meta.manifest.version != meta.version {
            return Err(reject(ErrorCode::BadRequest, "manifest name/version differ from package"));
        }
        match pkg.verify() {
            Ok(true) => {}
            Ok(false) => return Err(reject(ErrorCode::ChecksumMismatch, format!("content does not hash to {}", meta.checksum))),
            Err(e) => return Err(reject(ErrorCode::BadRequest, e.to_string())),
        }
        let stored = Stored { name: meta.name.clone(), version: meta.version.clone(), checksum: meta.checksum.clone() };
        let key = (meta.name.clone(), meta.version.clone());
        match self.by_version.get(&key) {
            Some(c) if *c == meta.checksum => return Ok(stored),
            Some(c) => {
                return Err(reject(
                    ErrorCode::VersionConflict,
                    format!("{} {} already stored with checksum {c}", meta.name, meta.version),
                ))
            }
            None => {}
        }
        let dir = self.package_dir(&meta.checksum);
        if pkg.blob.is_some() {
            let bytes = pkg.content().map_err(|e| reject(ErrorCode::BadRequest, e.to_string()))?;
            write_durable(&dir.join(BLOB), &bytes)?;
        }
        // The metadata file is written last; its presence marks the package complete.
        write_durable(&dir.join(META), &serde_json::to_vec_pretty(meta)?)?;
        self.by_version.insert(key, meta.checksum.clone());
        self.packages.insert(meta.checksum.clone(), meta.clone());
        Ok(stored)
    }

    pub fn package(&self, checksum: &str) -> Result<PutPackage, RegistryError> {
        let meta = self
            .packages
            .get(checksum)
            .ok_or_else(|| reject(ErrorCode::UnknownPackage, format!("no package {checksum}")))?
            .clone();
        let blob_path = self.package_dir(checksum).join(BLOB);
        let blob = blob_path.is_file().then(|| fs::read(&blob_path)).transpose()?.map(|b| lambda_proto::encode_blob(&b));
        Ok(PutPackage { meta, blob })
    }

    pub fn packages(&self) -> Vec<PackageMeta> {
        self.packages.values().cloned().collect()
    }

    pub fn vehicle(&self, id: &str) -> Option<&VehicleState> {
        self.vehicles.get(id)
    }

    pub fn desired(&self, id: &str) -> Option<&DesiredState> {
        self.vehicles.get(id).map(|v| &v.desired)
    }

    fn save_vehicle(&self, id: &str) -> Result<(), RegistryError> {
        let st = &self.vehicles[id];
        write_durable(&self.vehicle_dir(id).join(STATE), &serde_json::to_vec_pretty(st)?)?;
        Ok(())
    }

    /// Resolves every item, then bumps the revision. Nothing changes on error.
    pub fn set_deployment(&mut self, req: &SetDeployment) -> Result<DesiredState, RegistryError> {
        let mut functions = Vec::with_capacity(req.functions.len());
        for item in &req.functions {
            let checksum = self
                .by_version
                .get(&(item.name.clone(), item.version.clone()))
                .ok_or_else(|| reject(ErrorCode::UnknownPackage, format!("no package {} {}", item.name, item.version)))?;
            let mut manifest = self.packages[checksum].manifest.clone();
            manifest.params.extend(item.params.clone());
            if let Some(a) = item.autostart {
                manifest.autostart = a;
            }
            manifest.validate().map_err(|e| reject(ErrorCode::BadRequest, e.to_string()))?;
            functions.push(DeployedFunction { manifest, checksum: checksum.clone() });
        }
        let mut desired = DesiredState { vehicle_id: req.vehicle_id.clone(), revision: 0, functions };
        desired.validate().map_err(|e| reject(ErrorCode::BadRequest, e.to_string()))?;
        let st = self.vehicles.entry(req.vehicle_id.clone()).or_default();
        let previous = st.desired.revision;
        desired.revision = previous + 1;
        let old = std::mem::replace(&mut st.desired, desired.clone());
        if let Err(e) = self.save_vehicle(&req.vehicle_id) {
            self.vehicles.get_mut(&req.vehicle_id).unwrap().desired = old;
            return Err(e);
        }
        Ok(desired)
    }

    pub fn record_ack(&mut self, id: &str, revision: u64, now_ms: u64) -> Result<(), RegistryError> {
        let st = self.vehicles.entry(id.to_string()).or_default();
        st.acked_revision = revision;
        st.last_seen_ms = now_ms;
        self.save_vehicle(id)
    }

    /// In memory only; persisted with the next state write.
    pub fn touch(&mut self, id: &str, now_ms: u64) {
        if let Some(st) = self.vehicles.get_mut(id) {
            st.last_seen_ms = now_ms;
        }
    }

    pub fn vehicle_ids(&self) -> impl Iterator<Item = &str> {
        self.vehicles.keys().map(String::as_str)
    }

    /// Appends and fsyncs; the file is named after the UTC receive date.
    pub fn append_logs(&self, vehicle: &str, records: &[LogRecord], date: &str) -> Result<(), RegistryError> {
        if records.is_empty() {
            return Ok(());
        }
        let dir = self.vehicle_dir(vehicle).join("logs");
        fs::create_dir_all(&dir)?;
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(dir.join(format!("{date}.jsonl")))?;
        f.write_all(&buf)?;
        f.sync_all()?;
        Ok(())
    }

    /// Matching records ordered by timestamp; `since` inclusive, `until` exclusive.
    pub fn query_logs(&self, q: &QueryLogs) -> Result<Vec<LogRecord>, RegistryError> {
        let vehicles: Vec<String> = match &q.vehicle_id {
            Some(v) => vec![v.clone()],
            None => {
                let mut ids = Vec::new();
                for e in fs::read_dir(self.root.join("vehicles"))? {
                    ids.push(e?.file_name().to_string_lossy().into_owned());
                }
                ids.sort();
                ids
            }
        };
        let mut out = Vec::new();
        for v in vehicles {
            let dir = self.vehicle_dir(&v).join("logs");
            let Ok(entries) = fs::read_dir(&dir) else { continue };
            let mut files: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
            files.retain(|p| p.extension().is_some_and(|x| x == "jsonl"));
            files.sort();
            for f in files {
                for line in BufReader::new(File::open(&f)?).lines() {
                    let line = line?;
                    // A torn final line from a crash mid-append is skipped.
                    let Ok(r) = serde_json::from_str::<LogRecord>(&line) else { continue };
                    let keep = q.function.as_ref().is_none_or(|f| *f == r.function)
                        && q.level.is_none_or(|l| r.level >= l)
                        && q.since.is_none_or(|s| r.ts >= s)
                        && q.until.is_none_or(|u| r.ts < u);
                    if keep {
                        out.push(r);
                    }
                }
            }
        }
        out.sort_by_key(|r| r.ts);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lambda_proto::{DeploymentItem, Entry, FunctionManifest, LogLevel, Mode, PackageKind};

    fn manifest(name: &str, version: &str) -> FunctionManifest {
        FunctionManifest {
            name: name.into(),
            version: version.into(),
            mode: Mode::Periodic { period_ms: 100 },
            subscriptions: vec![],
            params: Default::default(),
            autostart: false,
            entry: Entry::Native("echo".into()),
        }
    }

    fn guest(name: &str, version: &str, blob: &[u8]) -> PutPackage {
        PutPackage::build(PackageKind::GuestArchive, manifest(name, version), Some(blob)).unwrap()
    }

    fn code(e: RegistryError) -> ErrorCode {
        match e {
            RegistryError::Rejected(c, _) => c,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn put_is_idempotent_and_detects_conflicts() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(dir.path()).unwrap();
        let a = s.put_package(&guest("a", "1", b"one")).unwrap();
        assert_eq!(s.put_package(&guest("a", "1", b"one")).unwrap(), a);
        assert_eq!(fs::read_dir(dir.path().join("packages")).unwrap().count(), 1);
        assert_eq!(code(s.put_package(&guest("a", "1", b"two")).unwrap_err()), ErrorCode::VersionConflict);
        let mut bad = guest("b", "1", b"x");
        bad.meta.checksum = lambda_proto::sha256_hex(b"y");
        assert_eq!(code(s.put_package(&bad).unwrap_err()), ErrorCode::ChecksumMismatch);
    }

    #[test]
    fn deployment_revisions() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(dir.path()).unwrap();
        s.put_package(&guest("a", "1", b"a")).unwrap();
        s.put_package(&guest("b", "2", b"b")).unwrap();
        let item = |n: &str, v: &str| DeploymentItem { name: n.into(), version: v.into(), params: Default::default(), autostart: None };
        let req = |items| SetDeployment { vehicle_id: "car".into(), functions: items };
        let r1 = s.set_deployment(&req(vec![item("a", "1")])).unwrap().revision;
        let r2 = s.set_deployment(&req(vec![item("a", "1"), item("b", "2")])).unwrap().revision;
        assert_eq!(r2, r1 + 1);
        assert_eq!(code(s.set_deployment(&req(vec![item("zzz", "1")])).unwrap_err()), ErrorCode::UnknownPackage);
        assert_eq!(s.desired("car").unwrap().revision, r2);
        let mut with = item("a", "1");
        with.params.insert("k".into(), "v".into());
        with.autostart = Some(true);
        let d = s.set_deployment(&req(vec![with])).unwrap();
        assert_eq!(d.functions[0].manifest.params["k"], "v");
        assert!(d.functions[0].manifest.autostart);
    }

    #[test]
    fn logs_filter_and_order() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path()).unwrap();
        let rec = |ts, f: &str, l| LogRecord::new(l, ts, f, "m");
        s.append_logs("car", &[rec(30, "f", LogLevel::Info), rec(10, "f", LogLevel::Warn)], "2026-01-01").unwrap();
        s.append_logs("car", &[rec(20, "g", LogLevel::Info)], "2026-01-02").unwrap();
        let all = s.query_logs(&QueryLogs::default()).unwrap();
        assert_eq!(all.iter().map(|r| r.ts).collect::<Vec<_>>(), vec![10, 20, 30]);
        let f = s.query_logs(&QueryLogs { function: Some("f".into()), ..Default::default() }).unwrap();
        assert_eq!(f.len(), 2);
        let warn = s.query_logs(&QueryLogs { level: Some(LogLevel::Warn), ..Default::default() }).unwrap();
        assert_eq!(warn.len(), 1);
        let empty = s.query_logs(&QueryLogs { since: Some(20), until: Some(20), ..Default::default() }).unwrap();
        assert!(empty.is_empty());
    }
}
