//! Package content and checksums.
//!
//! A guest archive's checksum is the SHA-256 of its bytes. A native-ref
//! package has no blob; its checksum covers the compact JSON of its
//! manifest template, so editing the template yields a new package.

use base64::Engine;
use sha2::{Digest, Sha256};

use crate::{PackageKind, ProtoError, PutPackage};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_blob(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_blob(text: &str) -> Result<Vec<u8>, ProtoError> {
    base64::engine::general_purpose::STANDARD
        .decode(text)
        .map_err(|e| ProtoError::Malformed(format!("blob is not base64: {e}")))
}

impl PutPackage {
    /// The bytes the checksum is computed over.
    pub fn content(&self) -> Result<Vec<u8>, ProtoError> {
        match (self.meta.kind, &self.blob) {
            (PackageKind::GuestArchive, Some(b)) => decode_blob(b),
            (PackageKind::GuestArchive, None) => Err(ProtoError::Malformed("guest archive without blob".into())),
            (PackageKind::NativeRef, None) => Ok(serde_json::to_vec(&self.meta.manifest)?),
            (PackageKind::NativeRef, Some(_)) => Err(ProtoError::Malformed("native-ref package carries a blob".into())),
        }
    }

    /// Recomputes the checksum; `Ok(false)` when it differs from `meta.checksum`.
    pub fn verify(&self) -> Result<bool, ProtoError> {
        Ok(sha256_hex(&self.content()?) == self.meta.checksum)
    }

    /// Builds a package with its checksum filled in.
    pub fn build(
        kind: PackageKind,
        manifest: crate::FunctionManifest,
        blob: Option<&[u8]>,
    ) -> Result<PutPackage, ProtoError> {
        let mut p = PutPackage {
            meta: crate::PackageMeta {
                name: manifest.name.clone(),
                version: manifest.version.clone(),
                checksum: String::new(),
                kind,
                manifest,
            },
            blob: blob.map(encode_blob),
        };
        p.meta.checksum = sha256_hex(&p.content()?);
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Entry, FunctionManifest, Mode};

    fn manifest() -> FunctionManifest {
        FunctionManifest {
            name: "f".into(),
            version: "1".into(),
            mode: Mode::Periodic { period_ms: 10 },
            subscriptions: vec![],
            params: Default::default(),
            autostart: false,
            entry: Entry::Native("echo".into()),
        }
    }

    #[test]
    fn known_digest() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn guest_checksum_is_blob_digest() {
        let p = PutPackage::build(PackageKind::GuestArchive, manifest(), Some(b"abc")).unwrap();
        assert_eq!(p.meta.checksum, sha256_hex(b"abc"));
        assert!(p.verify().unwrap());
        let mut bad = p.clone();
        bad.blob = Some(encode_blob(b"abd"));
        assert!(!bad.verify().unwrap());
    }

    #[test]
    fn native_checksum_tracks_manifest() {
        let a = PutPackage::build(PackageKind::NativeRef, manifest(), None).unwrap();
        let mut m = manifest();
        m.params.insert("k".into(), "v".into());
        let b = PutPackage::build(PackageKind::NativeRef, m, None).unwrap();
        assert_ne!(a.meta.checksum, b.meta.checksum);
        assert!(a.verify().unwrap());
    }
}
