//! Content-addressed cache for derived per-recording artifacts.
//!
//! Entries live at `<root>/<kind>/<sha256>.<ext>`, where the hash covers a
//! format tag plus every input the artifact depends on. Changing any input
//! file changes the key, so stale entries are never read.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

pub struct Cache {
    root: PathBuf,
}

/// Incremental key builder. Each part is length-prefixed so that
/// concatenations cannot collide.
pub struct Key(Sha256);

impl Key {
    pub fn new(tag: &str) -> Self {
        let mut k = Key(Sha256::new());
        k.bytes(tag.as_bytes());
        k
    }

    pub fn bytes(&mut self, data: &[u8]) -> &mut Self {
        self.0.update((data.len() as u64).to_le_bytes());
        self.0.update(data);
        self
    }

    pub fn file(&mut self, path: &Path) -> Result<&mut Self> {
        let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(self.bytes(&data))
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Cache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, kind: &str, key: &str, ext: &str) -> PathBuf {
        self.root.join(kind).join(format!("{key}.{ext}"))
    }

    pub fn get(&self, kind: &str, key: &str, ext: &str) -> Option<Vec<u8>> {
        fs::read(self.path(kind, key, ext)).ok()
    }

    /// Stores `data`, writing to a temporary name first so that readers
    /// never see a partial entry.
    pub fn put(&self, kind: &str, key: &str, ext: &str, data: &[u8]) -> Result<()> {
        let path = self.path(kind, key, ext);
        let dir = path.parent().expect("cache entries have a parent");
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let tmp = path.with_extension(format!("{ext}.tmp"));
        fs::write(&tmp, data).with_context(|| format!("writing {}", tmp.display()))?;
        fs::rename(&tmp, &path).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    /// Cached bytes for `key`, computing and storing them on a miss.
    /// Returns the bytes and whether they came from the cache.
    pub fn get_or_insert(
        &self,
        kind: &str,
        key: &str,
        ext: &str,
        compute: impl FnOnce() -> Result<Vec<u8>>,
    ) -> Result<(Vec<u8>, bool)> {
        if let Some(data) = self.get(kind, key, ext) {
            return Ok((data, true));
        }
        let data = compute()?;
        self.put(kind, key, ext, &data)?;
        Ok((data, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_prefix_free() {
        let mut a = Key::new("t");
        a.bytes(b"ab").bytes(b"c");
        let mut b = Key::new("t");
        b.bytes(b"a").bytes(b"bc");
        assert_ne!(a.finish(), b.finish());
    }

    #[test]
    fn miss_then_hit() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::new(dir.path());
        let (d, hit) = cache.get_or_insert("x", "k", "bin", || Ok(vec![1, 2])).unwrap();
        assert_eq!((d, hit), (vec![1, 2], false));
        let (d, hit) = cache.get_or_insert("x", "k", "bin", || unreachable!()).unwrap();
        assert_eq!((d, hit), (vec![1, 2], true));
    }
}
