//! Content-addressed fixture store for recorded model responses.
//!
//! Layout: one JSON file per request digest under `objects/`, plus an index
//! manifest. Re-recording the same digest is idempotent.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{FinishReason, GatewayError, ModelResponse};

/// One recorded interaction. The raw provider payload is preserved verbatim
/// next to the decoded response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fixture {
    pub digest: String,
    pub template_id: String,
    pub text: String,
    pub finish_reason: FinishReason,
    pub provider_latency_ms: u64,
    #[serde(default)]
    pub raw_provider_payload: Option<serde_json::Value>,
}

impl Fixture {
    pub fn to_response(&self) -> ModelResponse {
        ModelResponse {
            text: self.text.clone(),
            finish_reason: self.finish_reason,
            provider_latency_ms: self.provider_latency_ms,
            request_digest: self.digest.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    complete: bool,
    entries: BTreeMap<String, String>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest { version: 1, complete: true, entries: BTreeMap::new() }
    }
}

/// Read side: loaded once, lock-free lookups afterwards.
#[derive(Debug)]
pub struct FixtureStore {
    fixtures: std::collections::HashMap<String, Fixture>,
}

impl FixtureStore {
    pub fn load(dir: &Path) -> Result<FixtureStore, GatewayError> {
        let manifest_path = dir.join("manifest.json");
        let manifest: Manifest = read_json(&manifest_path)?;
        let mut fixtures = std::collections::HashMap::with_capacity(manifest.entries.len());
        for (digest, file) in &manifest.entries {
            let fixture: Fixture = read_json(&dir.join("objects").join(file))?;
            if &fixture.digest != digest {
                return Err(GatewayError::Store(format!(
                    "fixture file {file} holds digest {} but manifest says {digest}",
                    fixture.digest
                )));
            }
            fixtures.insert(digest.clone(), fixture);
        }
        Ok(FixtureStore { fixtures })
    }

    pub fn get(&self, digest: &str) -> Option<&Fixture> {
        self.fixtures.get(digest)
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }
}

/// Write side used by record mode. Keeps the manifest on disk in sync after
/// every insert so an aborted run leaves a loadable (if incomplete) store.
#[derive(Debug)]
pub struct FixtureRecorder {
    dir: PathBuf,
    manifest: Mutex<Manifest>,
}

impl FixtureRecorder {
    /// Open a store for recording. Creates the directory; an existing
    /// manifest is extended. The store is flagged incomplete until
    /// [`FixtureRecorder::mark_complete`] runs.
    pub fn open(dir: &Path) -> Result<FixtureRecorder, GatewayError> {
        std::fs::create_dir_all(dir.join("objects")).map_err(io_err(dir))?;
        let manifest_path = dir.join("manifest.json");
        let mut manifest = if manifest_path.exists() {
            read_json(&manifest_path)?
        } else {
            Manifest::default()
        };
        manifest.complete = false;
        write_json(&manifest_path, &manifest)?;
        Ok(FixtureRecorder { dir: dir.to_path_buf(), manifest: Mutex::new(manifest) })
    }

    /// Write one fixture. Idempotent: recording the same digest again
    /// rewrites the same file and leaves exactly one entry.
    pub fn record(&self, fixture: &Fixture) -> Result<(), GatewayError> {
        let file = format!("{}.json", fixture.digest);
        write_json(&self.dir.join("objects").join(&file), fixture)?;
        let mut manifest = self.manifest.lock().expect("manifest lock poisoned");
        manifest.entries.insert(fixture.digest.clone(), file);
        write_json(&self.dir.join("manifest.json"), &*manifest)
    }

    /// Flag the store complete. Call only after every interaction of a run
    /// succeeded; a store left incomplete marks a partial recording.
    pub fn mark_complete(&self) -> Result<(), GatewayError> {
        let mut manifest = self.manifest.lock().expect("manifest lock poisoned");
        manifest.complete = true;
        write_json(&self.dir.join("manifest.json"), &*manifest)
    }

    pub fn entry_count(&self) -> usize {
        self.manifest.lock().expect("manifest lock poisoned").entries.len()
    }
}

/// Whether the manifest at `dir` is flagged complete.
pub fn store_is_complete(dir: &Path) -> Result<bool, GatewayError> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    Ok(manifest.complete)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, GatewayError> {
    let bytes = std::fs::read(path)
        .map_err(|e| GatewayError::Store(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| GatewayError::Store(format!("cannot parse {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), GatewayError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| GatewayError::Store(format!("cannot serialize {}: {e}", path.display())))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes)
        .map_err(|e| GatewayError::Store(format!("cannot write {}: {e}", path.display())))
}

fn io_err(dir: &Path) -> impl Fn(std::io::Error) -> GatewayError + '_ {
    move |e| GatewayError::Store(format!("cannot create {}: {e}", dir.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(digest: &str, text: &str) -> Fixture {
        Fixture {
            digest: digest.into(),
            template_id: "direct".into(),
            text: text.into(),
            finish_reason: FinishReason::Complete,
            provider_latency_ms: 0,
            raw_provider_payload: None,
        }
    }

    #[test]
    fn record_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let rec = FixtureRecorder::open(dir.path()).unwrap();
        rec.record(&fixture("aa11", "verdict text")).unwrap();
        rec.mark_complete().unwrap();

        let store = FixtureStore::load(dir.path()).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.get("aa11").unwrap().text, "verdict text");
        assert!(store_is_complete(dir.path()).unwrap());
    }

    #[test]
    fn re_recording_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let rec = FixtureRecorder::open(dir.path()).unwrap();
        rec.record(&fixture("aa11", "same")).unwrap();
        rec.record(&fixture("aa11", "same")).unwrap();
        assert_eq!(rec.entry_count(), 1);
        let files: Vec<_> = std::fs::read_dir(dir.path().join("objects")).unwrap().collect();
        assert_eq!(files.len(), 1);
    }

    #[test]
    fn unfinished_store_is_flagged_incomplete() {
        let dir = tempfile::tempdir().unwrap();
        let rec = FixtureRecorder::open(dir.path()).unwrap();
        rec.record(&fixture("aa11", "x")).unwrap();
        drop(rec); // no mark_complete
        assert!(!store_is_complete(dir.path()).unwrap());
        // but the store still loads
        assert_eq!(FixtureStore::load(dir.path()).unwrap().len(), 1);
    }
}
