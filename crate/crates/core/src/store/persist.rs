//! On-disk layout of a store directory:
//!
//! - `store.egm`: a header line `egomem-store v1 sha256=<hex>` followed by a
//!   JSON document; the hash covers everything after the header line.
//! - `embeddings-<hash8>.bin`: a face block then a voice block (see
//!   [`write_embeddings`]), one row per user in id order.
//! - `audit.jsonl`: one audit record per line, append-only.
//!
//! Every file except the audit log is written to a temp name and renamed into
//! place, so a crash leaves either the old or the new store.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AuditAction, AuditRecord, MemoryItem, MemoryStore, Persona, RelationTriplet, StoreError, UserProfile};
use crate::ids::UserId;
use crate::verification::{read_embeddings, write_embeddings, Modality};

pub const STORE_FILE: &str = "store.egm";
pub const AUDIT_FILE: &str = "audit.jsonl";
const HEADER_PREFIX: &str = "egomem-store v1 sha256=";

#[derive(Serialize, Deserialize)]
struct ProfileRecord {
    user_id: UserId,
    name: String,
    facts: Vec<MemoryItem>,
    dialog_summaries: Vec<MemoryItem>,
    persona: Persona,
    relation_edges: Vec<RelationTriplet>,
    version: u64,
}

#[derive(Serialize, Deserialize)]
struct StoreDocument {
    store_version: u64,
    next_user: u64,
    aux_documents: Vec<String>,
    graph: Vec<RelationTriplet>,
    users: Vec<ProfileRecord>,
    embeddings_file: String,
    embeddings_sha256: String,
    audit_len: usize,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_audit(path: &Path) -> Result<Vec<AuditRecord>, StoreError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AuditRecord =
            serde_json::from_str(&line).map_err(|e| StoreError::Format(format!("{AUDIT_FILE} line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

fn audit_line(rec: &AuditRecord) -> String {
    let mut s = serde_json::to_string(rec).expect("audit records serialize");
    s.push('\n');
    s
}

/// Appends the records the file is missing. If the file holds a different
/// history it is replaced wholesale.
fn sync_audit(path: &Path, audit: &[AuditRecord]) -> Result<(), StoreError> {
    let existing = read_audit(path).unwrap_or_default();
    if existing.len() <= audit.len() && existing[..] == audit[..existing.len()] {
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        for rec in &audit[existing.len()..] {
            f.write_all(audit_line(rec).as_bytes())?;
        }
        f.sync_all()?;
    } else {
        let all: String = audit.iter().map(audit_line).collect();
        write_atomic(path, all.as_bytes())?;
    }
    Ok(())
}

impl MemoryStore {
    /// Writes the store into `dir`, creating it if needed. Adds a
    /// `persisted` audit record first, so the saved copy includes it.
    pub fn persist(&mut self, dir: &Path) -> Result<(), StoreError> {
        fs::create_dir_all(dir)?;
        // no path in the record: the same store saved anywhere is byte-identical
        let reason = format!("persist of {} users", self.users.len());
        self.record(AuditAction::Persisted, None, None, None, reason);

        let profiles: Vec<&Arc<UserProfile>> = self.users.values().collect();
        let mut blob = Vec::new();
        let faces: Vec<_> = profiles.iter().map(|p| p.face_key.clone()).collect();
        let voices: Vec<_> = profiles.iter().map(|p| p.voice_key.clone()).collect();
        write_embeddings(&mut blob, &faces, Modality::Face)?;
        write_embeddings(&mut blob, &voices, Modality::Voice)?;
        let blob_hash = sha256_hex(&blob);
        let embeddings_file = format!("embeddings-{}.bin", &blob_hash[..8]);
        write_atomic(&dir.join(&embeddings_file), &blob)?;

        sync_audit(&dir.join(AUDIT_FILE), &self.audit)?;

        let doc = StoreDocument {
            store_version: self.store_version,
            next_user: self.next_user,
            aux_documents: self.aux_documents.clone(),
            graph: self.graph.iter().cloned().collect(),
            users: profiles
                .iter()
                .map(|p| ProfileRecord {
                    user_id: p.user_id.clone(),
                    name: p.name.clone(),
                    facts: p.facts.clone(),
                    dialog_summaries: p.dialog_summaries.clone(),
                    persona: p.persona.clone(),
                    relation_edges: p.relation_edges.clone(),
                    version: p.version,
                })
                .collect(),
            embeddings_file: embeddings_file.clone(),
            embeddings_sha256: blob_hash,
            audit_len: self.audit.len(),
        };
        let body = serde_json::to_string_pretty(&doc).map_err(|e| StoreError::Format(e.to_string()))?;
        let text = format!("{HEADER_PREFIX}{}\n{body}", sha256_hex(body.as_bytes()));
        write_atomic(&dir.join(STORE_FILE), text.as_bytes())?;

        for entry in fs::read_dir(dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if name.starts_with("embeddings-") && name.ends_with(".bin") && *name != embeddings_file {
                let _ = fs::remove_file(dir.join(&*name));
            }
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<MemoryStore, StoreError> {
        let store_path: PathBuf = dir.join(STORE_FILE);
        let text = fs::read_to_string(&store_path)?;
        let (header, body) =
            text.split_once('\n').ok_or_else(|| StoreError::Format(format!("{STORE_FILE} has no header line")))?;
        let want = header
            .strip_prefix(HEADER_PREFIX)
            .ok_or_else(|| StoreError::Format(format!("unrecognized header {header:?}")))?;
        if sha256_hex(body.as_bytes()) != want {
            return Err(StoreError::Checksum { file: STORE_FILE.into() });
        }
        let doc: StoreDocument = serde_json::from_str(body).map_err(|e| StoreError::Format(e.to_string()))?;

        let blob = fs::read(dir.join(&doc.embeddings_file))?;
        if sha256_hex(&blob) != doc.embeddings_sha256 {
            return Err(StoreError::Checksum { file: doc.embeddings_file });
        }
        let mut cursor = blob.as_slice();
        let (fm, faces) = read_embeddings(&mut cursor)?;
        let (vm, voices) = read_embeddings(&mut cursor)?;
        if fm != Modality::Face || vm != Modality::Voice || !cursor.is_empty() {
            return Err(StoreError::Format("embedding sidecar layout".into()));
        }
        if faces.len() != doc.users.len() || voices.len() != doc.users.len() {
            return Err(StoreError::Format("embedding count does not match user count".into()));
        }

        let mut audit = read_audit(&dir.join(AUDIT_FILE))?;
        if audit.len() < doc.audit_len {
            return Err(StoreError::Format(format!(
                "audit log has {} records, expected {}",
                audit.len(),
                doc.audit_len
            )));
        }
        audit.truncate(doc.audit_len);

        let users: BTreeMap<UserId, Arc<UserProfile>> = doc
            .users
            .into_iter()
            .zip(faces.into_iter().zip(voices))
            .map(|(r, (face_key, voice_key))| {
                let p = UserProfile {
                    user_id: r.user_id,
                    name: r.name,
                    face_key,
                    voice_key,
                    facts: r.facts,
                    dialog_summaries: r.dialog_summaries,
                    persona: r.persona,
                    relation_edges: r.relation_edges,
                    version: r.version,
                };
                (p.user_id.clone(), Arc::new(p))
            })
            .collect();
        let store = MemoryStore {
            users,
            graph: doc.graph.into_iter().collect::<BTreeSet<_>>(),
            aux_documents: doc.aux_documents,
            store_version: doc.store_version,
            next_user: doc.next_user,
            audit,
        };
        store.check_integrity().map_err(StoreError::Format)?;
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::tests::key;
    use crate::store::{ExtractedMemory, UNKNOWN_USER};

    fn sample() -> MemoryStore {
        let mut s = MemoryStore::new();
        let e = ExtractedMemory {
            user_name: UNKNOWN_USER.into(),
            user_facts: vec!["likes tea".into()],
            ..Default::default()
        };
        let a = s.create_user(key(Modality::Face, 0), key(Modality::Voice, 0), &e).unwrap().user_id;
        let b = s.create_user(key(Modality::Face, 1), key(Modality::Voice, 1), &e).unwrap().user_id;
        s.add_relation_edge(RelationTriplet::new(a, "sister", b)).unwrap();
        s.add_aux_document("the office closes at 6pm");
        s
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = sample();
        s.persist(dir.path()).unwrap();
        assert_eq!(MemoryStore::load(dir.path()).unwrap(), s);
    }

    #[test]
    fn truncated_file_fails() {
        let dir = tempfile::tempdir().unwrap();
        sample().persist(dir.path()).unwrap();
        let p = dir.path().join(STORE_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 20]).unwrap();
        assert!(matches!(MemoryStore::load(dir.path()), Err(StoreError::Checksum { .. })));
    }

    #[test]
    fn corrupt_sidecar_fails() {
        let dir = tempfile::tempdir().unwrap();
        sample().persist(dir.path()).unwrap();
        let bin = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .find(|p| p.extension().is_some_and(|x| x == "bin"))
            .unwrap();
        let mut bytes = fs::read(&bin).unwrap();
        bytes[20] ^= 0xff;
        fs::write(&bin, bytes).unwrap();
        assert!(matches!(MemoryStore::load(dir.path()), Err(StoreError::Checksum { .. })));
    }

    #[test]
    fn audit_log_appends() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = sample();
        s.persist(dir.path()).unwrap();
        let first = read_audit(&dir.path().join(AUDIT_FILE)).unwrap().len();
        s.persist(dir.path()).unwrap();
        let second = read_audit(&dir.path().join(AUDIT_FILE)).unwrap();
        assert_eq!(second.len(), first + 1);
        assert_eq!(second.iter().filter(|r| r.action == AuditAction::Persisted).count(), 2);
        let sidecars = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("embeddings-"));
        assert_eq!(sidecars.count(), 1);
    }
}
