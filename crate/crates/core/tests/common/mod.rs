#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::Arc;

use egomem::backends::{mock_encode, Fault, Handler, MockWorld};
use egomem::ids::{IdentityId, UserId};
use egomem::store::{ExtractedMemory, MemoryStore, SharedStore};
use egomem::stream::{FaceMark, TokenStep, TokenStream};
use egomem::verification::Modality;

/// Enrolls `ids` with their sample-0 face and voice, named `P<id>`.
pub fn enrolled_store(world: &MockWorld, ids: &[u32]) -> (SharedStore, Vec<UserId>) {
    let mut store = MemoryStore::new();
    let users = ids
        .iter()
        .map(|&id| {
            let face = mock_encode(&world.identity(IdentityId(id), Modality::Face), 0, Modality::Face);
            let voice = mock_encode(&world.identity(IdentityId(id), Modality::Voice), 0, Modality::Voice);
            let memory = ExtractedMemory {
                user_name: format!("P{id}"),
                user_facts: vec![format!("P{id} enjoys long walks")],
                session_timestamp: "2024-05-13".into(),
                ..Default::default()
            };
            store.create_user(face, voice, &memory).unwrap().user_id
        })
        .collect();
    (SharedStore::new(store), users)
}

/// Silent steps from `base`; each segment shows a face (or nobody, for id 0)
/// every 25 steps for its length.
pub fn face_source(base: u64, segments: &[(u32, usize)]) -> TokenStream {
    let total: usize = segments.iter().map(|s| s.1).sum();
    let steps = (base..base + total as u64).map(TokenStep::silent).collect();
    let mut faces = Vec::new();
    let mut at = base;
    let mut sample = 1;
    for &(id, len) in segments {
        if id != 0 {
            for step in (at..at + len as u64).step_by(25) {
                faces.push(FaceMark { step, identity: IdentityId(id), sample });
                sample += 1;
            }
        }
        at += len as u64;
    }
    TokenStream::chunk(base, steps, faces).unwrap()
}

/// Independent BM25: count maps over a second tokenizer.
pub fn oracle_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split(char::is_whitespace) {
        let chars: Vec<char> = word.chars().collect();
        let Some(first) = chars.iter().position(|c| c.is_alphanumeric()) else { continue };
        let last = chars.iter().rposition(|c| c.is_alphanumeric()).unwrap();
        out.push(chars[first..=last].iter().collect::<String>().to_lowercase());
    }
    out
}

pub fn oracle_bm25(query: &[String], corpus: &[String]) -> Vec<f64> {
    let docs: Vec<HashMap<String, f64>> = corpus
        .iter()
        .map(|d| {
            let mut m = HashMap::new();
            for t in oracle_tokens(d) {
                *m.entry(t).or_insert(0.0) += 1.0;
            }
            m
        })
        .collect();
    let lens: Vec<f64> = docs.iter().map(|m| m.values().sum()).collect();
    let n = corpus.len() as f64;
    let avg = lens.iter().sum::<f64>() / n;
    let terms: Vec<String> = query.iter().flat_map(|q| oracle_tokens(q)).collect();
    (0..docs.len())
        .map(|i| {
            if avg == 0.0 {
                return 0.0;
            }
            let mut total = 0.0;
            for t in &terms {
                let tf = docs[i].get(t).copied().unwrap_or(0.0);
                if tf == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|m| m.contains_key(t)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                total += idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * lens[i] / avg));
            }
            total
        })
        .collect()
}

/// Extractor wrapper that fails, or panics, on the introduction of `name`.
pub fn sabotage(inner: Arc<dyn Handler>, name: &'static str, panic: bool) -> Arc<dyn Handler> {
    Arc::new(move |request: &str| -> Result<String, Fault> {
        if request.contains(&format!("my name is {name}")) {
            if panic {
                panic!("extractor crashed");
            }
            return Err(Fault::Transport("extractor refused".into()));
        }
        inner.handle(request)
    })
}
