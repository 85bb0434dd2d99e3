//! Category embedding JSON.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use habitmotion_core::retrieval::EmbeddingStore;
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use super::{read_file, write_file, FORMAT_VERSION};
use crate::error::{AppError, CoreContext, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryDoc {
    vector: Vec<f64>,
    source: String,
    observed: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EmbeddingDoc {
    format_version: u32,
    dim: usize,
    #[serde(deserialize_with = "unique_entries")]
    entries: Vec<(String, EntryDoc)>,
}

#[derive(Serialize)]
struct EmbeddingDocOut<'a> {
    format_version: u32,
    dim: usize,
    entries: BTreeMap<&'a str, EntryDoc>,
}

/// Keeps entries in file order and refuses repeated labels, which a plain
/// map would silently overwrite.
fn unique_entries<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<Vec<(String, EntryDoc)>, D::Error> {
    struct Entries;
    impl<'de> Visitor<'de> for Entries {
        type Value = Vec<(String, EntryDoc)>;

        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("a map from category label to embedding entry")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
            let mut out: Vec<(String, EntryDoc)> = Vec::new();
            while let Some((label, entry)) = map.next_entry::<String, EntryDoc>()? {
                if out.iter().any(|(l, _)| *l == label) {
                    return Err(serde::de::Error::custom(format!("duplicate label \"{label}\"")));
                }
                out.push((label, entry));
            }
            Ok(out)
        }
    }
    de.deserialize_map(Entries)
}

pub fn embeddings_from_json(text: &str, origin: &Path) -> Result<EmbeddingStore> {
    let doc: EmbeddingDoc = serde_json::from_str(text).map_err(|e| AppError::schema(origin, e.to_string()))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(AppError::schema(
            origin,
            format!("unsupported format_version {}", doc.format_version),
        ));
    }
    if doc.entries.is_empty() {
        return Err(AppError::schema(origin, "no embedding entries"));
    }
    let ctx = origin.display().to_string();
    let mut store = EmbeddingStore::new(doc.dim).context(ctx.clone())?;
    for (label, e) in doc.entries {
        store.insert(&label, e.vector, &e.source, e.observed).context(ctx.clone())?;
    }
    Ok(store)
}

pub fn embeddings_to_json(store: &EmbeddingStore) -> String {
    let entries = store
        .entries()
        .map(|(label, e)| {
            let doc = EntryDoc {
                vector: e.raw.clone(),
                source: e.source.clone(),
                observed: e.observed,
            };
            (label, doc)
        })
        .collect();
    let doc = EmbeddingDocOut {
        format_version: FORMAT_VERSION,
        dim: store.dim(),
        entries,
    };
    serde_json::to_string_pretty(&doc).expect("embedding document serializes")
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingStore> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| AppError::schema(path, "not UTF-8"))?;
    embeddings_from_json(&text, path)
}

pub fn save_embeddings(path: &Path, store: &EmbeddingStore) -> Result<()> {
    write_file(path, embeddings_to_json(store).as_bytes())
}
