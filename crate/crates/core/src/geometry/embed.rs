use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::EmbeddingSet;
use crate::error::{Error, Result};
use crate::hashing::{stream_rng, text_hash};
use crate::model::Pool;

/// Embedder id used for reference runs.
pub const REFERENCE_EMBEDDER: &str = "sentence-transformers/all-mpnet-base-v2";
pub const DEFAULT_MOCK_DIM: usize = 64;

/// Text-to-vector service. Implementations must be deterministic per text
/// and safe to call concurrently.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;
}

/// Seeded pseudo-random unit vectors keyed by text. Identical texts map to
/// identical vectors across runs and machines.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    id: String,
    dim: usize,
    seed: u64,
}

impl MockEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        MockEmbedder {
            id: format!("mock-{dim}-{seed}"),
            dim,
            seed,
        }
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        MockEmbedder::new(DEFAULT_MOCK_DIM, 0)
    }
}

impl Embedder for MockEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        Ok(texts
            .iter()
            .map(|t| {
                let mut rng = stream_rng(self.seed, t, 0);
                let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect())
    }
}

/// Client for an OpenAI-style `/embeddings` endpoint.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    id: String,
    url: String,
    model: String,
    api_key: Option<String>,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let model = model.into();
        HttpEmbedder {
            id: model.clone(),
            url: url.into(),
            model,
            api_key,
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl Embedder for HttpEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let body = serde_json::json!({ "model": self.model, "input": texts });
        let mut req = ureq::post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| Error::Embedding(format!("{}: {e}", self.url)))?;
        let mut parsed: EmbeddingResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Embedding(format!("{}: {e}", self.url)))?;
        if parsed.data.len() != texts.len() {
            return Err(Error::Embedding(format!(
                "asked for {} embeddings, received {}",
                texts.len(),
                parsed.data.len()
            )));
        }
        parsed.data.sort_by_key(|d| d.index);
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheIndex {
    embedder_id: String,
    dim: usize,
    text_hashes: Vec<String>,
}

/// On-disk embedding cache for one embedder: `vectors.bin` holds
/// little-endian f64 rows, `index.json` the embedder id, dimension and the
/// text hash of each row.
#[derive(Debug)]
pub struct EmbeddingCache {
    dir: PathBuf,
    embedder_id: String,
    dim: Option<usize>,
    order: Vec<String>,
    rows: HashMap<String, Vec<f64>>,
    flushed: usize,
}

impl EmbeddingCache {
    pub fn open(dir: &Path, embedder_id: &str) -> Result<Self> {
        let index_path = dir.join("index.json");
        let mut cache = EmbeddingCache {
            dir: dir.to_path_buf(),
            embedder_id: embedder_id.to_string(),
            dim: None,
            order: Vec::new(),
            rows: HashMap::new(),
            flushed: 0,
        };
        if !index_path.exists() {
            return Ok(cache);
        }
        let index: CacheIndex = serde_json::from_slice(&std::fs::read(&index_path)?)?;
        if index.embedder_id != embedder_id {
            return Err(Error::Embedding(format!(
                "cache at {} belongs to embedder `{}`, not `{embedder_id}`",
                dir.display(),
                index.embedder_id
            )));
        }
        let mut bytes = Vec::new();
        let mut file = std::fs::OpenOptions::new()
            .read(true)
            .write(true)
            .open(dir.join("vectors.bin"))?;
        file.read_to_end(&mut bytes)?;
        let row_bytes = index.dim * 8;
        let indexed = row_bytes * index.text_hashes.len();
        if bytes.len() < indexed {
            return Err(Error::artifact(dir.join("vectors.bin"), "truncated vector file"));
        }
        // rows appended by a flush that never reached the index
        if bytes.len() > indexed {
            file.set_len(indexed as u64)?;
        }
        for (k, hash) in index.text_hashes.iter().enumerate() {
            let row = bytes[k * row_bytes..(k + 1) * row_bytes]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            cache.rows.insert(hash.clone(), row);
        }
        cache.dim = Some(index.dim);
        cache.order = index.text_hashes;
        cache.flushed = cache.order.len();
        Ok(cache)
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, hash: &str) -> Option<&[f64]> {
        self.rows.get(hash).map(Vec::as_slice)
    }

    pub fn insert(&mut self, hash: String, row: Vec<f64>) -> Result<()> {
        match self.dim {
            Some(d) if d != row.len() => {
                return Err(Error::Embedding(format!(
                    "dimension mismatch: cache holds {d}, embedder returned {}",
                    row.len()
                )))
            }
            None => self.dim = Some(row.len()),
            _ => {}
        }
        if !self.rows.contains_key(&hash) {
            self.order.push(hash.clone());
            self.rows.insert(hash, row);
        }
        Ok(())
    }

    /// Appends new rows to `vectors.bin` and rewrites the index.
    pub fn flush(&mut self) -> Result<()> {
        let Some(dim) = self.dim else {
            return Ok(());
        };
        std::fs::create_dir_all(&self.dir)?;
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join("vectors.bin"))?;
        let mut buf = Vec::new();
        for hash in &self.order[self.flushed..] {
            for x in &self.rows[hash] {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        file.write_all(&buf)?;
        self.flushed = self.order.len();
        let index = CacheIndex {
            embedder_id: self.embedder_id.clone(),
            dim,
            text_hashes: self.order.clone(),
        };
        std::fs::write(self.dir.join("index.json"), serde_json::to_vec(&index)?)?;
        Ok(())
    }
}

const BATCH: usize = 64;

/// Embeds texts, consulting and filling `cache` when given. Only texts
/// missing from the cache reach the embedder, each unique text once.
pub fn embed_texts(
    texts: &[&str],
    embedder: &dyn Embedder,
    mut cache: Option<&mut EmbeddingCache>,
) -> Result<EmbeddingSet> {
    let hashes: Vec<String> = texts.iter().map(|t| text_hash(t)).collect();
    let mut fresh: HashMap<String, Vec<f64>> = HashMap::new();
    let mut missing: Vec<(String, &str)> = Vec::new();
    let mut queued = HashSet::new();
    for (hash, text) in hashes.iter().zip(texts) {
        let cached = cache.as_deref().is_some_and(|c| c.get(hash).is_some());
        if !cached && queued.insert(hash.as_str()) {
            missing.push((hash.clone(), text));
        }
    }
    for chunk in missing.chunks(BATCH) {
        let batch: Vec<&str> = chunk.iter().map(|(_, t)| *t).collect();
        let vectors = embedder.embed(&batch)?;
        if vectors.len() != batch.len() {
            return Err(Error::Embedding("embedder returned wrong number of vectors".into()));
        }
        for ((hash, _), v) in chunk.iter().zip(vectors) {
            if let Some(c) = cache.as_deref_mut() {
                c.insert(hash.clone(), v.clone())?;
            }
            fresh.insert(hash.clone(), v);
        }
    }
    let rows = hashes
        .iter()
        .map(|h| {
            fresh
                .get(h)
                .cloned()
                .or_else(|| cache.as_deref().and_then(|c| c.get(h)).map(<[f64]>::to_vec))
                .expect("every text embedded or cached")
        })
        .collect();
    EmbeddingSet::from_rows(embedder.id(), rows)
}

pub fn embed_pool(
    pool: &Pool,
    embedder: &dyn Embedder,
    cache: Option<&mut EmbeddingCache>,
) -> Result<EmbeddingSet> {
    embed_texts(&pool.texts(), embedder, cache)
}
