//! Visual imagery: K generated images per text, reduced to one mean
//! visual-encoder embedding.
//!
//! Cache layout under a root directory:
//!
//! ```text
//! images/<cache_key>.png       one generated image
//! images/<cache_key>.sha256    hex digest of the png bytes
//! embeddings/<digest>.emb      per-image encodings, see `write_encodings`
//! sheets/<digest>.png          contact sheet grid
//! index.json                   text -> embedding digest for a whole lexicon
//! ```
//!
//! Every file is written to a temporary path and renamed into place.

use std::collections::{BTreeMap, HashMap};
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::{ImageFormat, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Lexicon;
use crate::error::{Error, Result};
use crate::util;

pub const DEFAULT_K: usize = 9;

const EMBEDDING_MAGIC: [u8; 4] = *b"PETV";
const EMBEDDING_VERSION: u32 = 1;
const EMBEDDING_HEADER_LEN: usize = 16;

/// Text-to-image backend. Image `index` of a set is generated from
/// `(text, seed, index)`.
pub trait TextToImage: Send + Sync {
    fn id(&self) -> &str;
    fn is_deterministic(&self) -> bool;
    fn generate(&self, text: &str, seed: u64, index: usize) -> Result<RgbImage>;
}

/// Image encoder with a fixed output dimension.
pub trait VisualEncoder: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode(&self, image: &RgbImage) -> Result<Vec<f32>>;
}

/// Solid-color images whose color is derived from a hash of `(text, seed, index)`.
#[derive(Debug, Clone)]
pub struct StubTextToImage {
    pub width: u32,
    pub height: u32,
}

impl Default for StubTextToImage {
    fn default() -> Self {
        StubTextToImage {
            width: 32,
            height: 32,
        }
    }
}

impl TextToImage for StubTextToImage {
    fn id(&self) -> &str {
        "stub-t2i"
    }

    fn is_deterministic(&self) -> bool {
        true
    }

    fn generate(&self, text: &str, seed: u64, index: usize) -> Result<RgbImage> {
        let digest = util::digest_parts([
            text.as_bytes(),
            &seed.to_le_bytes(),
            &(index as u64).to_le_bytes(),
        ]);
        let bytes = hex::decode(&digest[..6]).expect("hex digest");
        let color = image::Rgb([bytes[0], bytes[1], bytes[2]]);
        Ok(RgbImage::from_pixel(self.width, self.height, color))
    }
}

/// Pseudo-random vectors seeded from the image bytes.
#[derive(Debug, Clone)]
pub struct StubEncoder {
    pub dim: usize,
}

impl VisualEncoder for StubEncoder {
    fn id(&self) -> &str {
        "stub-encoder"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, image: &RgbImage) -> Result<Vec<f32>> {
        let digest = util::digest_parts([
            &image.width().to_le_bytes()[..],
            &image.height().to_le_bytes()[..],
            image.as_raw(),
        ]);
        let mut seed = [0u8; 32];
        hex::decode_to_slice(&digest, &mut seed).expect("hex digest");
        let mut rng = ChaCha8Rng::from_seed(seed);
        Ok((0..self.dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
    }
}

pub fn t2i_backend(name: &str) -> Result<Arc<dyn TextToImage>> {
    match name {
        "stub" | "stub-t2i" => Ok(Arc::new(StubTextToImage::default())),
        other => Err(Error::backend(other, "unknown text-to-image backend")),
    }
}

pub fn encoder_backend(name: &str, dim: usize) -> Result<Arc<dyn VisualEncoder>> {
    if dim == 0 {
        return Err(Error::InvalidArgument("encoder dimension must be positive".into()));
    }
    match name {
        "stub" | "stub-encoder" => Ok(Arc::new(StubEncoder { dim })),
        other => Err(Error::backend(other, "unknown visual encoder backend")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagerySet {
    pub source_text: String,
    pub seed: u64,
    pub images: Vec<RgbImage>,
    pub backend_id: String,
}

impl ImagerySet {
    pub fn k(&self) -> usize {
        self.images.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageryEmbedding {
    pub vector: Vec<f64>,
    pub k_used: usize,
    pub source_digest: String,
}

/// Key of one cached image.
pub fn cache_key(text: &str, backend_id: &str, seed: u64, k_index: usize) -> String {
    util::digest_parts([
        b"image".as_slice(),
        text.as_bytes(),
        backend_id.as_bytes(),
        &seed.to_le_bytes(),
        &(k_index as u64).to_le_bytes(),
    ])
}

/// Digest identifying the embedding of one imagery set.
pub fn source_digest(text: &str, t2i_id: &str, encoder_id: &str, seed: u64, k: usize) -> String {
    util::digest_parts([
        b"embedding".as_slice(),
        text.as_bytes(),
        t2i_id.as_bytes(),
        encoder_id.as_bytes(),
        &seed.to_le_bytes(),
        &(k as u64).to_le_bytes(),
    ])
}

fn sheet_digest(text: &str, t2i_id: &str, seed: u64, k: usize) -> String {
    util::digest_parts([
        b"sheet".as_slice(),
        text.as_bytes(),
        t2i_id.as_bytes(),
        &seed.to_le_bytes(),
        &(k as u64).to_le_bytes(),
    ])
}

/// Content-addressed on-disk cache. Work on a single key is serialized, so
/// concurrent requests for the same image produce one generation.
#[derive(Debug)]
pub struct ImageCache {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ImageCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ImageCache {
            root: root.into(),
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn key_lock(&self, key: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().expect("cache lock map poisoned");
        locks.entry(key.to_string()).or_default().clone()
    }

    fn image_path(&self, key: &str) -> PathBuf {
        self.root.join("images").join(format!("{key}.png"))
    }

    fn digest_path(&self, key: &str) -> PathBuf {
        self.root.join("images").join(format!("{key}.sha256"))
    }

    pub fn embedding_path(&self, digest: &str) -> PathBuf {
        self.root.join("embeddings").join(format!("{digest}.emb"))
    }

    pub fn sheet_path(&self, digest: &str) -> PathBuf {
        self.root.join("sheets").join(format!("{digest}.png"))
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join("index.json")
    }

    /// Returns the cached image, `None` on a miss, or an error when the
    /// stored bytes do not match their recorded digest.
    pub fn read_image(&self, key: &str) -> Result<Option<RgbImage>> {
        let png_path = self.image_path(key);
        let digest_path = self.digest_path(key);
        if !png_path.exists() || !digest_path.exists() {
            return Ok(None);
        }
        let bytes = util::read_file(&png_path)?;
        let recorded = util::read_file(&digest_path)?;
        let recorded = String::from_utf8_lossy(&recorded);
        if recorded.trim() != util::sha256_hex(&bytes) {
            return Err(Error::CacheCorrupted {
                path: png_path,
                message: "digest mismatch".into(),
            });
        }
        let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png).map_err(|e| {
            Error::CacheCorrupted {
                path: png_path.clone(),
                message: e.to_string(),
            }
        })?;
        Ok(Some(img.to_rgb8()))
    }

    pub fn write_image(&self, key: &str, image: &RgbImage) -> Result<()> {
        let bytes = encode_png(image)?;
        util::write_atomic(&self.image_path(key), &bytes)?;
        util::write_atomic(&self.digest_path(key), util::sha256_hex(&bytes).as_bytes())
    }
}

pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    image
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::InvalidArgument(format!("png encoding failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn generate_imagery(
    text: &str,
    k: usize,
    backend: &dyn TextToImage,
    seed: u64,
    cache: Option<&ImageCache>,
) -> Result<ImagerySet> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let mut images = Vec::with_capacity(k);
    for index in 0..k {
        let image = match cache {
            Some(cache) => {
                let key = cache_key(text, backend.id(), seed, index);
                let lock = cache.key_lock(&key);
                let _guard = lock.lock().expect("cache key lock poisoned");
                match cache.read_image(&key)? {
                    Some(img) => img,
                    None => {
                        let img = generate_one(backend, text, seed, index, k)?;
                        cache.write_image(&key, &img)?;
                        img
                    }
                }
            }
            None => generate_one(backend, text, seed, index, k)?,
        };
        images.push(image);
    }
    Ok(ImagerySet {
        source_text: text.to_string(),
        seed,
        images,
        backend_id: backend.id().to_string(),
    })
}

fn generate_one(backend: &dyn TextToImage, text: &str, seed: u64, index: usize, k: usize) -> Result<RgbImage> {
    backend.generate(text, seed, index).map_err(|e| Error::PartialGeneration {
        generated: index,
        requested: k,
        message: e.to_string(),
    })
}

pub fn encode_all(set: &ImagerySet, encoder: &dyn VisualEncoder) -> Result<Vec<Vec<f32>>> {
    if set.images.is_empty() {
        return Err(Error::InvalidArgument("imagery set is empty".into()));
    }
    set.images
        .iter()
        .map(|img| {
            let v = encoder.encode(img)?;
            if v.len() != encoder.dim() {
                return Err(Error::DimensionMismatch {
                    expected: encoder.dim(),
                    got: v.len(),
                });
            }
            Ok(v)
        })
        .collect()
}

/// Component-wise arithmetic mean. Each component is summed in ascending
/// order, which makes the result independent of the order of `encodings`.
pub fn mean_embedding(encodings: &[Vec<f32>]) -> Result<Vec<f64>> {
    let first = encodings
        .first()
        .ok_or_else(|| Error::InvalidArgument("no encodings to average".into()))?;
    let dim = first.len();
    if let Some(bad) = encodings.iter().find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let n = encodings.len() as f64;
    let mut column = Vec::with_capacity(encodings.len());
    let mean = (0..dim)
        .map(|j| {
            column.clear();
            column.extend(encodings.iter().map(|v| f64::from(v[j])));
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / n
        })
        .collect::<Vec<f64>>();
    if mean.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("imagery embedding is not finite".into()));
    }
    Ok(mean)
}

pub fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn embed_imagery(set: &ImagerySet, encoder: &dyn VisualEncoder) -> Result<ImageryEmbedding> {
    let encodings = encode_all(set, encoder)?;
    Ok(ImageryEmbedding {
        vector: mean_embedding(&encodings)?,
        k_used: set.k(),
        source_digest: source_digest(&set.source_text, &set.backend_id, encoder.id(), set.seed, set.k()),
    })
}

/// Writes per-image encodings: a 16-byte header (`PETV` magic, version,
/// dimension, K as little-endian u32) followed by K x dim little-endian f32.
pub fn write_encodings(path: &Path, encodings: &[Vec<f32>]) -> Result<()> {
    let k = encodings.len();
    let dim = encodings.first().map_or(0, Vec::len);
    let mut bytes = Vec::with_capacity(EMBEDDING_HEADER_LEN + 4 * k * dim);
    bytes.extend_from_slice(&EMBEDDING_MAGIC);
    bytes.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(dim as u32).to_le_bytes());
    bytes.extend_from_slice(&(k as u32).to_le_bytes());
    for v in encodings {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        for x in v {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    util::write_atomic(path, &bytes)
}

pub fn read_encodings(path: &Path) -> Result<Vec<Vec<f32>>> {
    let bytes = util::read_file(path)?;
    let corrupted = |message: &str| Error::CacheCorrupted {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    if bytes.len() < EMBEDDING_HEADER_LEN || bytes[..4] != EMBEDDING_MAGIC {
        return Err(corrupted("bad header"));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
    if word(4) != EMBEDDING_VERSION as usize {
        return Err(corrupted("unsupported version"));
    }
    let (dim, k) = (word(8), word(12));
    if bytes.len() != EMBEDDING_HEADER_LEN + 4 * dim * k {
        return Err(corrupted("length does not match header"));
    }
    Ok(bytes[EMBEDDING_HEADER_LEN..]
        .chunks_exact(4 * dim.max(1))
        .take(k)
        .map(|row| {
            row.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect()
        })
        .collect())
}

/// Grid of `ceil(sqrt(K))` columns; every tile has the size of the first image.
pub fn contact_sheet(set: &ImagerySet) -> Result<RgbImage> {
    let first = set
        .images
        .first()
        .ok_or_else(|| Error::InvalidArgument("imagery set is empty".into()))?;
    let (tw, th) = first.dimensions();
    let k = set.images.len();
    let cols = (k as f64).sqrt().ceil() as u32;
    let rows = (k as u32).div_ceil(cols);
    let mut sheet = RgbImage::new(cols * tw, rows * th);
    for (i, img) in set.images.iter().enumerate() {
        let tile = if img.dimensions() == (tw, th) {
            img.clone()
        } else {
            image::imageops::resize(img, tw, th, image::imageops::FilterType::Triangle)
        };
        let (x, y) = ((i as u32 % cols) * tw, (i as u32 / cols) * th);
        image::imageops::replace(&mut sheet, &tile, i64::from(x), i64::from(y));
    }
    Ok(sheet)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageryConfig {
    pub k: usize,
    pub seed: u64,
    /// L2-normalize the mean vector. Off by default.
    pub normalize: bool,
}

impl Default for ImageryConfig {
    fn default() -> Self {
        ImageryConfig {
            k: DEFAULT_K,
            seed: 0,
            normalize: false,
        }
    }
}

/// Backends, cache and settings bundled together.
pub struct ImageryEngine {
    pub t2i: Arc<dyn TextToImage>,
    pub encoder: Arc<dyn VisualEncoder>,
    pub cache: ImageCache,
    pub config: ImageryConfig,
}

/// Result of preparing one text: its embedding and its contact sheet file.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedImagery {
    pub embedding: ImageryEmbedding,
    pub sheet_digest: String,
    pub sheet_path: PathBuf,
}

impl ImageryEngine {
    pub fn new(
        t2i: Arc<dyn TextToImage>,
        encoder: Arc<dyn VisualEncoder>,
        cache_root: impl Into<PathBuf>,
        config: ImageryConfig,
    ) -> Self {
        ImageryEngine {
            t2i,
            encoder,
            cache: ImageCache::new(cache_root),
            config,
        }
    }

    pub fn digest(&self, text: &str) -> String {
        source_digest(text, self.t2i.id(), self.encoder.id(), self.config.seed, self.config.k)
    }

    pub fn generate(&self, text: &str) -> Result<ImagerySet> {
        generate_imagery(text, self.config.k, self.t2i.as_ref(), self.config.seed, Some(&self.cache))
    }

    /// Loads or computes the embedding for `text`, writing the encodings
    /// sidecar on a miss.
    pub fn embedding(&self, text: &str) -> Result<ImageryEmbedding> {
        let digest = self.digest(text);
        let path = self.cache.embedding_path(&digest);
        let lock = self.cache.key_lock(&digest);
        let _guard = lock.lock().expect("cache key lock poisoned");
        let encodings = if path.exists() {
            let enc = read_encodings(&path)?;
            if enc.len() != self.config.k || enc.iter().any(|v| v.len() != self.encoder.dim()) {
                return Err(Error::CacheCorrupted {
                    path,
                    message: "header does not match configured K or encoder dimension".into(),
                });
            }
            enc
        } else {
            let set = self.generate(text)?;
            let enc = encode_all(&set, self.encoder.as_ref())?;
            write_encodings(&path, &enc)?;
            enc
        };
        let mut vector = mean_embedding(&encodings)?;
        if self.config.normalize {
            l2_normalize(&mut vector);
        }
        Ok(ImageryEmbedding {
            vector,
            k_used: encodings.len(),
            source_digest: digest,
        })
    }

    /// Writes the contact sheet for `text` if missing and returns its path.
    pub fn sheet(&self, text: &str) -> Result<(String, PathBuf)> {
        let digest = sheet_digest(text, self.t2i.id(), self.config.seed, self.config.k);
        let path = self.cache.sheet_path(&digest);
        let lock = self.cache.key_lock(&format!("sheet-{digest}"));
        let _guard = lock.lock().expect("cache key lock poisoned");
        if !path.exists() {
            let set = self.generate(text)?;
            util::write_atomic(&path, &encode_png(&contact_sheet(&set)?)?)?;
        }
        Ok((digest, path))
    }

    pub fn prepare(&self, text: &str) -> Result<PreparedImagery> {
        let embedding = self.embedding(text)?;
        let (sheet_digest, sheet_path) = self.sheet(text)?;
        Ok(PreparedImagery {
            embedding,
            sheet_digest,
            sheet_path,
        })
    }

    /// Prepares imagery for every term and description in the lexicon, in
    /// parallel across distinct texts, and writes `index.json`.
    pub fn build_store(&self, lexicon: &Lexicon) -> Result<ImageryStore> {
        let mut texts: Vec<&str> = lexicon
            .entries()
            .iter()
            .flat_map(|e| [e.term.as_str(), e.description.as_str()])
            .filter(|t| !t.trim().is_empty())
            .collect();
        texts.sort_unstable();
        texts.dedup();
        let prepared: Vec<(String, PreparedImagery)> = texts
            .par_iter()
            .map(|t| self.prepare(t).map(|p| (t.to_string(), p)))
            .collect::<Result<_>>()?;
        let index = ImageryIndex {
            k: self.config.k,
            seed: self.config.seed,
            normalize: self.config.normalize,
            t2i_backend: self.t2i.id().to_string(),
            encoder_backend: self.encoder.id().to_string(),
            dim: self.encoder.dim(),
            entries: prepared
                .iter()
                .map(|(t, p)| {
                    (
                        t.clone(),
                        IndexEntry {
                            embedding: p.embedding.source_digest.clone(),
                            sheet: p.sheet_digest.clone(),
                        },
                    )
                })
                .collect(),
        };
        util::write_json_pretty(&self.cache.index_path(), &index)?;
        Ok(ImageryStore {
            dim: index.dim,
            embeddings: prepared.into_iter().map(|(t, p)| (t, p.embedding)).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub embedding: String,
    pub sheet: String,
}

/// `index.json` written by [`ImageryEngine::build_store`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageryIndex {
    pub k: usize,
    pub seed: u64,
    pub normalize: bool,
    pub t2i_backend: String,
    pub encoder_backend: String,
    pub dim: usize,
    pub entries: BTreeMap<String, IndexEntry>,
}

impl ImageryIndex {
    pub fn load(cache_root: &Path) -> Result<Self> {
        util::read_json(&cache_root.join("index.json"))
    }
}

/// Text -> mean embedding lookup used at training and scoring time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageryStore {
    pub dim: usize,
    pub embeddings: BTreeMap<String, ImageryEmbedding>,
}

impl ImageryStore {
    /// Reads `index.json` and every referenced encodings file.
    pub fn load(cache_root: &Path) -> Result<Self> {
        let index_path = cache_root.join("index.json");
        if !index_path.exists() {
            return Err(Error::io(
                &index_path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "imagery cache index not found"),
            ));
        }
        let index = ImageryIndex::load(cache_root)?;
        let cache = ImageCache::new(cache_root);
        let mut embeddings = BTreeMap::new();
        for (text, entry) in &index.entries {
            let path = cache.embedding_path(&entry.embedding);
            let enc = read_encodings(&path)?;
            if enc.len() != index.k || enc.iter().any(|v| v.len() != index.dim) {
                return Err(Error::CacheCorrupted {
                    path,
                    message: "header does not match index".into(),
                });
            }
            let mut vector = mean_embedding(&enc)?;
            if index.normalize {
                l2_normalize(&mut vector);
            }
            embeddings.insert(
                text.clone(),
                ImageryEmbedding {
                    vector,
                    k_used: enc.len(),
                    source_digest: entry.embedding.clone(),
                },
            );
        }
        Ok(ImageryStore {
            dim: index.dim,
            embeddings,
        })
    }

    pub fn get(&self, text: &str) -> Option<&ImageryEmbedding> {
        self.embeddings.get(text)
    }

    pub fn insert(&mut self, text: impl Into<String>, embedding: ImageryEmbedding) {
        self.embeddings.insert(text.into(), embedding);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct FailingAfter(usize);

    impl TextToImage for FailingAfter {
        fn id(&self) -> &str {
            "failing"
        }
        fn is_deterministic(&self) -> bool {
            true
        }
        fn generate(&self, text: &str, seed: u64, index: usize) -> Result<RgbImage> {
            if index >= self.0 {
                return Err(Error::backend("failing", "out of quota"));
            }
            StubTextToImage::default().generate(text, seed, index)
        }
    }

    struct WrongDim;

    impl VisualEncoder for WrongDim {
        fn id(&self) -> &str {
            "wrong"
        }
        fn dim(&self) -> usize {
            4
        }
        fn encode(&self, _: &RgbImage) -> Result<Vec<f32>> {
            Ok(vec![0.0; 3])
        }
    }

    #[test]
    fn default_k_is_nine() {
        let set = generate_imagery("late", DEFAULT_K, &StubTextToImage::default(), 0, None).unwrap();
        assert_eq!(set.k(), 9);
    }

    #[test]
    fn k_zero_rejected() {
        assert!(generate_imagery("late", 0, &StubTextToImage::default(), 0, None).is_err());
    }

    #[test]
    fn partial_failure_reports_count() {
        match generate_imagery("late", 9, &FailingAfter(4), 0, None) {
            Err(Error::PartialGeneration {
                generated, requested, ..
            }) => assert_eq!((generated, requested), (4, 9)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cache_hit_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ImageCache::new(dir.path());
        let backend = StubTextToImage::default();
        let a = generate_imagery("pass on", 3, &backend, 5, Some(&cache)).unwrap();
        // entries are keyed by backend id, so another backend misses
        let b = generate_imagery("pass on", 3, &FailingAfter(0), 5, Some(&cache));
        assert!(b.is_err(), "different backend id must not share cache entries");
        let key = cache_key("pass on", backend.id(), 5, 0);
        assert_eq!(cache.read_image(&key).unwrap().unwrap(), a.images[0]);
        let again = generate_imagery("pass on", 3, &backend, 5, Some(&cache)).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn corrupted_cache_entry_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ImageCache::new(dir.path());
        let backend = StubTextToImage::default();
        generate_imagery("late", 2, &backend, 0, Some(&cache)).unwrap();
        let key = cache_key("late", backend.id(), 0, 1);
        let path = cache.image_path(&key);
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            generate_imagery("late", 2, &backend, 0, Some(&cache)),
            Err(Error::CacheCorrupted { .. })
        ));
    }

    #[test]
    fn cache_keys() {
        assert_eq!(cache_key("late", "b", 0, 0), cache_key("late", "b", 0, 0));
        assert_ne!(cache_key("late", "b", 0, 0), cache_key("pass on", "b", 0, 0));
        assert_ne!(cache_key("late", "b", 0, 0), cache_key("late", "b", 0, 1));
        assert_ne!(cache_key("late", "b", 0, 0), cache_key("late", "b", 1, 0));
    }

    #[test]
    fn mean_of_two_basis_vectors() {
        let m = mean_embedding(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(m, vec![0.5, 0.5]);
    }

    #[test]
    fn encoder_dimension_mismatch() {
        let set = generate_imagery("late", 2, &StubTextToImage::default(), 0, None).unwrap();
        assert!(matches!(
            embed_imagery(&set, &WrongDim),
            Err(Error::DimensionMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn encodings_file_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.emb");
        let enc = vec![vec![1.5f32, -2.0, 3.25], vec![0.1, 0.2, f32::MIN_POSITIVE]];
        write_encodings(&path, &enc).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"PETV");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 3, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1.5f32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 4 * 6);
        assert_eq!(read_encodings(&path).unwrap(), enc);
        std::fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(read_encodings(&path), Err(Error::CacheCorrupted { .. })));
    }

    #[test]
    fn contact_sheet_is_three_by_three() {
        let t2i = StubTextToImage { width: 8, height: 6 };
        let set = generate_imagery("lavatory", 9, &t2i, 0, None).unwrap();
        let sheet = contact_sheet(&set).unwrap();
        assert_eq!(sheet.dimensions(), (24, 18));
        for (i, img) in set.images.iter().enumerate() {
            let (x, y) = ((i as u32 % 3) * 8, (i as u32 / 3) * 6);
            assert_eq!(sheet.get_pixel(x + 1, y + 1), img.get_pixel(0, 0));
        }
    }

    #[test]
    fn engine_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let engine = ImageryEngine::new(
            Arc::new(StubTextToImage::default()),
            Arc::new(StubEncoder { dim: 8 }),
            dir.path(),
            ImageryConfig { k: 3, ..Default::default() },
        );
        let lex = Lexicon::new(
            Lexicon::bundled().entries()[..4].to_vec(),
        )
        .unwrap();
        let built = engine.build_store(&lex).unwrap();
        let loaded = ImageryStore::load(dir.path()).unwrap();
        assert_eq!(built, loaded);
        let late = loaded.get("late").unwrap();
        assert_eq!(late.k_used, 3);
        assert_eq!(late.vector.len(), 8);
        let direct = embed_imagery(
            &generate_imagery("late", 3, &StubTextToImage::default(), 0, None).unwrap(),
            &StubEncoder { dim: 8 },
        )
        .unwrap();
        assert_eq!(&direct, late);
    }
}
