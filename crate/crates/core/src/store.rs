//! Append-only embedding store.
//!
//! Layout of a store directory:
//!
//! * `vectors.bin`: records packed back to back, each `dim` little-endian
//!   IEEE-754 `f32` values, no padding.
//! * `index.jsonl`: a header line
//!   `{"format":"challenger-embedding-store","schema_version":1,"dtype":"f32le"}`
//!   followed by one line per record:
//!   `{"key":..,"offset":<byte offset into vectors.bin>,"dim":..,"provenance":{..}}`.
//!
//! A record's bytes are written and flushed before its index line, so the
//! index only ever points at complete vectors. When a key appears twice the
//! later line wins. There is one writer; readers open their own snapshot.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const STORE_FORMAT: &str = "challenger-embedding-store";
pub const STORE_SCHEMA_VERSION: u32 = 1;
const INDEX_FILE: &str = "index.jsonl";
const VECTORS_FILE: &str = "vectors.bin";

pub type Provenance = Map<String, Value>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StoreHeader {
    format: String,
    schema_version: u32,
    dtype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub key: String,
    pub offset: u64,
    pub dim: usize,
    pub provenance: Provenance,
}

#[derive(Debug)]
pub struct EmbeddingStore {
    dir: PathBuf,
    entries: BTreeMap<String, IndexEntry>,
    /// Decoded contents of `vectors.bin`, indexed by `offset / 4`.
    data: Vec<f32>,
}

impl EmbeddingStore {
    /// Opens a store, creating an empty one when the directory has none.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let index = dir.join(INDEX_FILE);
        if !index.exists() {
            let header = StoreHeader {
                format: STORE_FORMAT.into(),
                schema_version: STORE_SCHEMA_VERSION,
                dtype: "f32le".into(),
            };
            fs::write(&index, serde_json::to_string(&header)? + "\n").map_err(|e| Error::io(&index, e))?;
            fs::write(dir.join(VECTORS_FILE), []).map_err(|e| Error::io(dir.join(VECTORS_FILE), e))?;
        }
        Self::read(dir)
    }

    /// Opens an existing store without creating anything.
    pub fn open_existing(dir: &Path) -> Result<Self> {
        if !dir.join(INDEX_FILE).exists() {
            return Err(Error::Lookup(format!("embedding store at {}", dir.display())));
        }
        Self::read(dir)
    }

    /// Removes any previous contents and opens an empty store.
    pub fn create_fresh(dir: &Path) -> Result<Self> {
        for name in [INDEX_FILE, VECTORS_FILE] {
            let p = dir.join(name);
            if p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        Self::open(dir)
    }

    fn read(dir: &Path) -> Result<Self> {
        let index_path = dir.join(INDEX_FILE);
        let file = File::open(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate().peekable();
        let parse_err = |line: usize, message: String| Error::Parse {
            path: index_path.clone(),
            line,
            message,
        };

        let header: StoreHeader = match lines.next() {
            Some((_, l)) => {
                let l = l.map_err(|e| Error::io(&index_path, e))?;
                serde_json::from_str(&l).map_err(|e| parse_err(1, e.to_string()))?
            }
            None => return Err(parse_err(1, "empty index".into())),
        };
        if header.format != STORE_FORMAT || header.schema_version != STORE_SCHEMA_VERSION {
            return Err(parse_err(
                1,
                format!("unsupported store {} v{}", header.format, header.schema_version),
            ));
        }

        let bytes = fs::read(dir.join(VECTORS_FILE)).map_err(|e| Error::io(dir.join(VECTORS_FILE), e))?;
        let data: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();

        let mut entries = BTreeMap::new();
        while let Some((i, line)) = lines.next() {
            let line = line.map_err(|e| Error::io(&index_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: IndexEntry = match serde_json::from_str(&line) {
                Ok(e) => e,
                // a torn final line from an interrupted writer is ignored
                Err(_) if lines.peek().is_none() => break,
                Err(e) => return Err(parse_err(i + 1, e.to_string())),
            };
            let end = entry.offset as usize / 4 + entry.dim;
            if entry.offset % 4 != 0 || end > data.len() {
                return Err(parse_err(
                    i + 1,
                    format!("record {:?} points past vectors.bin", entry.key),
                ));
            }
            entries.insert(entry.key.clone(), entry);
        }
        Ok(EmbeddingStore {
            dir: dir.to_path_buf(),
            entries,
            data,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Keys in sorted order.
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entry(&self, key: &str) -> Option<&IndexEntry> {
        self.entries.get(key)
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.entries.get(key).map(|e| {
            let start = e.offset as usize / 4;
            &self.data[start..start + e.dim]
        })
    }

    pub fn require(&self, key: &str) -> Result<&[f32]> {
        self.get(key).ok_or_else(|| Error::Lookup(key.to_string()))
    }

    /// Appends one record; the vector bytes land before the index line.
    pub fn append(&mut self, key: &str, vector: &[f32], provenance: Provenance) -> Result<()> {
        let vectors_path = self.dir.join(VECTORS_FILE);
        let offset = (self.data.len() * 4) as u64;
        let mut bytes = Vec::with_capacity(vector.len() * 4);
        for v in vector {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let mut vf = OpenOptions::new()
            .append(true)
            .open(&vectors_path)
            .map_err(|e| Error::io(&vectors_path, e))?;
        vf.write_all(&bytes).map_err(|e| Error::io(&vectors_path, e))?;
        vf.flush().map_err(|e| Error::io(&vectors_path, e))?;

        let entry = IndexEntry {
            key: key.to_string(),
            offset,
            dim: vector.len(),
            provenance,
        };
        let index_path = self.dir.join(INDEX_FILE);
        let mut line = serde_json::to_string(&entry)?;
        line.push('\n');
        let mut idx = OpenOptions::new()
            .append(true)
            .open(&index_path)
            .map_err(|e| Error::io(&index_path, e))?;
        idx.write_all(line.as_bytes()).map_err(|e| Error::io(&index_path, e))?;
        idx.flush().map_err(|e| Error::io(&index_path, e))?;

        self.data.extend_from_slice(vector);
        self.entries.insert(entry.key.clone(), entry);
        Ok(())
    }
}
