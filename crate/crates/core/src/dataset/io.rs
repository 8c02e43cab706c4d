use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};

use super::{AttributeSchema, Dataset, ItemRecord, UserHistory};
use crate::error::{Error, Result};

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Reads `schema.json`, `items.jsonl` and `users.jsonl` and validates every
/// cross-reference.
pub fn load_dataset(items_path: &Path, users_path: &Path, schema_path: &Path) -> Result<Dataset> {
    let schema_text = fs::read_to_string(schema_path).map_err(|e| Error::io(schema_path, e))?;
    let schema: AttributeSchema =
        serde_json::from_str(&schema_text).map_err(|e| Error::Malformed {
            path: schema_path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
    let items: Vec<ItemRecord> = read_jsonl(items_path)?;
    let users: Vec<UserHistory> = read_jsonl(users_path)?;
    Dataset::new(schema, items, users)
}

fn schema_json(schema: &AttributeSchema) -> String {
    let mut s = serde_json::to_string_pretty(schema).expect("schema serializes");
    s.push('\n');
    s
}

/// Writes the canonical form: items and users sorted by id, one record per
/// line, fields in declaration order.
pub fn write_dataset(
    dataset: &Dataset,
    items_path: &Path,
    users_path: &Path,
    schema_path: &Path,
) -> Result<()> {
    fs::write(schema_path, schema_json(dataset.schema())).map_err(|e| Error::io(schema_path, e))?;
    write_lines(items_path, dataset.items())?;
    write_lines(users_path, dataset.users())?;
    Ok(())
}

fn write_lines<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// SHA-256 over the canonical serialization (hex).
pub fn dataset_digest(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(schema_json(dataset.schema()).as_bytes());
    for item in dataset.items() {
        h.update(serde_json::to_vec(item).expect("item serializes"));
        h.update(b"\n");
    }
    for user in dataset.users() {
        h.update(serde_json::to_vec(user).expect("user serializes"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}
