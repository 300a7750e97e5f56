//! Line-delimited manifest format.
//!
//! ```text
//! {"classes":["farm","port"]}
//! {"image_id":"a","location_id":"L1","timestamp":0,"path":"a.png","label":"farm","width":32,"height":32}
//! ```
//!
//! The first line carries the class vocabulary; every following non-blank
//! line is one record whose `label` is a vocabulary name or `null`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ImageRecord, Manifest};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    classes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    image_id: String,
    location_id: String,
    timestamp: i64,
    path: String,
    label: Option<String>,
    width: u32,
    height: u32,
}

pub fn read_manifest(reader: impl Read) -> Result<Manifest> {
    let reader = BufReader::new(reader);
    let mut vocab: Option<Vec<String>> = None;
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Format {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match &vocab {
            None => {
                let header: Header = serde_json::from_str(&line).map_err(|e| Error::Format {
                    line: lineno,
                    message: format!("expected class vocabulary header: {e}"),
                })?;
                index = header
                    .classes
                    .iter()
                    .enumerate()
                    .map(|(i, c)| (c.clone(), i))
                    .collect();
                if index.len() != header.classes.len() {
                    return Err(Error::Format {
                        line: lineno,
                        message: "class vocabulary contains duplicates".into(),
                    });
                }
                vocab = Some(header.classes);
            }
            Some(_) => {
                let rec: RecordLine = serde_json::from_str(&line).map_err(|e| Error::Format {
                    line: lineno,
                    message: e.to_string(),
                })?;
                let class_label = match rec.label {
                    None => None,
                    Some(name) => Some(*index.get(&name).ok_or_else(|| {
                        Error::Validation(format!(
                            "line {lineno}: unknown class `{name}` for image `{}`",
                            rec.image_id
                        ))
                    })?),
                };
                records.push(ImageRecord {
                    image_id: rec.image_id,
                    location_id: rec.location_id,
                    timestamp: rec.timestamp,
                    path: rec.path,
                    class_label,
                    width: rec.width,
                    height: rec.height,
                });
            }
        }
    }
    let vocab = vocab.ok_or(Error::Format {
        line: 1,
        message: "missing class vocabulary header".into(),
    })?;
    Manifest::from_records(records, vocab)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(file)
}

pub fn write_manifest(manifest: &Manifest, writer: impl Write) -> Result<()> {
    let mut w = BufWriter::new(writer);
    let io = |e: std::io::Error| Error::io("<manifest writer>", e);
    let header = Header {
        classes: manifest.class_vocabulary().to_vec(),
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| io(e.into()))?;
    w.write_all(b"\n").map_err(io)?;
    for (_, r) in manifest.records() {
        let line = RecordLine {
            image_id: r.image_id.clone(),
            location_id: r.location_id.clone(),
            timestamp: r.timestamp,
            path: r.path.clone(),
            label: r.class_label.map(|c| manifest.class_vocabulary()[c].clone()),
            width: r.width,
            height: r.height,
        };
        serde_json::to_writer(&mut w, &line).map_err(|e| io(e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn save_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_manifest(manifest, file)
}
