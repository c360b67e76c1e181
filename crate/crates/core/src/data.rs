//! Dataset ingestion: manifest and gaze CSVs, image decoding to normalized
//! channel-last floats, deterministic train/validation splitting, and
//! seeded batch iteration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::gaze::GazeRecord;
use crate::losses::AttentionRegion;
use crate::rng::Rng;
use crate::system::Batch;

#[derive(Error, Debug)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path} row {row}: {message}")]
    BadRow { path: String, row: usize, message: String },
    #[error("cannot decode image {path}: {message}")]
    BadImage { path: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<V, E = DataError> = std::result::Result<V, E>;

/// One manifest row after label-vocabulary resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub image_path: String,
    pub label_name: String,
    pub label: usize,
    pub region: Option<AttentionRegion>,
    pub split: Option<String>,
}

/// A parsed manifest with its lexicographic label vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    pub classes: Vec<String>,
}

impl Manifest {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Train/validation split: honor a `split` column when present,
    /// otherwise an 85/15 deterministic hash of the image path.
    pub fn split(&self) -> (Vec<&ManifestRow>, Vec<&ManifestRow>) {
        let explicit = self.rows.iter().any(|r| r.split.is_some());
        let mut train = Vec::new();
        let mut val = Vec::new();
        for row in &self.rows {
            let is_val = if explicit {
                matches!(row.split.as_deref(), Some("val") | Some("valid") | Some("validation"))
            } else {
                path_hash(&row.image_path) % 100 >= 85
            };
            if is_val {
                val.push(row);
            } else {
                train.push(row);
            }
        }
        (train, val)
    }
}

/// Stable 64-bit hash of a path string (FNV-1a).
fn path_hash(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn get<'a>(
    headers: &csv::StringRecord,
    record: &'a csv::StringRecord,
    name: &str,
) -> Option<&'a str> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .and_then(|i| record.get(i))
        .map(str::trim)
}

/// Parse a manifest CSV with header `image_path,label[,cx,cy,h,w][,split]`.
/// Labels are indexed by sorted name so class ids are reproducible.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| DataError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    let headers = reader
        .headers()
        .map_err(|source| DataError::Csv { path: path.display().to_string(), source })?
        .clone();
    for required in ["image_path", "label"] {
        if !headers.iter().any(|h| h.trim() == required) {
            return Err(DataError::Invalid(format!(
                "{} is missing the required column {required:?}",
                path.display()
            )));
        }
    }
    let mut raw = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after header
        let record = record.map_err(|source| DataError::Csv {
            path: path.display().to_string(),
            source,
        })?;
        let image_path = get(&headers, &record, "image_path")
            .filter(|s| !s.is_empty())
            .ok_or_else(|| DataError::BadRow {
                path: path.display().to_string(),
                row,
                message: "empty image_path".into(),
            })?
            .to_string();
        let label_name = get(&headers, &record, "label")
            .filter(|s| !s.is_empty())
            .ok_or_else(|| DataError::BadRow {
                path: path.display().to_string(),
                row,
                message: "empty label".into(),
            })?
            .to_string();
        let mut coords = [None::<f64>; 4];
        for (slot, name) in ["cx", "cy", "h", "w"].iter().enumerate() {
            if let Some(text) = get(&headers, &record, name).filter(|s| !s.is_empty()) {
                let v = text.parse::<f64>().map_err(|_| DataError::BadRow {
                    path: path.display().to_string(),
                    row,
                    message: format!("bad {name} value {text:?}"),
                })?;
                coords[slot] = Some(v);
            }
        }
        let region = match coords {
            [Some(cx), Some(cy), Some(h), Some(w)] => Some(AttentionRegion::new(cx, cy, h, w)),
            [None, None, None, None] => None,
            _ => {
                return Err(DataError::BadRow {
                    path: path.display().to_string(),
                    row,
                    message: "region needs all of cx, cy, h, w".into(),
                })
            }
        };
        let split = get(&headers, &record, "split")
            .filter(|s| !s.is_empty())
            .map(str::to_string);
        raw.push((image_path, label_name, region, split));
    }
    if raw.is_empty() {
        return Err(DataError::Invalid(format!("{} has no data rows", path.display())));
    }
    let classes: Vec<String> = raw
        .iter()
        .map(|(_, l, ..)| l.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> =
        classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let rows = raw
        .into_iter()
        .map(|(image_path, label_name, region, split)| {
            let label = index[label_name.as_str()];
            ManifestRow { image_path, label_name, label, region, split }
        })
        .collect();
    Ok(Manifest { rows, classes })
}

/// Parse a gaze CSV with header `image_id,x,y[,timestamp]`, grouped by
/// image id in first-seen order.
pub fn load_gaze(path: &Path) -> Result<Vec<(String, Vec<GazeRecord>)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|source| DataError::Csv {
        path: path.display().to_string(),
        source,
    })?;
    let headers = reader
        .headers()
        .map_err(|source| DataError::Csv { path: path.display().to_string(), source })?
        .clone();
    for required in ["image_id", "x", "y"] {
        if !headers.iter().any(|h| h.trim() == required) {
            return Err(DataError::Invalid(format!(
                "{} is missing the required column {required:?}",
                path.display()
            )));
        }
    }
    let mut order = Vec::new();
    let mut groups: BTreeMap<String, Vec<GazeRecord>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|source| DataError::Csv {
            path: path.display().to_string(),
            source,
        })?;
        let bad = |message: String| DataError::BadRow {
            path: path.display().to_string(),
            row,
            message,
        };
        let image_id = get(&headers, &record, "image_id")
            .filter(|s| !s.is_empty())
            .ok_or_else(|| bad("empty image_id".into()))?
            .to_string();
        let parse_i64 = |name: &str| -> Result<i64> {
            let text = get(&headers, &record, name)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| bad(format!("empty {name}")))?;
            text.parse().map_err(|_| bad(format!("bad {name} value {text:?}")))
        };
        let x = parse_i64("x")?;
        let y = parse_i64("y")?;
        let timestamp = get(&headers, &record, "timestamp")
            .filter(|s| !s.is_empty())
            .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad timestamp {t:?}"))))
            .transpose()?;
        if !groups.contains_key(&image_id) {
            order.push(image_id.clone());
        }
        groups
            .entry(image_id.clone())
            .or_default()
            .push(GazeRecord { image_id, x, y, timestamp });
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let pts = groups.remove(&id).unwrap();
            (id, pts)
        })
        .collect())
}

/// Decode an image file to `[size, size, channels]` floats in [0, 1],
/// resized with bilinear filtering.
pub fn load_image(path: &Path, size: usize, channels: usize) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|e| DataError::BadImage {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let resized = img.resize_exact(size as u32, size as u32, image::imageops::FilterType::Triangle);
    match channels {
        1 => Ok(resized.to_luma8().into_raw().iter().map(|&v| v as f32 / 255.0).collect()),
        3 => Ok(resized.to_rgb8().into_raw().iter().map(|&v| v as f32 / 255.0).collect()),
        _ => Err(DataError::Invalid(format!("unsupported channel count {channels}"))),
    }
}

/// A fully decoded in-memory dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    pub regions: Vec<Option<AttentionRegion>>,
    pub paths: Vec<String>,
    pub size: usize,
    pub channels: usize,
}

impl Dataset {
    /// Decode every row up front.
    pub fn load(rows: &[&ManifestRow], image_root: Option<&Path>, size: usize, channels: usize) -> Result<Self> {
        if rows.is_empty() {
            return Err(DataError::Invalid("empty dataset".into()));
        }
        let mut images = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        let mut regions = Vec::with_capacity(rows.len());
        let mut paths = Vec::with_capacity(rows.len());
        for row in rows {
            let path: PathBuf = match image_root {
                Some(root) => root.join(&row.image_path),
                None => PathBuf::from(&row.image_path),
            };
            images.push(load_image(&path, size, channels)?);
            labels.push(row.label);
            regions.push(row.region);
            paths.push(row.image_path.clone());
        }
        Ok(Dataset { images, labels, regions, paths, size, channels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Seeded epoch order: a full shuffle driven by (seed, epoch) only.
    pub fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = Rng::new(seed).split(epoch.wrapping_add(0x9e37));
        rng.shuffle(&mut order);
        order
    }

    /// Batches for one epoch, in the seeded order. The final short batch is
    /// kept.
    pub fn batches(&self, seed: u64, epoch: u64, batch_size: usize) -> Vec<Batch<f32>> {
        let order = self.epoch_order(seed, epoch);
        order
            .chunks(batch_size.max(1))
            .map(|chunk| self.gather_batch(chunk))
            .collect()
    }

    /// One batch from explicit sample indices.
    pub fn gather_batch(&self, indices: &[usize]) -> Batch<f32> {
        let px = self.size * self.size * self.channels;
        let mut images = Vec::with_capacity(indices.len() * px);
        let mut labels = Vec::with_capacity(indices.len());
        let mut regions = Vec::new();
        let all_regions = indices.iter().all(|&i| self.regions[i].is_some());
        for &i in indices {
            images.extend_from_slice(&self.images[i]);
            labels.push(self.labels[i]);
            if all_regions {
                regions.push(self.regions[i].unwrap());
            }
        }
        Batch {
            images,
            h: self.size,
            w: self.size,
            c: self.channels,
            labels,
            regions: all_regions.then_some(regions),
        }
    }
}
