//! Dataset ingestion: rating triples, dense ASCII matrices, and the
//! toolkit's own dataset JSON.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::cli::config::{DataConfig, DataFormat, Dataset};
use crate::matrix::{LabeledMatrix, ObservationMask};
use crate::{Error, Result};

/// Ingestion outcome: the dataset plus a count of duplicate (user, item)
/// entries that were overwritten (last wins).
#[derive(Debug, Clone)]
pub struct IngestResult {
    pub dataset: Dataset,
    pub duplicates: usize,
}

/// Loads a dataset according to the data config.
pub fn ingest(cfg: &DataConfig) -> Result<IngestResult> {
    let path = Path::new(&cfg.path);
    match cfg.format {
        DataFormat::Triples => ingest_triples(path, cfg.binarize_threshold),
        DataFormat::DenseAscii => ingest_dense_ascii(path, cfg.binarize_threshold),
        DataFormat::Dataset => {
            let dataset: Dataset = crate::cli::artifacts::read_enveloped(path)?;
            Ok(IngestResult {
                dataset,
                duplicates: 0,
            })
        }
    }
}

fn binarize(rating: f64, threshold: Option<f64>) -> f64 {
    match threshold {
        // strictly greater than the threshold counts as positive
        Some(t) => f64::from(u8::from(rating > t)),
        None => rating,
    }
}

/// `user<TAB>item<TAB>rating` per line (any whitespace separates fields).
/// Ids are remapped densely in order of first appearance; duplicate pairs
/// keep the last rating.
fn ingest_triples(path: &Path, threshold: Option<f64>) -> Result<IngestResult> {
    let text = fs::read_to_string(path)?;
    let mut user_ids: BTreeMap<u64, usize> = BTreeMap::new();
    let mut item_ids: BTreeMap<u64, usize> = BTreeMap::new();
    let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut duplicates = 0usize;

    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let parse_id = |field: Option<&str>, what: &str| -> Result<u64> {
            field
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    message: format!("missing {what}"),
                })?
                .parse::<u64>()
                .map_err(|e| Error::Parse {
                    line: line_no,
                    message: format!("bad {what}: {e}"),
                })
        };
        let user = parse_id(fields.next(), "user id")?;
        let item = parse_id(fields.next(), "item id")?;
        let rating: f64 = fields
            .next()
            .ok_or_else(|| Error::Parse {
                line: line_no,
                message: "missing rating".to_string(),
            })?
            .parse()
            .map_err(|e| Error::Parse {
                line: line_no,
                message: format!("bad rating: {e}"),
            })?;
        if let Some(extra) = fields.next() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("unexpected trailing field '{extra}'"),
            });
        }
        if !rating.is_finite() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("non-finite rating {rating}"),
            });
        }
        let next_user = user_ids.len();
        let u = *user_ids.entry(user).or_insert(next_user);
        let next_item = item_ids.len();
        let i = *item_ids.entry(item).or_insert(next_item);
        if entries
            .insert((u, i), binarize(rating, threshold))
            .is_some()
        {
            duplicates += 1;
        }
    }
    if entries.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no triples found".to_string(),
        });
    }
    let rows = user_ids.len();
    let cols = item_ids.len();
    let mut values = vec![0.0; rows * cols];
    let mut bits = vec![0u8; rows * cols];
    for (&(u, i), &rating) in &entries {
        values[u * cols + i] = rating;
        bits[u * cols + i] = 1;
    }
    Ok(IngestResult {
        dataset: Dataset {
            y_true: LabeledMatrix::new(rows, cols, values)?,
            p_true: None,
            train_mask: Some(ObservationMask::new(rows, cols, bits)?),
            test_mask: None,
        },
        duplicates,
    })
}

/// Whitespace-separated matrix, one row per line; a cell of exactly 0 means
/// unobserved (not a zero label).
fn ingest_dense_ascii(path: &Path, threshold: Option<f64>) -> Result<IngestResult> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let line_no = line_no + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let row: Vec<f64> = trimmed
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>().map_err(|e| Error::Parse {
                    line: line_no,
                    message: format!("bad cell '{tok}': {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("row has {} cells, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            message: "no rows found".to_string(),
        });
    }
    let n_rows = rows.len();
    let n_cols = rows[0].len();
    let mut values = Vec::with_capacity(n_rows * n_cols);
    let mut bits = Vec::with_capacity(n_rows * n_cols);
    for row in rows {
        for cell in row {
            if cell == 0.0 {
                values.push(0.0);
                bits.push(0);
            } else {
                values.push(binarize(cell, threshold));
                bits.push(1);
            }
        }
    }
    Ok(IngestResult {
        dataset: Dataset {
            y_true: LabeledMatrix::new(n_rows, n_cols, values)?,
            p_true: None,
            train_mask: Some(ObservationMask::new(n_rows, n_cols, bits)?),
            test_mask: None,
        },
        duplicates: 0,
    })
}
