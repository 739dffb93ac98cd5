//! Artifact emission: JSON reports and CSV tables, each embedding the
//! resolved config hash and seed so reruns are verifiable byte for byte.
//! Nothing here writes timestamps.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::numeric::fmt_sig;
use crate::Result;

/// Floats in CSV output carry 6 significant digits.
pub const CSV_SIG_DIGITS: usize = 6;

/// SHA-256 hex of the resolved config's canonical JSON.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let canonical = serde_json::to_string(config)?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes a JSON artifact wrapping the payload with provenance:
/// `{schema, config_hash, seed, config, result}`.
pub fn write_json<C: Serialize, T: Serialize>(
    out_dir: &Path,
    name: &str,
    schema: &str,
    config: &C,
    seed: u64,
    result: &T,
) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let body = serde_json::json!({
        "schema": schema,
        "config_hash": config_hash(config)?,
        "seed": seed,
        "config": config,
        "result": result,
    });
    let path = out_dir.join(name);
    fs::write(&path, format!("{}\n", serde_json::to_string_pretty(&body)?))?;
    Ok(path)
}

/// CSV cell content for a float: 6 significant digits.
pub fn csv_float(x: f64) -> String {
    fmt_sig(x, CSV_SIG_DIGITS)
}

/// Writes a CSV artifact with a provenance comment line, a fixed header,
/// and pre-rendered rows.
pub fn write_csv<C: Serialize>(
    out_dir: &Path,
    name: &str,
    config: &C,
    seed: u64,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<PathBuf> {
    fs::create_dir_all(out_dir)?;
    let mut body = String::new();
    body.push_str(&format!(
        "# config_hash={} seed={}\n",
        config_hash(config)?,
        seed
    ));
    body.push_str(&header.join(","));
    body.push('\n');
    for row in rows {
        body.push_str(&row.join(","));
        body.push('\n');
    }
    let path = out_dir.join(name);
    fs::write(&path, body)?;
    Ok(path)
}

/// Reads a value that may be wrapped in the artifact envelope
/// (`{schema, config_hash, seed, config, result}`) or stored bare.
pub fn read_enveloped<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let payload = match value.get("result") {
        Some(result) if value.get("schema").is_some() => result.clone(),
        _ => value,
    };
    Ok(serde_json::from_value(payload)?)
}

/// Machine-readable error body printed to stdout on failure.
pub fn error_json(err: &crate::Error) -> String {
    serde_json::json!({
        "error": {
            "message": err.to_string(),
            "exit_code": err.exit_code(),
        }
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&serde_json::json!({"x": 1})).unwrap();
        let b = config_hash(&serde_json::json!({"x": 1})).unwrap();
        let c = config_hash(&serde_json::json!({"x": 2})).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn csv_floats_use_six_significant_digits() {
        assert_eq!(csv_float(0.5849625007211562), "0.584963");
        assert_eq!(csv_float(10.25), "10.25");
    }
}
