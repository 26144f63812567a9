use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};

use crate::error::{Error, Result};

/// Significant digits kept for floats in written JSON.
const FLOAT_DIGITS: usize = 10;

/// An artifact body tagged with the config hash that produced it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub kind: String,
    pub config_hash: String,
    pub potvit_version: String,
    pub data: T,
}

/// Marker file written inside artifact directories.
pub const PROVENANCE: &str = "provenance.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: String,
    pub config_hash: String,
}

fn fix_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(x) = n.as_f64() {
                let rounded: f64 = format!("{x:.prec$e}", prec = FLOAT_DIGITS - 1).parse().unwrap_or(x);
                if let Some(m) = Number::from_f64(rounded) {
                    *n = m;
                }
            }
        }
        Value::Array(a) => a.iter_mut().for_each(fix_floats),
        Value::Object(o) => o.values_mut().for_each(fix_floats),
        _ => {}
    }
}

/// Pretty JSON with every float cut to a fixed number of significant digits.
pub fn to_fixed_json<T: Serialize>(t: &T) -> Result<String> {
    let mut v = serde_json::to_value(t)?;
    fix_floats(&mut v);
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

/// Single-line form of [`to_fixed_json`].
pub fn to_fixed_line<T: Serialize>(t: &T) -> Result<String> {
    let mut v = serde_json::to_value(t)?;
    fix_floats(&mut v);
    Ok(serde_json::to_string(&v)?)
}

pub fn write<T: Serialize>(path: &Path, kind: &str, hash: &str, data: &T) -> Result<()> {
    let env = Envelope { kind: kind.into(), config_hash: hash.into(), potvit_version: env!("CARGO_PKG_VERSION").into(), data };
    fs::write(path, to_fixed_json(&env)?)?;
    Ok(())
}

fn missing(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("cannot read {}: {e}", path.display()))
}

/// Reads an artifact, refusing one produced under a different config.
pub fn read<T: DeserializeOwned>(path: &Path, kind: &str, hash: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| missing(path, e))?;
    let env: Envelope<T> = serde_json::from_str(&text)?;
    check(path, &env.kind, &env.config_hash, kind, hash)?;
    Ok(env.data)
}

fn check(path: &Path, got_kind: &str, got_hash: &str, kind: &str, hash: &str) -> Result<()> {
    if got_kind != kind {
        return Err(Error::Config(format!("{} holds a `{got_kind}` artifact, expected `{kind}`", path.display())));
    }
    if got_hash != hash {
        return Err(Error::Config(format!(
            "{} was produced by config {got_hash}, current config is {hash}",
            path.display()
        )));
    }
    Ok(())
}

pub fn mark_dir(dir: &Path, kind: &str, hash: &str) -> Result<()> {
    let p = Provenance { kind: kind.into(), config_hash: hash.into() };
    fs::write(dir.join(PROVENANCE), to_fixed_json(&p)?)?;
    Ok(())
}

pub fn check_dir(dir: &Path, kind: &str, hash: &str) -> Result<()> {
    let path = dir.join(PROVENANCE);
    let text = fs::read_to_string(&path).map_err(|e| missing(&path, e))?;
    let p: Provenance = serde_json::from_str(&text)?;
    check(&path, &p.kind, &p.config_hash, kind, hash)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_are_cut_to_fixed_digits() {
        let s = to_fixed_json(&serde_json::json!({"a": 0.1 + 0.2, "b": [1.0 / 3.0], "n": 7})).unwrap();
        assert!(s.contains("0.3\n") || s.contains("0.3,"), "{s}");
        assert!(s.contains("0.3333333333"), "{s}");
        assert!(!s.contains("0.33333333333"), "{s}");
        assert!(s.contains("\"n\": 7"));
    }

    #[test]
    fn mismatched_hash_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write(&p, "thing", "abc", &5u32).unwrap();
        assert_eq!(read::<u32>(&p, "thing", "abc").unwrap(), 5);
        assert!(matches!(read::<u32>(&p, "thing", "abd"), Err(Error::Config(m)) if m.contains("produced by config abc")));
        assert!(read::<u32>(&p, "other", "abc").is_err());
        mark_dir(dir.path(), "ckpt", "h").unwrap();
        assert!(check_dir(dir.path(), "ckpt", "h").is_ok());
        assert!(check_dir(dir.path(), "ckpt", "g").is_err());
    }
}
