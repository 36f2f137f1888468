//! JSON helpers shared by the file schemas.

use serde::de::DeserializeOwned;

use crate::error::{Error, Result};

/// Deserializes `s`, reporting the offending field path on schema errors.
pub fn from_str_with_path<T: DeserializeOwned>(s: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(s);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Validation(format!("{path}: {}", e.into_inner()))
    })
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<std::path::Path>) -> Result<T> {
    let path = path.as_ref();
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str_with_path(&s)
}

pub fn write_json<T: serde::Serialize>(path: impl AsRef<std::path::Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
