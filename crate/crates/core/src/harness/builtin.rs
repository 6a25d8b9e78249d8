//! Worked-example models shipped with the crate as JSON data files.

use crate::error::{Error, Result};
use crate::format;
use crate::model::CtbnModel;

const SOURCES: &[(&str, &str)] = &[
    ("ex31", include_str!("../../models/ex31.json")),
    ("ex41", include_str!("../../models/ex41.json")),
    ("ex42", include_str!("../../models/ex42.json")),
    ("ex43", include_str!("../../models/ex43.json")),
    ("ex44", include_str!("../../models/ex44.json")),
    ("ex51", include_str!("../../models/ex51.json")),
    ("ex52", include_str!("../../models/ex52.json")),
];

pub fn ids() -> impl Iterator<Item = &'static str> {
    SOURCES.iter().map(|(id, _)| *id)
}

/// JSON text of a built-in model.
pub fn source(id: &str) -> Option<&'static str> {
    SOURCES.iter().find(|(k, _)| *k == id).map(|(_, s)| *s)
}

pub fn builtin(id: &str) -> Result<CtbnModel> {
    let text = source(id).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "unknown built-in model '{id}' (known: {})",
            ids().collect::<Vec<_>>().join(", ")
        ))
    })?;
    format::parse_model(text)
}

/// A built-in id, or else a path to a model file.
pub fn load(name_or_path: &str) -> Result<CtbnModel> {
    match source(name_or_path) {
        Some(_) => builtin(name_or_path),
        None => format::read_model(name_or_path),
    }
}
