//! JSON model file format.
//!
//! ```json
//! {
//!   "name": "chain",
//!   "epsilon": 0.05,
//!   "components": [
//!     { "id": 1, "cardinality": 2, "parents": [], "scale": "slow",
//!       "rate_table": { "": [[-1, 1], [2, -2]] } },
//!     { "id": 2, "cardinality": 2, "parents": [1], "scale": "fast",
//!       "rate_table": { "0": [[-2, 2], [3, -3]], "1": [[-3, 3], [2, -2]] } }
//!   ],
//!   "initial": { "factored": [[1, 0], [1, 0]] }
//! }
//! ```
//!
//! Rate table keys are the parent assignment joined by commas, with parents
//! in ascending id order (the empty string for a root). `initial` is either
//! `{"joint": [...]}` over the mixed-radix joint order or `{"factored": [[...], ...]}`.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    ComponentId, ComponentSpec, CtbnModel, InitialDistribution, RateMatrix, Scale, StateSpace,
    Violation,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub epsilon: f64,
    pub components: Vec<ComponentFile>,
    pub initial: InitialDistribution,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentFile {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub cardinality: usize,
    #[serde(default)]
    pub parents: Vec<usize>,
    pub scale: Scale,
    pub rate_table: IndexMap<String, Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

pub fn parse_model(text: &str) -> Result<CtbnModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    file.into_model()
}

pub fn read_model(path: impl AsRef<Path>) -> Result<CtbnModel> {
    parse_model(&std::fs::read_to_string(path)?)
}

pub fn model_to_json(model: &CtbnModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ModelFile::from_model(
        model,
    )?)?)
}

pub fn write_model(model: &CtbnModel, path: impl AsRef<Path>) -> Result<()> {
    let mut text = model_to_json(model)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn key_of(assignment: &[usize]) -> String {
    assignment
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl ModelFile {
    pub fn from_model(model: &CtbnModel) -> Result<Self> {
        let mut components = Vec::with_capacity(model.len());
        for c in &model.components {
            let space = model.parent_space(c.id)?;
            let mut rate_table = IndexMap::new();
            for (k, q) in c.rate_table.iter().enumerate() {
                let key = if k < space.size() {
                    key_of(&space.decode(k)?)
                } else {
                    format!("#{k}")
                };
                rate_table.insert(key, q.rows());
            }
            components.push(ComponentFile {
                id: c.id.0,
                name: c.name.clone(),
                cardinality: c.cardinality,
                parents: c.parents.iter().map(|p| p.0).collect(),
                scale: c.scale,
                rate_table,
                epsilon: c.epsilon,
            });
        }
        Ok(ModelFile {
            name: model.name.clone(),
            epsilon: model.epsilon,
            components,
            initial: model.initial.clone(),
        })
    }

    /// Converts to a model. Table-key problems (missing, duplicate or
    /// malformed assignments) are returned as `Error::InvalidModel`; all other
    /// invariants are left to [`CtbnModel::validate`].
    pub fn into_model(self) -> Result<CtbnModel> {
        let mut violations = Vec::new();
        let cards: Vec<usize> = self.components.iter().map(|c| c.cardinality).collect();
        let m = cards.len();
        let mut components = Vec::with_capacity(m);

        for (pos, cf) in self.components.into_iter().enumerate() {
            let loc = format!("component {}", pos + 1);
            let mut parents = cf.parents.clone();
            parents.sort_unstable();
            let parents_known = parents.iter().all(|&p| p >= 1 && p <= m);

            let mut table: Vec<RateMatrix> = Vec::new();
            let mut bad_matrix = false;
            let mut parse_matrix =
                |rows: &Vec<Vec<f64>>, where_: String, v: &mut Vec<Violation>| {
                    match RateMatrix::from_rows(rows) {
                        Ok(q) => Some(q),
                        Err(e) => {
                            v.push(Violation {
                                location: where_,
                                message: format!("rate matrix is not square: {e}"),
                            });
                            bad_matrix = true;
                            None
                        }
                    }
                };

            if parents_known {
                let space = StateSpace::new(parents.iter().map(|&p| cards[p - 1]).collect())?;
                let mut slots: Vec<Option<RateMatrix>> = vec![None; space.size()];
                for (key, rows) in &cf.rate_table {
                    let where_ = format!("{loc} rate_table[\"{key}\"]");
                    let parsed: std::result::Result<Vec<usize>, _> = if key.trim().is_empty() {
                        Ok(Vec::new())
                    } else {
                        key.split(',').map(|t| t.trim().parse::<usize>()).collect()
                    };
                    let code = match parsed {
                        Ok(a) => space.encode(&a).ok(),
                        Err(_) => None,
                    };
                    let Some(code) = code else {
                        violations.push(Violation {
                            location: where_,
                            message: format!(
                                "key is not a valid assignment of parents {parents:?}"
                            ),
                        });
                        continue;
                    };
                    if slots[code].is_some() {
                        violations.push(Violation {
                            location: where_,
                            message: "duplicate parent assignment".into(),
                        });
                        continue;
                    }
                    slots[code] = parse_matrix(rows, where_, &mut violations);
                }
                for (k, slot) in slots.into_iter().enumerate() {
                    match slot {
                        Some(q) => table.push(q),
                        None => {
                            if !bad_matrix {
                                violations.push(Violation {
                                    location: loc.clone(),
                                    message: format!(
                                        "rate_table has no entry for parent assignment \"{}\"",
                                        key_of(&space.decode(k)?)
                                    ),
                                });
                            }
                        }
                    }
                }
            } else {
                // Parents are dangling; keep the matrices so validate can report them.
                for (key, rows) in &cf.rate_table {
                    if let Some(q) = parse_matrix(
                        rows,
                        format!("{loc} rate_table[\"{key}\"]"),
                        &mut violations,
                    ) {
                        table.push(q);
                    }
                }
            }

            components.push(ComponentSpec {
                id: ComponentId(cf.id),
                name: cf.name,
                cardinality: cf.cardinality,
                parents: parents.into_iter().map(ComponentId).collect(),
                scale: cf.scale,
                rate_table: table,
                epsilon: cf.epsilon,
            });
        }

        if !violations.is_empty() {
            return Err(Error::InvalidModel(violations));
        }
        Ok(CtbnModel {
            name: self.name,
            components,
            initial: self.initial,
            epsilon: self.epsilon,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"{
        "epsilon": 0.5,
        "components": [
            {"id": 1, "cardinality": 2, "parents": [], "scale": "fast",
             "rate_table": {"": [[-1, 1], [2, -2]]}},
            {"id": 2, "cardinality": 3, "parents": [1], "scale": "slow",
             "rate_table": {"1": [[-1, 1, 0], [0, -1, 1], [1, 0, -1]],
                            "0": [[-2, 1, 1], [1, -2, 1], [1, 1, -2]]}}
        ],
        "initial": {"joint": [0.5, 0, 0, 0, 0, 0.5]}
    }"#;

    #[test]
    fn parses_keys_in_any_order() {
        let m = parse_model(TWO).unwrap();
        assert!(m.validate().is_empty());
        assert_eq!(m.components[1].rate_table[0].get(0, 0), -2.0);
        assert_eq!(m.components[1].rate_table[1].get(0, 0), -1.0);
    }

    #[test]
    fn round_trip_preserves_model() {
        let m = parse_model(TWO).unwrap();
        let again = parse_model(&model_to_json(&m).unwrap()).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn missing_and_malformed_keys_are_violations() {
        let text = TWO.replace("\"1\": [[-1, 1, 0]", "\"7\": [[-1, 1, 0]");
        match parse_model(&text) {
            Err(Error::InvalidModel(v)) => {
                assert_eq!(v.len(), 2, "{v:?}");
                assert!(v
                    .iter()
                    .any(|x| x.message.contains("not a valid assignment")));
                assert!(v.iter().any(|x| x.message.contains("no entry")));
            }
            other => panic!("expected violations, got {other:?}"),
        }
    }

    #[test]
    fn syntax_error_is_json_error() {
        assert!(matches!(parse_model("{ not json"), Err(Error::Json(_))));
    }
}
