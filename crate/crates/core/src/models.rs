//! Built-in model registry.
//!
//! The model files under `models/` are compiled into the library so the
//! analyses they anchor never depend on a working directory. [`builtin`]
//! parses one by name; the source text itself is available through
//! [`builtin_source`] for tools that want to display or re-serialize it.

use thiserror::Error;

use crate::dsl::{parse_model, ModelDef};

/// Names accepted by [`builtin`], in presentation order.
pub const BUILTIN_NAMES: [&str; 4] = ["second_chern", "euler", "bf_ym", "martellini"];

#[derive(Debug, Error)]
pub enum BuiltinError {
    #[error("unknown builtin model `{name}`; available: {available}")]
    Unknown { name: String, available: String },
}

/// Returns the source text of a built-in model file.
pub fn builtin_source(name: &str) -> Result<&'static str, BuiltinError> {
    match name {
        "second_chern" => Ok(include_str!("../models/second_chern.model")),
        "euler" => Ok(include_str!("../models/euler.model")),
        "bf_ym" => Ok(include_str!("../models/bf_ym.model")),
        "martellini" => Ok(include_str!("../models/martellini.model")),
        other => Err(BuiltinError::Unknown {
            name: other.to_string(),
            available: BUILTIN_NAMES.join(", "),
        }),
    }
}

/// Parses a built-in model by name.
///
/// The files ship with the crate and are covered by tests, so a parse
/// failure here is a packaging bug, not a user error; it panics.
pub fn builtin(name: &str) -> Result<ModelDef, BuiltinError> {
    let src = builtin_source(name)?;
    match parse_model(src) {
        Ok(model) => Ok(model),
        Err(diags) => {
            let msgs: Vec<String> = diags.iter().map(|d| d.to_string()).collect();
            panic!("builtin model `{}` failed to parse: {}", name, msgs.join("; "));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::serialize_model;

    #[test]
    fn all_builtins_parse() {
        for name in BUILTIN_NAMES {
            let model = builtin(name).unwrap();
            assert_eq!(model.name, name);
        }
    }

    #[test]
    fn unknown_name_is_an_error() {
        let err = builtin("chern_simons").unwrap_err();
        assert!(err.to_string().contains("chern_simons"));
        assert!(err.to_string().contains("second_chern"));
    }

    #[test]
    fn builtins_round_trip_through_the_serializer() {
        for name in BUILTIN_NAMES {
            let model = builtin(name).unwrap();
            let text = serialize_model(&model);
            let again = parse_model(&text).unwrap_or_else(|d| {
                panic!("re-parse of serialized `{}` failed: {:?}", name, d)
            });
            assert_eq!(model, again, "round trip changed `{}`", name);
        }
    }

    #[test]
    fn field_and_constraint_inventories() {
        let sc = builtin("second_chern").unwrap();
        assert_eq!(sc.kinetic.len(), 2);
        assert_eq!(sc.constraints.len(), 4);
        let names: Vec<&str> = sc.constraints.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["phi", "psi", "Phi", "Psi"]);

        let euler = builtin("euler").unwrap();
        assert_eq!(euler.overrides.len(), 2);
        assert_eq!(euler.constraints.len(), 4);

        let bf = builtin("bf_ym").unwrap();
        assert_eq!(bf.kinetic.len(), 4);
        assert_eq!(bf.constraints.len(), 6);

        let mart = builtin("martellini").unwrap();
        assert_eq!(mart.kinetic.len(), 4);
        assert_eq!(mart.constraints.len(), 6);
    }
}
