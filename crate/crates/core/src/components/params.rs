use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use super::ComponentSpec;
use crate::kernel::BuildError;

/// Typed access to a component spec's parameters.
pub struct Params<'a> {
    component: &'a str,
    map: &'a Map<String, Value>,
}

impl<'a> Params<'a> {
    pub fn of(spec: &'a ComponentSpec) -> Self {
        Params {
            component: &spec.name,
            map: &spec.params,
        }
    }

    fn invalid(&self, param: &str, detail: impl Into<String>) -> BuildError {
        BuildError::InvalidParameter {
            component: self.component.to_string(),
            param: param.to_string(),
            detail: detail.into(),
        }
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.map.get(key).filter(|v| !v.is_null())
    }

    pub fn string(&self, key: &str) -> Result<Option<String>, BuildError> {
        match self.get(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.invalid(key, "expected a string")),
        }
    }

    pub fn string_or(&self, key: &str, default: &str) -> Result<String, BuildError> {
        Ok(self.string(key)?.unwrap_or_else(|| default.to_string()))
    }

    pub fn required_string(&self, key: &str) -> Result<String, BuildError> {
        match self.string(key)? {
            Some(s) if !s.trim().is_empty() => Ok(s),
            _ => Err(self.invalid(key, "required and must be non-empty")),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, BuildError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .ok_or_else(|| self.invalid(key, "expected a nonnegative integer")),
        }
    }

    pub fn positive_u64_or(&self, key: &str, default: u64) -> Result<u64, BuildError> {
        match self.u64_or(key, default)? {
            0 => Err(self.invalid(key, "must be positive")),
            n => Ok(n),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, BuildError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| self.invalid(key, "expected a number")),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool, BuildError> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Bool(b)) => Ok(*b),
            Some(_) => Err(self.invalid(key, "expected a boolean")),
        }
    }

    pub fn number_map(&self, key: &str) -> Result<BTreeMap<String, f64>, BuildError> {
        match self.get(key) {
            None => Ok(BTreeMap::new()),
            Some(Value::Object(map)) => map
                .iter()
                .map(|(k, v)| {
                    v.as_f64()
                        .filter(|x| x.is_finite())
                        .map(|x| (k.clone(), x))
                        .ok_or_else(|| self.invalid(key, format!("`{k}` must map to a number")))
                })
                .collect(),
            Some(_) => Err(self.invalid(key, "expected an object of numbers")),
        }
    }

    /// Deserializes a structured parameter.
    pub fn parse<T: DeserializeOwned + Default>(&self, key: &str) -> Result<T, BuildError> {
        match self.get(key) {
            None => Ok(T::default()),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| self.invalid(key, e.to_string())),
        }
    }

    pub fn parse_opt<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, BuildError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| self.invalid(key, e.to_string())),
        }
    }
}
