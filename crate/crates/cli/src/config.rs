//! Config resolution: built-in defaults, then `VDR_SEED`, then a JSON
//! config file, then command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use vdr_core::{Error, Result};

pub const SEED_ENV: &str = "VDR_SEED";

/// A flag value addressed by a dotted key. `None` means the flag was not given.
pub struct Override {
    key: &'static str,
    value: Option<Value>,
}

impl Override {
    pub fn new<T: Serialize>(key: &'static str, value: Option<T>) -> Self {
        Override {
            key,
            value: value.map(|v| serde_json::to_value(v).expect("flag value serializes")),
        }
    }

    pub fn value(key: &'static str, value: Option<Value>) -> Self {
        Override { key, value }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set(root: &mut Value, dotted: &str, value: Value) {
    let mut node = root;
    let mut parts = dotted.split('.').peekable();
    while let Some(part) = parts.next() {
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        let obj = node.as_object_mut().expect("just made an object");
        if parts.peek().is_none() {
            obj.insert(part.to_string(), value);
            return;
        }
        node = obj.entry(part).or_insert_with(|| Value::Object(Map::new()));
    }
}

pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn resolve<T>(file: Option<&Path>, seeded: bool, overrides: &[Override]) -> Result<T>
where
    T: Serialize + DeserializeOwned + Default,
{
    let mut value = serde_json::to_value(T::default())?;
    if seeded {
        if let Some(seed) = env_seed()? {
            set(&mut value, "seed", Value::from(seed));
        }
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
        }
        merge(&mut value, patch);
    }
    for o in overrides {
        if let Some(v) = &o.value {
            set(&mut value, o.key, v.clone());
        }
    }
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Inner {
        a: Option<String>,
        b: u32,
    }

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Conf {
        seed: u64,
        rate: f64,
        inner: Inner,
    }

    impl Default for Conf {
        fn default() -> Self {
            Conf {
                seed: 3,
                rate: 0.5,
                inner: Inner::default(),
            }
        }
    }

    fn file(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let f = file(r#"{"rate": 0.25, "inner": {"b": 7}}"#);
        let c: Conf = resolve(
            Some(f.path()),
            false,
            &[
                Override::new("inner.a", Some("x")),
                Override::new("rate", None::<f64>),
                Override::new("inner.b", Some(9u32)),
            ],
        )
        .unwrap();
        assert_eq!(
            c,
            Conf {
                seed: 3,
                rate: 0.25,
                inner: Inner { a: Some("x".into()), b: 9 }
            }
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = file(r#"{"inner": {"zzz": 1}}"#);
        let err = resolve::<Conf>(Some(f.path()), false, &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)) && err.is_validation(), "{err}");
        let f = file("[1, 2]");
        assert!(matches!(resolve::<Conf>(Some(f.path()), false, &[]), Err(Error::Config(_))));
    }
}
