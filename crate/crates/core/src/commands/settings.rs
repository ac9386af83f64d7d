use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// `key = value` settings from a config file, overridden by flags.
///
/// Every lookup records the value actually used (the default when the key
/// was not given), so the resolved configuration of a run can be written
/// out verbatim.
#[derive(Debug, Clone, Default)]
pub struct Settings {
    provided: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected `key = value`", i + 1))?;
        let k = k.trim();
        if k.is_empty() {
            bail!("config line {}: empty key", i + 1);
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl Settings {
    pub fn new(file: BTreeMap<String, String>, overrides: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut provided = file;
        provided.extend(overrides);
        Settings {
            provided,
            resolved: BTreeMap::new(),
        }
    }

    pub fn get<T>(&mut self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match self.provided.get(key) {
            Some(raw) => raw
                .parse::<T>()
                .map_err(|e| anyhow!("setting `{key}`: cannot parse `{raw}`: {e}"))?,
            None => default,
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn get_opt(&mut self, key: &str) -> Option<String> {
        let v = self.provided.get(key).cloned();
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.clone());
        }
        v
    }

    /// Comma-separated list.
    pub fn get_list<T>(&mut self, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: FromStr + Display + Clone,
        T::Err: Display,
    {
        let values = match self.provided.get(key) {
            Some(raw) => parse_list(raw).with_context(|| format!("setting `{key}`"))?,
            None => default.to_vec(),
        };
        let text: Vec<String> = values.iter().map(ToString::to_string).collect();
        self.resolved.insert(key.to_string(), text.join(","));
        Ok(values)
    }

    pub fn provided(&self) -> &BTreeMap<String, String> {
        &self.provided
    }

    /// Takes over the values `other` resolved, except for the `skip` keys.
    pub fn adopt<'a>(&mut self, other: &Settings, skip: impl IntoIterator<Item = &'a str>) {
        let skip: Vec<&str> = skip.into_iter().collect();
        for (k, v) in &other.resolved {
            if !skip.contains(&k.as_str()) {
                self.resolved.insert(k.clone(), v.clone());
            }
        }
    }

    /// Keys that were provided but never looked up.
    pub fn unused(&self) -> Vec<String> {
        self.provided
            .keys()
            .filter(|k| !self.resolved.contains_key(*k))
            .cloned()
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub fn parse_list<T>(raw: &str) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| anyhow!("cannot parse `{s}`: {e}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file = parse_config("# run\nepochs = 5\nlearning_rate=0.1  # fast\n").unwrap();
        let mut s = Settings::new(file, [("epochs".to_string(), "7".to_string())]);
        assert_eq!(s.get("epochs", 1usize).unwrap(), 7);
        assert_eq!(s.get("learning_rate", 0.01f64).unwrap(), 0.1);
        assert_eq!(s.get("hidden", 50usize).unwrap(), 50);
        assert_eq!(s.to_text(), "epochs = 7\nhidden = 50\nlearning_rate = 0.1\n");
        assert!(s.unused().is_empty());
    }

    #[test]
    fn lists_and_errors() {
        let mut s = Settings::new(parse_config("grid = 0.1, 1 ,10\nbad = x\ntypo = 1").unwrap(), []);
        assert_eq!(s.get_list("grid", &[1.0f64]).unwrap(), vec![0.1, 1.0, 10.0]);
        assert!(s.get("bad", 1usize).is_err());
        assert_eq!(s.unused(), vec!["bad".to_string(), "typo".to_string()]);
        assert!(parse_config("no equals sign").is_err());
    }
}
