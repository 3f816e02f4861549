//! Scenario configuration: a flat JSON object plus `key=value` overrides.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::constellation::MIN_PSK_ORDER;
use crate::error::{Result, SlpError};
use crate::precoders::Scheme;

pub const DEFAULT_N_CHANNELS: usize = 200;
pub const DEFAULT_N_SLOTS: usize = 50;

/// Keys accepted in config files and `--set` overrides.
pub const KEYS: [&str; 9] = ["K", "N", "M", "sinr_grid_db", "sigma", "n_channels", "n_slots", "seed", "schemes"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "N")]
    pub antennas: usize,
    #[serde(rename = "M")]
    pub modulation_order: usize,
    pub sinr_grid_db: Vec<f64>,
    /// Per-user noise standard deviation; empty means all ones.
    pub sigma: Vec<f64>,
    pub n_channels: usize,
    pub n_slots: usize,
    pub seed: u64,
    pub schemes: Vec<Scheme>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            users: 2,
            antennas: 2,
            modulation_order: 4,
            sinr_grid_db: (0..=6).map(|i| 2.0 * i as f64).collect(),
            sigma: Vec::new(),
            n_channels: DEFAULT_N_CHANNELS,
            n_slots: DEFAULT_N_SLOTS,
            seed: 1,
            schemes: Scheme::ALL.to_vec(),
        }
    }
}

fn cfg_err(key: &str, msg: impl Into<String>) -> SlpError {
    SlpError::Config { key: key.to_string(), msg: msg.into() }
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Number(n) => n.as_u64().map(|x| x as usize),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .ok_or_else(|| cfg_err(key, format!("expected a non-negative integer, got {v}")))
}

fn as_f64_list(key: &str, v: &Value) -> Result<Vec<f64>> {
    let bad = || cfg_err(key, format!("expected a list of numbers, got {v}"));
    match v {
        Value::Array(items) => items.iter().map(|x| x.as_f64().ok_or_else(bad)).collect(),
        Value::Number(n) => Ok(vec![n.as_f64().ok_or_else(bad)?]),
        Value::String(s) => parse_grid(s).ok_or_else(bad),
        _ => Err(bad()),
    }
}

/// `start:step:stop` (inclusive) or a comma-separated list.
pub fn parse_grid(s: &str) -> Option<Vec<f64>> {
    let s = s.trim().trim_start_matches('[').trim_end_matches(']');
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    if parts.len() == 3 {
        let (a, step, b): (f64, f64, f64) = (parts[0].parse().ok()?, parts[1].parse().ok()?, parts[2].parse().ok()?);
        if !(step > 0.0) || b < a {
            return None;
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        return Some((0..=n).map(|i| a + step * i as f64).collect());
    }
    s.split(',').filter(|t| !t.trim().is_empty()).map(|t| t.trim().parse().ok()).collect()
}

impl ScenarioConfig {
    /// Parses a JSON object; unknown keys are rejected by name.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| cfg_err("<file>", format!("invalid JSON: {e}")))?;
        let Value::Object(map) = value else {
            return Err(cfg_err("<file>", "config must be a JSON object"));
        };
        let mut cfg = Self::default();
        for (k, v) in &map {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &Value) -> Result<()> {
        match key {
            "K" => self.users = as_usize(key, v)?,
            "N" => self.antennas = as_usize(key, v)?,
            "M" => self.modulation_order = as_usize(key, v)?,
            "sinr_grid_db" | "grid" => self.sinr_grid_db = as_f64_list(key, v)?,
            "sigma" => self.sigma = as_f64_list(key, v)?,
            "n_channels" => self.n_channels = as_usize(key, v)?,
            "n_slots" => self.n_slots = as_usize(key, v)?,
            "seed" => self.seed = as_usize(key, v)? as u64,
            "schemes" => {
                let names: Vec<String> = match v {
                    Value::Array(a) => a.iter().map(|x| x.as_str().unwrap_or_default().to_string()).collect(),
                    Value::String(s) => s.split(',').map(|t| t.trim().to_string()).collect(),
                    _ => return Err(cfg_err(key, format!("expected scheme names, got {v}"))),
                };
                self.schemes = names
                    .iter()
                    .map(|n| n.parse::<Scheme>().map_err(|e| cfg_err(key, e.to_string())))
                    .collect::<Result<_>>()?;
            }
            other => {
                return Err(cfg_err(other, format!("unknown key; expected one of {}", KEYS.join(", "))));
            }
        }
        Ok(())
    }

    /// Applies a `key=value` override. The value is read as JSON when possible,
    /// as a bare string otherwise.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, raw) = kv
            .split_once('=')
            .ok_or_else(|| cfg_err(kv, "override must look like key=value"))?;
        let k = k.trim();
        let v = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
        self.set(k, &v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 {
            return Err(cfg_err("K", "need at least one user"));
        }
        if self.antennas < self.users {
            return Err(cfg_err("N", format!("need N >= K, got N={} K={}", self.antennas, self.users)));
        }
        if self.modulation_order < MIN_PSK_ORDER {
            return Err(cfg_err("M", format!("PSK order must be >= {MIN_PSK_ORDER}")));
        }
        if self.sinr_grid_db.is_empty() || self.sinr_grid_db.iter().any(|x| !x.is_finite()) {
            return Err(cfg_err("sinr_grid_db", "grid must be a non-empty list of finite values"));
        }
        if !self.sigma.is_empty() && self.sigma.len() != self.users {
            return Err(cfg_err("sigma", format!("expected {} entries, got {}", self.users, self.sigma.len())));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(cfg_err("sigma", "noise levels must be positive"));
        }
        if self.n_channels == 0 {
            return Err(cfg_err("n_channels", "must be at least 1"));
        }
        if self.n_slots == 0 {
            return Err(cfg_err("n_slots", "must be at least 1"));
        }
        if self.schemes.is_empty() {
            return Err(cfg_err("schemes", "at least one scheme required"));
        }
        Ok(())
    }

    pub fn sigmas(&self) -> Vec<f64> {
        if self.sigma.is_empty() {
            vec![1.0; self.users]
        } else {
            self.sigma.clone()
        }
    }

    pub fn has(&self, s: Scheme) -> bool {
        self.schemes.contains(&s)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(canon.as_bytes()))
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = ScenarioConfig::default();
        c.validate().unwrap();
        assert_eq!(c.sinr_grid_db, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0]);
        assert_eq!(c.n_channels * c.n_slots, 10_000);
    }

    #[test]
    fn parse_file_and_overrides() {
        let mut c = ScenarioConfig::from_json_str(
            r#"{"K": 4, "N": 4, "M": 8, "sinr_grid_db": [0, 6], "seed": 9, "schemes": ["ZFBF", "CF_SLP"]}"#,
        )
        .unwrap();
        assert_eq!((c.users, c.antennas, c.modulation_order, c.seed), (4, 4, 8, 9));
        assert_eq!(c.schemes, vec![Scheme::Zfbf, Scheme::CfSlp]);
        c.apply_override("K=8").unwrap();
        c.apply_override("N=8").unwrap();
        c.apply_override("grid=0:3:12").unwrap();
        assert_eq!(c.sinr_grid_db, vec![0.0, 3.0, 6.0, 9.0, 12.0]);
        c.apply_override("sinr_grid_db=[1,2.5]").unwrap();
        assert_eq!(c.sinr_grid_db, vec![1.0, 2.5]);
        c.validate().unwrap();
    }

    #[test]
    fn errors_name_the_key() {
        let e = ScenarioConfig::from_json_str(r#"{"K": 2, "bogus": 1}"#).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = ScenarioConfig::from_json_str(r#"{"n_slots": "many"}"#).unwrap_err();
        assert!(e.to_string().contains("n_slots"), "{e}");
        let mut c = ScenarioConfig::default();
        c.apply_override("N=1").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("`N`"));
        assert!(c.apply_override("nope").unwrap_err().to_string().contains("nope"));
        c.apply_override("M=2").unwrap();
        c.apply_override("N=2").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("`M`"));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ScenarioConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn db_conversion() {
        assert!((db_to_linear(3.0) - 1.9952623149688795).abs() < 1e-15);
        assert_eq!(db_to_linear(0.0), 1.0);
    }
}
