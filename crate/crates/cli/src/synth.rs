use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use tlsqkt_core::data::SyntheticConfig;
use tlsqkt_core::train::{parse_pairs, ConfigError};

/// `key = value` handling for [`SyntheticConfig`]. `growth` is a
/// comma-separated list, one entry per literacy dimension.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SynthSettings(pub SyntheticConfig);

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.trim().parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

impl SynthSettings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let c = &mut self.0;
        match key {
            "n_students" => c.n_students = parse(key, value)?,
            "n_questions" => c.n_questions = parse(key, value)?,
            "n_kcs" => c.n_kcs = parse(key, value)?,
            "n_literacy" => c.n_literacy = parse(key, value)?,
            "seq_len" => c.seq_len = parse(key, value)?,
            "seed" => c.seed = parse(key, value)?,
            "ability_sd" => c.ability_sd = parse(key, value)?,
            "dimension_sd" => c.dimension_sd = parse(key, value)?,
            "difficulty_sd" => c.difficulty_sd = parse(key, value)?,
            "growth" => {
                c.growth = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_, _>>()?
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (k, v) in parse_pairs(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let c = &self.0;
        if [c.n_students, c.n_questions, c.n_kcs, c.n_literacy, c.seq_len].contains(&0) {
            return Err(ConfigError::Invalid("synthetic sizes must be at least 1".into()));
        }
        if [c.ability_sd, c.dimension_sd, c.difficulty_sd]
            .iter()
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return Err(ConfigError::Invalid("standard deviations must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let c = &self.0;
        let growth: Vec<String> = c.growth.iter().map(f64::to_string).collect();
        [
            ("n_students", c.n_students.to_string()),
            ("n_questions", c.n_questions.to_string()),
            ("n_kcs", c.n_kcs.to_string()),
            ("n_literacy", c.n_literacy.to_string()),
            ("seq_len", c.seq_len.to_string()),
            ("seed", c.seed.to_string()),
            ("ability_sd", c.ability_sd.to_string()),
            ("dimension_sd", c.dimension_sd.to_string()),
            ("difficulty_sd", c.difficulty_sd.to_string()),
            ("growth", growth.join(",")),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}
