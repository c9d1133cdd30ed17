use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A BCP-47 style language code such as `de`, `en`, `zh` or `pt-BR`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LangCode(String);

fn code_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[a-z]{2,3}(-[A-Za-z0-9]{2,8})*$").unwrap())
}

impl LangCode {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code_re().is_match(&code) {
            Ok(LangCode(code))
        } else {
            Err(Error::invalid(format!("invalid language code {code:?}")))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Primary subtag, e.g. `zh` for `zh-Hans`.
    pub fn primary(&self) -> &str {
        self.0.split('-').next().unwrap_or(&self.0)
    }

    /// Scripts written without spaces between words.
    pub fn is_space_delimited(&self) -> bool {
        !matches!(self.primary(), "zh" | "ja" | "th" | "lo" | "km" | "my")
    }
}

impl fmt::Display for LangCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for LangCode {
    type Error = Error;
    fn try_from(value: String) -> Result<Self> {
        LangCode::new(value)
    }
}

impl From<LangCode> for String {
    fn from(value: LangCode) -> Self {
        value.0
    }
}

const BUILTIN_NAMES: &[(&str, &str)] = &[
    ("cs", "Czech"),
    ("de", "German"),
    ("en", "English"),
    ("zh", "Chinese"),
];

/// Code to English-name table used when building prompts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageNames {
    names: BTreeMap<String, String>,
}

impl Default for LanguageNames {
    fn default() -> Self {
        LanguageNames {
            names: BUILTIN_NAMES
                .iter()
                .map(|(c, n)| (c.to_string(), n.to_string()))
                .collect(),
        }
    }
}

impl LanguageNames {
    pub fn with_extra<I, K, V>(extra: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut names = LanguageNames::default();
        for (k, v) in extra {
            names.names.insert(k.into(), v.into());
        }
        names
    }

    pub fn name(&self, code: &LangCode) -> Result<&str> {
        self.names
            .get(code.as_str())
            .or_else(|| self.names.get(code.primary()))
            .map(String::as_str)
            .ok_or_else(|| Error::invalid(format!("no language name configured for {code}")))
    }

    /// Reverse lookup, case-insensitive on the name.
    pub fn code_for(&self, name: &str) -> Option<LangCode> {
        self.names
            .iter()
            .find(|(_, n)| n.eq_ignore_ascii_case(name.trim()))
            .and_then(|(c, _)| LangCode::new(c.clone()).ok())
    }
}
