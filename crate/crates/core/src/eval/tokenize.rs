use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Tokenizer applied to hypotheses and references before BLEU n-gram counting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tokenizer {
    /// mteval-v13a compatible punctuation splitting.
    #[default]
    #[serde(rename = "13a")]
    Mteval13a,
    /// Whitespace splitting only.
    #[serde(rename = "none")]
    Whitespace,
}

impl Tokenizer {
    pub fn id(self) -> &'static str {
        match self {
            Tokenizer::Mteval13a => "13a",
            Tokenizer::Whitespace => "none",
        }
    }

    pub fn tokenize(self, line: &str) -> String {
        match self {
            Tokenizer::Mteval13a => tokenize_13a(line),
            Tokenizer::Whitespace => line.split_whitespace().collect::<Vec<_>>().join(" "),
        }
    }
}

fn rules() -> &'static [(Regex, &'static str); 4] {
    static RULES: OnceLock<[(Regex, &'static str); 4]> = OnceLock::new();
    RULES.get_or_init(|| {
        [
            (Regex::new(r"([\{-~\[-` -&\(-\+:-@/])").unwrap(), " ${1} "),
            (Regex::new(r"([^0-9])([\.,])").unwrap(), "${1} ${2} "),
            (Regex::new(r"([\.,])([^0-9])").unwrap(), " ${1} ${2}"),
            (Regex::new(r"([0-9])(-)").unwrap(), "${1} ${2} "),
        ]
    })
}

pub fn tokenize_13a(line: &str) -> String {
    let mut line = line.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
    if line.contains('&') {
        line = line
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let mut line = format!(" {line} ");
    for (re, rep) in rules() {
        line = re.replace_all(&line, *rep).into_owned();
    }
    line.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_reference_tokenizer() {
        let cases = [
            (
                "Prices rose by 3.5 percent, according to x.",
                "Prices rose by 3.5 percent , according to x .",
            ),
            ("\"We expect,\" he said.", "\" We expect , \" he said ."),
            (
                "state-of-the-art 1,200 2008-2010 a&amp;b",
                "state-of-the-art 1,200 2008 - 2010 a & b",
            ),
            ("  spaced   out  ", "spaced out"),
            ("", ""),
        ];
        for (input, want) in cases {
            assert_eq!(tokenize_13a(input), want, "{input:?}");
        }
    }

    #[test]
    fn whitespace_tokenizer() {
        assert_eq!(Tokenizer::Whitespace.tokenize(" a  b, c "), "a b, c");
    }
}
