//! Answer extraction from free-form generated text.
//!
//! Generated outputs are chain-of-thought style: the definitive answer is
//! usually the *last* committed token, not the first guess. Extraction applies
//! an ordered rule cascade and takes the last occurrence for each rule:
//!
//! 1. boxed marker `\boxed{...}`
//! 2. explicit tag line `Answer: X` / `The answer is X` (case-insensitive)
//! 3. (multiple choice only) a standalone option letter followed by `.`, `)`,
//!    or end of line
//!
//! The highest-precedence rule that fires wins. If its captured token fails
//! format validation, or no rule fires at all, the result is the `INVALID`
//! sentinel — never an error, so the reward loop keeps going.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;

/// Reserved sentinel for unparseable outputs.
pub const INVALID_SENTINEL: &str = "INVALID";

static BOXED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\\boxed\{([^{}]*)\}").unwrap());
static TAG: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?im)(?:the\s+answer\s+is|answer\s*:)[ \t]*([^\r\n]*)").unwrap()
});
static LETTER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)\b([A-Za-z])(?:[.)]|[ \t]*$)").unwrap());

/// Shape of the answer space a question admits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AnswerFormat {
    /// Options `A`, `B`, ... up to `options` letters (2..=26).
    MultipleChoiceLetter { options: u8 },
    /// Exact numeric match after decimal canonicalization.
    NumericExact,
    /// Lowercased, whitespace-collapsed free text.
    FreeTextNormalized,
}

impl AnswerFormat {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            AnswerFormat::MultipleChoiceLetter { options } => {
                if (2..=26).contains(options) {
                    Ok(())
                } else {
                    Err(format!("option count {options} outside 2..=26"))
                }
            }
            _ => Ok(()),
        }
    }
}

/// A canonical answer token, or the `INVALID` sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExtractedAnswer {
    value: String,
    valid: bool,
}

impl ExtractedAnswer {
    pub fn invalid() -> Self {
        Self {
            value: INVALID_SENTINEL.to_string(),
            valid: false,
        }
    }

    fn answer(value: String) -> Self {
        debug_assert!(value != INVALID_SENTINEL);
        Self { value, valid: true }
    }

    pub fn is_valid(&self) -> bool {
        self.valid
    }

    /// Canonical token, or `"INVALID"` when invalid.
    pub fn as_str(&self) -> &str {
        &self.value
    }
}

/// Parses a definitive answer out of `text`. Total and deterministic: every
/// string maps to exactly one `ExtractedAnswer`.
pub fn extract_answer(text: &str, format: &AnswerFormat) -> ExtractedAnswer {
    if let Some(m) = BOXED.captures_iter(text).last() {
        return canonicalize(&m[1], format);
    }
    if let Some(m) = TAG.captures_iter(text).last() {
        return canonicalize(&m[1], format);
    }
    if matches!(format, AnswerFormat::MultipleChoiceLetter { .. }) {
        if let Some(m) = LETTER.captures_iter(text).last() {
            return canonicalize(&m[1], format);
        }
    }
    ExtractedAnswer::invalid()
}

/// Normalizes a captured token into canonical form for its format, or returns
/// the `INVALID` sentinel when the token violates the format. Idempotent on
/// valid tokens.
pub fn canonicalize(token: &str, format: &AnswerFormat) -> ExtractedAnswer {
    match format {
        AnswerFormat::MultipleChoiceLetter { options } => canonical_letter(token, *options),
        AnswerFormat::NumericExact => canonical_number(token),
        AnswerFormat::FreeTextNormalized => canonical_text(token),
    }
}

fn canonical_letter(token: &str, options: u8) -> ExtractedAnswer {
    let stripped = token.trim().trim_matches(|c: char| !c.is_alphanumeric());
    let mut chars = stripped.chars();
    let (Some(letter), None) = (chars.next(), chars.next()) else {
        return ExtractedAnswer::invalid();
    };
    if !letter.is_ascii_alphabetic() {
        return ExtractedAnswer::invalid();
    }
    let upper = letter.to_ascii_uppercase();
    let index = upper as u8 - b'A';
    if index < options.min(26) {
        ExtractedAnswer::answer(upper.to_string())
    } else {
        ExtractedAnswer::invalid()
    }
}

/// Decimal canonical form: optional leading minus (only when nonzero), integer
/// part without leading zeros, fractional part without trailing zeros.
fn canonical_number(token: &str) -> ExtractedAnswer {
    let stripped = token
        .trim()
        .trim_matches(|c: char| !(c.is_ascii_digit() || c == '-' || c == '+' || c == '.'));
    if stripped.is_empty() {
        return ExtractedAnswer::invalid();
    }
    let (negative, digits) = match stripped.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, stripped.strip_prefix('+').unwrap_or(stripped)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return ExtractedAnswer::invalid();
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit())
    {
        return ExtractedAnswer::invalid();
    }
    let int_canon = int_part.trim_start_matches('0');
    let int_canon = if int_canon.is_empty() { "0" } else { int_canon };
    let frac_canon = frac_part.trim_end_matches('0');
    let is_zero = int_canon == "0" && frac_canon.is_empty();
    let mut out = String::new();
    if negative && !is_zero {
        out.push('-');
    }
    out.push_str(int_canon);
    if !frac_canon.is_empty() {
        out.push('.');
        out.push_str(frac_canon);
    }
    ExtractedAnswer::answer(out)
}

fn canonical_text(token: &str) -> ExtractedAnswer {
    let collapsed = token
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    let normalized = collapsed.trim_end_matches(['.', '!', '?', ',', ';', ':']).trim_end();
    if normalized.is_empty() || normalized == INVALID_SENTINEL.to_lowercase() {
        return ExtractedAnswer::invalid();
    }
    ExtractedAnswer::answer(normalized.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mc(options: u8) -> AnswerFormat {
        AnswerFormat::MultipleChoiceLetter { options }
    }

    #[test]
    fn tag_match_takes_the_letter() {
        let out = extract_answer("... reasoning ... Answer: G", &mc(10));
        assert!(out.is_valid());
        assert_eq!(out.as_str(), "G");
    }

    #[test]
    fn empty_input_is_invalid() {
        let out = extract_answer("", &mc(4));
        assert!(!out.is_valid());
        assert_eq!(out.as_str(), INVALID_SENTINEL);
    }

    #[test]
    fn boxed_outranks_tag_and_letter_rules() {
        // Cascade oracle, by hand: rule 1 fires on \boxed{D}; the standalone
        // "B." match never gets a chance.
        let out = extract_answer("I think B. No wait, \\boxed{D}", &mc(4));
        assert_eq!(out.as_str(), "D");
        assert!(out.is_valid());
    }

    #[test]
    fn last_occurrence_wins_within_a_rule() {
        let out = extract_answer("Answer: A\nreconsidering...\nAnswer: C", &mc(4));
        assert_eq!(out.as_str(), "C");
        let out = extract_answer("\\boxed{A} ... \\boxed{B}", &mc(4));
        assert_eq!(out.as_str(), "B");
    }

    #[test]
    fn the_answer_is_tag_matches_case_insensitively() {
        let out = extract_answer("so THE ANSWER IS b.", &mc(4));
        assert_eq!(out.as_str(), "B");
    }

    #[test]
    fn standalone_letter_fallback_fires_for_multiple_choice_only() {
        assert_eq!(extract_answer("it must be C.", &mc(4)).as_str(), "C");
        assert!(!extract_answer("it must be C.", &AnswerFormat::NumericExact).is_valid());
    }

    #[test]
    fn trailing_letter_at_end_of_line_counts() {
        assert_eq!(extract_answer("final choice: D", &mc(4)).as_str(), "D");
    }

    #[test]
    fn invalid_token_in_winning_rule_does_not_fall_through() {
        // Boxed fires with an out-of-range letter; the valid "A." below it
        // must not be consulted.
        let out = extract_answer("A. is tempting but \\boxed{Z}", &mc(4));
        assert!(!out.is_valid());
    }

    #[test]
    fn canonicalize_strips_case_and_punctuation() {
        assert_eq!(canonicalize(" g.", &mc(10)).as_str(), "G");
    }

    #[test]
    fn canonicalize_numeric_examples() {
        // Oracle: parse/re-render by decimal rules worked by hand.
        let cases = [
            ("2.50", "2.5"),
            ("007", "7"),
            (".5", "0.5"),
            ("5.", "5"),
            ("-0.0", "0"),
            ("+3.25", "3.25"),
            ("0.0400", "0.04"),
        ];
        for (raw, want) in cases {
            let got = canonicalize(raw, &AnswerFormat::NumericExact);
            assert!(got.is_valid(), "{raw} should be valid");
            assert_eq!(got.as_str(), want, "canonical form of {raw}");
        }
    }

    #[test]
    fn canonicalize_rejects_out_of_range_letter() {
        assert!(!canonicalize("Z", &mc(4)).is_valid());
        assert!(canonicalize("Z", &mc(26)).is_valid());
    }

    #[test]
    fn canonicalize_rejects_garbage_numbers() {
        for raw in ["", "abc", "1.2.3", "--4", "2e3"] {
            assert!(
                !canonicalize(raw, &AnswerFormat::NumericExact).is_valid(),
                "{raw:?} should be invalid"
            );
        }
    }

    #[test]
    fn free_text_normalization() {
        let fmt = AnswerFormat::FreeTextNormalized;
        assert_eq!(canonicalize("  The   Blue Whale. ", &fmt).as_str(), "the blue whale");
        assert!(!canonicalize("  ...  ", &fmt).is_valid());
    }

    #[test]
    fn extraction_is_deterministic() {
        let text = "maybe A) or B. Answer: C\n\\boxed{1.50} trailing D";
        for fmt in [mc(6), AnswerFormat::NumericExact, AnswerFormat::FreeTextNormalized] {
            let first = extract_answer(text, &fmt);
            for _ in 0..8 {
                assert_eq!(extract_answer(text, &fmt), first);
            }
        }
    }

    #[test]
    fn format_invariants() {
        assert!(mc(2).validate().is_ok());
        assert!(mc(26).validate().is_ok());
        assert!(mc(1).validate().is_err());
        assert!(mc(27).validate().is_err());
    }
}
