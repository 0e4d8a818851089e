//! Rule-based date-expression detection and removal.
//!
//! Recognised forms: month name with a day and/or year ("March 3, 2008",
//! "3 March", "March 2008"), ISO dates, `d/m/y` numerals, and four-digit
//! years 1900-2099 directly after a date context word ("in 2008").

use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;

const MONTH: &str = r"(?:january|february|march|april|may|june|july|august|september|october|november|december|jan|feb|mar|apr|jun|jul|aug|sept|sep|oct|nov|dec)\.?";
const YEAR: &str = r"(?:19|20)\d{2}";
const DAY: &str = r"\d{1,2}(?:st|nd|rd|th)?";
const CONTEXT: &str = r"(?:in|on|since|during|until|till|by|from|of|early|late|mid-?|year|circa|around)";

fn date_core() -> String {
    [
        format!(r"{MONTH}\s+{DAY}\b(?:\s*,?\s*{YEAR}\b)?"),
        format!(r"{DAY}\s+(?:of\s+)?{MONTH}(?:\s*,?\s*{YEAR}\b)?"),
        format!(r"{MONTH}\s*,?\s+{YEAR}\b"),
        r"\d{4}-\d{1,2}-\d{1,2}\b".to_string(),
        r"\d{1,2}/\d{1,2}/\d{2,4}\b".to_string(),
    ]
    .join("|")
}

fn detector() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let core = date_core();
        let pattern = format!(
            r"(?i)\b(?:(?:{CONTEXT})\s+(?:the\s+)?)?(?:{core})|\b{CONTEXT}\s+{YEAR}\b"
        );
        Regex::new(&pattern).expect("date pattern compiles")
    })
}

/// Byte ranges of detected date expressions, in order. A leading context word
/// ("on", "in", ...) is included in the range.
pub fn find_dates(text: &str) -> Vec<Range<usize>> {
    detector().find_iter(text).map(|m| m.range()).collect()
}

pub fn contains_date(text: &str) -> bool {
    detector().is_match(text)
}

/// Removes every detected date expression and tidies the leftover
/// punctuation and spacing.
pub fn strip_dates(text: &str) -> String {
    if !contains_date(text) {
        return text.to_string();
    }
    let removed = detector().replace_all(text, "");
    tidy(&removed)
}

fn tidy(text: &str) -> String {
    static FIXES: OnceLock<[(Regex, &'static str); 4]> = OnceLock::new();
    let fixes = FIXES.get_or_init(|| {
        [
            (Regex::new(r"[ \t]+").unwrap(), " "),
            (Regex::new(r"\s+([,.;:!?])").unwrap(), "$1"),
            (Regex::new(r",(?:\s*,)+").unwrap(), ","),
            (Regex::new(r",([.;:!?])").unwrap(), "$1"),
        ]
    });
    let mut s = text.to_string();
    for (re, rep) in fixes.iter() {
        s = re.replace_all(&s, *rep).into_owned();
    }
    // Sentences that began with the removed date lose their leading comma.
    static LEAD: OnceLock<Regex> = OnceLock::new();
    let lead = LEAD.get_or_init(|| Regex::new(r"(^|[.!?]\s)\s*[,;:]\s*").unwrap());
    s = lead.replace_all(&s, "$1").into_owned();
    let s = s.trim();
    capitalize_sentences(s)
}

fn capitalize_sentences(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut upper_next = true;
    for c in s.chars() {
        if upper_next && c.is_alphabetic() {
            out.extend(c.to_uppercase());
            upper_next = false;
        } else {
            out.push(c);
            if !c.is_whitespace() {
                upper_next = matches!(c, '.' | '!' | '?') && upper_next_allowed(&out);
            }
        }
    }
    out
}

fn upper_next_allowed(out: &str) -> bool {
    // Keep abbreviations such as "U.S." intact: only restart after a word of
    // two or more letters.
    let word: String = out
        .trim_end_matches(['.', '!', '?'])
        .chars()
        .rev()
        .take_while(|c| c.is_alphanumeric())
        .collect();
    word.chars().count() >= 2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_leading_date_clause() {
        assert_eq!(strip_dates("On March 3, 2008, Bush landed."), "Bush landed.");
    }

    #[test]
    fn strips_trailing_and_inline_dates() {
        assert_eq!(strip_dates("Bush landed in Liberia on March 3, 2008."), "Bush landed in Liberia.");
        assert_eq!(
            strip_dates("Troops, on 12 May 2011, left Kabul."),
            "Troops, left Kabul."
        );
        assert_eq!(strip_dates("The vote held 2016-11-08 was close."), "The vote held was close.");
        assert_eq!(strip_dates("Filed 3/4/2012 in court."), "Filed in court.");
        assert_eq!(strip_dates("Elections in 2008 changed things."), "Elections changed things.");
    }

    #[test]
    fn detects_forms() {
        for s in [
            "March 3, 2008",
            "3rd of March",
            "Sept. 11",
            "january 2009",
            "2016-11-08",
            "11/03/16",
            "since 1999",
            "late 2004",
        ] {
            assert!(contains_date(s), "{s}");
        }
    }

    #[test]
    fn leaves_non_dates_alone() {
        for s in [
            "Bush arrives in Monrovia.",
            "The Mar-a-Lago estate.",
            "A 2008 election rally.",
            "Flight 370 vanished.",
            "He scored 3 goals in 90 minutes.",
        ] {
            let found: Vec<&str> = find_dates(s).into_iter().map(|r| &s[r]).collect();
            assert!(found.is_empty(), "{s}: {found:?}");
        }
        assert_eq!(strip_dates("Bush arrives in Monrovia."), "Bush arrives in Monrovia.");
    }

    #[test]
    fn abbreviations_keep_case() {
        assert_eq!(strip_dates("U.S. troops left on May 5."), "U.S. troops left.");
    }
}
