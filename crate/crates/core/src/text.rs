//! Small text helpers shared by the builders and the prompt renderer.

/// Lowercased word tokens. Leading and trailing punctuation is stripped from
/// each whitespace-separated chunk; inner hyphens and apostrophes are kept.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

pub fn indefinite_article(noun: &str) -> &'static str {
    let lower = noun.trim().to_lowercase();
    // consonant-sounding vowel onsets
    const CONSONANT_ONSET: [&str; 4] = ["uni", "use", "one", "eu"];
    // vowel-sounding consonant onsets
    const VOWEL_ONSET: [&str; 3] = ["hour", "honest", "heir"];
    if CONSONANT_ONSET.iter().any(|p| lower.starts_with(p)) {
        return "a";
    }
    if VOWEL_ONSET.iter().any(|p| lower.starts_with(p)) {
        return "an";
    }
    match lower.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// `"woman"` -> `"a woman"`, `"enchantress"` -> `"an enchantress"`.
pub fn with_article(noun: &str) -> String {
    format!("{} {}", indefinite_article(noun), noun)
}

pub fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gender {
    Female,
    Male,
}

const FEMALE: &[&str] = &[
    "woman", "girl", "lady", "mother", "daughter", "sister", "queen", "wife", "grandmother",
];
const MALE: &[&str] = &[
    "man", "boy", "gentleman", "father", "son", "brother", "king", "husband", "grandfather",
];

pub fn person_gender(person: &str) -> Option<Gender> {
    let p = person.trim().to_lowercase();
    if FEMALE.contains(&p.as_str()) {
        Some(Gender::Female)
    } else if MALE.contains(&p.as_str()) {
        Some(Gender::Male)
    } else {
        None
    }
}

/// Subject for the second sentence of a positional prompt. Falls back to
/// `"The <person>"` when the noun has no entry in the gender table.
pub fn subject_pronoun(person: &str) -> String {
    match person_gender(person) {
        Some(Gender::Female) => "She".to_string(),
        Some(Gender::Male) => "He".to_string(),
        None => format!("The {}", person.trim()),
    }
}

/// Whether `needle` occurs as a contiguous token run inside `haystack`.
pub fn contains_token_run(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}
