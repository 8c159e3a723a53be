//! Bundled, versioned benchmark data.
//!
//! The files live under `crates/core/data/` and are compiled into the
//! binary so `spatialprobe build` works without a checkout. A `--data-dir`
//! containing files with the same names overrides them.

use std::path::Path;

pub const DATA_VERSION: &str = "1";

pub const OBJECTS_SIZE_FILE: &str = "objects_size.tsv";
pub const OBJECTS_HEIGHT_FILE: &str = "objects_height.tsv";
pub const SCENARIOS_FILE: &str = "scenarios.tsv";
pub const LEXICON_FILE: &str = "lexicon.tsv";
pub const CORPUS_FILE: &str = "corpus_sample.txt";

pub const OBJECTS_SIZE: &str = include_str!("../data/objects_size.tsv");
pub const OBJECTS_HEIGHT: &str = include_str!("../data/objects_height.tsv");
pub const SCENARIOS: &str = include_str!("../data/scenarios.tsv");
pub const LEXICON: &str = include_str!("../data/lexicon.tsv");
pub const CORPUS_SAMPLE: &str = include_str!("../data/corpus_sample.txt");

/// A data file's text together with the name used in error messages.
#[derive(Debug, Clone)]
pub struct Source {
    pub name: String,
    pub text: String,
}

fn bundled(file: &str) -> &'static str {
    match file {
        OBJECTS_SIZE_FILE => OBJECTS_SIZE,
        OBJECTS_HEIGHT_FILE => OBJECTS_HEIGHT,
        SCENARIOS_FILE => SCENARIOS,
        LEXICON_FILE => LEXICON,
        CORPUS_FILE => CORPUS_SAMPLE,
        _ => "",
    }
}

/// Loads `file` from `dir` when given, otherwise the bundled copy.
pub fn load(dir: Option<&Path>, file: &str) -> std::io::Result<Source> {
    match dir {
        Some(d) => {
            let path = d.join(file);
            Ok(Source {
                name: path.display().to_string(),
                text: std::fs::read_to_string(&path)?,
            })
        }
        None => Ok(Source {
            name: format!("<bundled>/{file}"),
            text: bundled(file).to_string(),
        }),
    }
}

/// Non-comment, non-blank lines of a tab-separated file, with 1-based line
/// numbers, split on tabs and trimmed.
pub fn tsv_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            None
        } else {
            Some((i + 1, line.split('\t').map(str::trim).collect()))
        }
    })
}
