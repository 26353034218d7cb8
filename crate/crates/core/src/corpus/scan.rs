use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layout::{CorpusLayout, Member};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StemStatus {
    pub stem: String,
    pub valid: bool,
    pub problems: Vec<String>,
    pub width: Option<u32>,
    pub height: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub root: String,
    pub entries: Vec<StemStatus>,
}

impl ScanReport {
    pub fn valid_stems(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|e| e.valid)
            .map(|e| e.stem.clone())
            .collect()
    }

    pub fn invalid_count(&self) -> usize {
        self.entries.iter().filter(|e| !e.valid).count()
    }
}

fn check_stem(layout: &CorpusLayout, stem: &str) -> StemStatus {
    let mut problems = Vec::new();
    for m in Member::ALL {
        let p = layout.path(m, stem);
        if !p.is_file() {
            problems.push(format!("missing {}", p.display()));
        }
    }
    let mut dims = None;
    if problems.is_empty() {
        match layout.load_triplet(stem) {
            Ok(t) => dims = Some((t.width() as u32, t.height() as u32)),
            Err(e) => problems.push(e.to_string()),
        }
    }
    StemStatus {
        stem: stem.to_string(),
        valid: problems.is_empty(),
        problems,
        width: dims.map(|d| d.0),
        height: dims.map(|d| d.1),
    }
}

/// Validate every stem that appears in any member directory.
pub fn scan_layout(layout: &CorpusLayout) -> Result<ScanReport> {
    if !layout.root.is_dir() {
        return Err(Error::MissingFile(layout.root.clone()));
    }
    let mut stems = std::collections::BTreeSet::new();
    for m in Member::ALL {
        stems.extend(layout.member_stems(m)?);
    }
    let stems: Vec<String> = stems.into_iter().collect();
    let entries = stems.par_iter().map(|s| check_stem(layout, s)).collect();
    Ok(ScanReport {
        root: layout.root.display().to_string(),
        entries,
    })
}

pub fn scan_corpus(root: &Path) -> Result<ScanReport> {
    scan_layout(&CorpusLayout::canonical(root))
}
