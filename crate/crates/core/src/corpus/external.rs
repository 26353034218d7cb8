//! Read-only views of third-party dataset layouts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layout::{CorpusLayout, Member};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExternalKind {
    /// `{split}_A` shadow images, `{split}_B` masks, `{split}_C` shadow-free images.
    IstdLike,
}

impl ExternalKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "istd_like" | "istd" => Some(ExternalKind::IstdLike),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdaptedSplit {
    pub name: String,
    pub layout: CorpusLayout,
    /// Stems present in all three directories.
    pub stems: Vec<String>,
    /// Stems missing from at least one directory.
    pub excluded: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct AdaptedCorpus {
    pub kind: ExternalKind,
    pub root: PathBuf,
    pub splits: Vec<AdaptedSplit>,
}

impl AdaptedCorpus {
    pub fn split(&self, name: &str) -> Option<&AdaptedSplit> {
        self.splits.iter().find(|s| s.name == name)
    }
}

fn istd_split(dir: &Path, split: &str) -> Option<CorpusLayout> {
    let sub = |s: &str| dir.join(format!("{split}_{s}"));
    let (a, b, c) = (sub("A"), sub("B"), sub("C"));
    (a.is_dir() && b.is_dir() && c.is_dir()).then(|| CorpusLayout {
        root: dir.to_path_buf(),
        shadow_dir: a,
        shadow_free_dir: c,
        mask_dir: b,
    })
}

/// Map an external layout onto the canonical triplet view without copying.
///
/// For `istd_like`, `train_*` and `test_*` directories are looked up in
/// `root` and in `root/train`, `root/test`.
pub fn adapt_external_layout(root: &Path, kind: ExternalKind) -> Result<AdaptedCorpus> {
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    let ExternalKind::IstdLike = kind;
    let mut splits = Vec::new();
    for split in ["train", "test"] {
        let found = [root.to_path_buf(), root.join(split)]
            .into_iter()
            .find_map(|d| istd_split(&d, split));
        let Some(layout) = found else { continue };
        let stems = layout.complete_stems(&Member::ALL)?;
        let mut all = std::collections::BTreeSet::new();
        for m in Member::ALL {
            all.extend(layout.member_stems(m)?);
        }
        let excluded: Vec<String> = all.into_iter().filter(|s| stems.binary_search(s).is_err()).collect();
        let mut warnings = Vec::new();
        for stem in &excluded {
            let missing: Vec<String> = Member::ALL
                .iter()
                .map(|&m| layout.path(m, stem))
                .filter(|p| !p.is_file())
                .map(|p| p.display().to_string())
                .collect();
            let w = format!("{split}: excluding {stem}, missing {}", missing.join(", "));
            log::warn!("{w}");
            warnings.push(w);
        }
        log::info!("{split}: {} triplets", stems.len());
        splits.push(AdaptedSplit {
            name: split.to_string(),
            layout,
            stems,
            excluded,
            warnings,
        });
    }
    if splits.is_empty() {
        return Err(Error::Layout {
            root: root.to_path_buf(),
            reason: "expected train_A, train_B, train_C and/or test_A, test_B, test_C \
                     (directly or under train/ and test/)"
                .into(),
        });
    }
    if splits.iter().all(|s| s.stems.is_empty()) {
        return Err(Error::Layout {
            root: root.to_path_buf(),
            reason: "no complete triplets found".into(),
        });
    }
    Ok(AdaptedCorpus {
        kind,
        root: root.to_path_buf(),
        splits,
    })
}
