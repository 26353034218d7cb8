//! Corpus selection shared by the commands: a canonical directory or an
//! external layout, optionally restricted to one split.

use std::path::PathBuf;

use anyhow::Result;
use serde::{Deserialize, Serialize};

use shadeforge::corpus::{adapt_external_layout, CorpusLayout, ExternalKind, Member};
use shadeforge::training::TripletSource;
use shadeforge::ShadowTriplet;

use crate::run::usage;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSel {
    pub root: PathBuf,
    pub external: Option<ExternalKind>,
    /// Split of an external layout; all splits when absent.
    pub split: Option<String>,
}

impl CorpusSel {
    pub fn new(root: PathBuf, external: Option<&str>, split: Option<String>) -> Result<Self> {
        let external = external
            .map(|k| {
                ExternalKind::parse(k)
                    .ok_or_else(|| usage(format!("unknown external layout `{k}` (expected istd_like)")))
            })
            .transpose()?;
        if !root.is_dir() {
            return Err(usage(format!("corpus {} does not exist", root.display())));
        }
        if split.is_some() && external.is_none() {
            return Err(usage("--split only applies to external layouts"));
        }
        Ok(CorpusSel { root, external, split })
    }
}

/// One entry: which layout it lives in, and its stem there.
#[derive(Clone, Debug)]
pub struct Entry {
    pub layout: usize,
    pub stem: String,
    /// Unique display name (`split/stem` for multi-split selections).
    pub label: String,
}

#[derive(Clone, Debug)]
pub struct OpenCorpus {
    pub layouts: Vec<CorpusLayout>,
    pub entries: Vec<Entry>,
}

impl OpenCorpus {
    pub fn layout(&self, e: &Entry) -> &CorpusLayout {
        &self.layouts[e.layout]
    }

    pub fn labels(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.label.clone()).collect()
    }
}

impl TripletSource for OpenCorpus {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn load(&self, index: usize) -> shadeforge::Result<ShadowTriplet> {
        let e = &self.entries[index];
        self.layout(e).load_triplet(&e.stem)
    }
}

/// Stems are those present in every member directory in `required`, or in
/// any member directory when `required` is empty.
pub fn open(sel: &CorpusSel, required: &[Member]) -> Result<OpenCorpus> {
    if !sel.root.is_dir() {
        return Err(usage(format!("corpus {} does not exist", sel.root.display())));
    }
    let mut layouts = Vec::new();
    let mut entries = Vec::new();
    match sel.external {
        None => {
            let layout = CorpusLayout::canonical(&sel.root);
            for stem in select(&layout, required)? {
                entries.push(Entry {
                    layout: 0,
                    label: stem.clone(),
                    stem,
                });
            }
            layouts.push(layout);
        }
        Some(kind) => {
            let adapted = adapt_external_layout(&sel.root, kind)?;
            let splits: Vec<_> = match &sel.split {
                Some(name) => vec![adapted
                    .split(name)
                    .ok_or_else(|| usage(format!("split `{name}` not found under {}", sel.root.display())))?],
                None => adapted.splits.iter().collect(),
            };
            let prefix = splits.len() > 1;
            for (i, s) in splits.into_iter().enumerate() {
                log::info!(
                    "{} split: {} triplets, {} excluded",
                    s.name,
                    s.stems.len(),
                    s.excluded.len()
                );
                for stem in select(&s.layout, required)? {
                    let label = if prefix {
                        format!("{}/{stem}", s.name)
                    } else {
                        stem.clone()
                    };
                    entries.push(Entry { layout: i, stem, label });
                }
                layouts.push(s.layout.clone());
            }
        }
    }
    if entries.is_empty() {
        return Err(usage(format!("no usable samples in {}", sel.root.display())));
    }
    Ok(OpenCorpus { layouts, entries })
}

/// Every stem seen in any member directory. Evaluation uses this so that
/// incomplete stems become error entries rather than disappearing.
pub fn open_all(sel: &CorpusSel) -> Result<OpenCorpus> {
    open(sel, &[])
}

fn select(layout: &CorpusLayout, required: &[Member]) -> Result<Vec<String>> {
    if !required.is_empty() {
        return Ok(layout.complete_stems(required)?);
    }
    let mut all = std::collections::BTreeSet::new();
    for m in Member::ALL {
        all.extend(layout.member_stems(m)?);
    }
    Ok(all.into_iter().collect())
}
