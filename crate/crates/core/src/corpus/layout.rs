//! Canonical `shadow/`, `shadow_free/`, `mask/` triplet directories.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{ShadowMask, ShadowTriplet};
use crate::training::TripletSource;

pub const SHADOW_DIR: &str = "shadow";
pub const SHADOW_FREE_DIR: &str = "shadow_free";
pub const MASK_DIR: &str = "mask";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MASK_THRESHOLD: u8 = 128;
const EXTENSION: &str = "png";

/// Zero-padded file stem for sample `index`.
pub fn stem_name(index: usize) -> String {
    format!("{index:05}")
}

/// Where the three members of each triplet live. Canonical corpora use
/// sibling subdirectories of `root`; adapters point them elsewhere.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusLayout {
    pub root: PathBuf,
    pub shadow_dir: PathBuf,
    pub shadow_free_dir: PathBuf,
    pub mask_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Member {
    Shadow,
    ShadowFree,
    Mask,
}

impl Member {
    pub const ALL: [Member; 3] = [Member::Shadow, Member::ShadowFree, Member::Mask];
}

fn decode(path: &Path) -> Result<DynamicImage> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Decode a mask file and binarize it at [`MASK_THRESHOLD`]. Colour images
/// are accepted only when every pixel is gray.
pub fn read_mask(path: &Path) -> Result<ShadowMask> {
    let img = decode(path)?;
    let gray = if img.color().has_color() {
        let rgb = img.to_rgb8();
        if rgb.pixels().any(|p| p.0[0] != p.0[1] || p.0[1] != p.0[2]) {
            return Err(Error::Validation(format!("mask {} is not grayscale", path.display())));
        }
        DynamicImage::ImageRgb8(rgb).to_luma8()
    } else {
        img.to_luma8()
    };
    Ok(ShadowMask::from_gray(&gray, MASK_THRESHOLD))
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(decode(path)?.to_rgb8())
}

fn save_png(path: &Path, img: &DynamicImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

impl CorpusLayout {
    pub fn canonical(root: impl Into<PathBuf>) -> Self {
        let root = root.into();
        CorpusLayout {
            shadow_dir: root.join(SHADOW_DIR),
            shadow_free_dir: root.join(SHADOW_FREE_DIR),
            mask_dir: root.join(MASK_DIR),
            root,
        }
    }

    /// Canonical layout with its subdirectories created.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let layout = Self::canonical(root);
        for d in [&layout.shadow_dir, &layout.shadow_free_dir, &layout.mask_dir] {
            fs::create_dir_all(d)?;
        }
        Ok(layout)
    }

    pub fn dir(&self, member: Member) -> &Path {
        match member {
            Member::Shadow => &self.shadow_dir,
            Member::ShadowFree => &self.shadow_free_dir,
            Member::Mask => &self.mask_dir,
        }
    }

    pub fn path(&self, member: Member, stem: &str) -> PathBuf {
        self.dir(member).join(format!("{stem}.{EXTENSION}"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    /// Sorted stems with a PNG in the given member directory.
    pub fn member_stems(&self, member: Member) -> Result<BTreeSet<String>> {
        let dir = self.dir(member);
        let mut stems = BTreeSet::new();
        let entries = match fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(stems),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let path = entry?.path();
            let is_png = path
                .extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case(EXTENSION));
            if is_png && path.is_file() {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    stems.insert(stem.to_string());
                }
            }
        }
        Ok(stems)
    }

    /// Stems present in every listed member directory, lexicographic.
    pub fn complete_stems(&self, members: &[Member]) -> Result<Vec<String>> {
        let mut sets = members.iter().map(|&m| self.member_stems(m));
        let Some(first) = sets.next() else {
            return Ok(Vec::new());
        };
        let mut common = first?;
        for s in sets {
            let s = s?;
            common.retain(|stem| s.contains(stem));
        }
        Ok(common.into_iter().collect())
    }

    pub fn load_shadow(&self, stem: &str) -> Result<RgbImage> {
        read_rgb(&self.path(Member::Shadow, stem))
    }

    pub fn load_shadow_free(&self, stem: &str) -> Result<RgbImage> {
        read_rgb(&self.path(Member::ShadowFree, stem))
    }

    pub fn load_mask(&self, stem: &str) -> Result<ShadowMask> {
        read_mask(&self.path(Member::Mask, stem))
    }

    pub fn load_triplet(&self, stem: &str) -> Result<ShadowTriplet> {
        for m in Member::ALL {
            let p = self.path(m, stem);
            if !p.is_file() {
                return Err(Error::MissingFile(p));
            }
        }
        ShadowTriplet::new(
            self.load_shadow(stem)?,
            self.load_shadow_free(stem)?,
            self.load_mask(stem)?,
        )
    }

    pub fn write_triplet(&self, stem: &str, t: &ShadowTriplet) -> Result<()> {
        t.validate()?;
        save_png(
            &self.path(Member::Shadow, stem),
            &DynamicImage::ImageRgb8(t.shadow.clone()),
        )?;
        save_png(
            &self.path(Member::ShadowFree, stem),
            &DynamicImage::ImageRgb8(t.shadow_free.clone()),
        )?;
        save_png(
            &self.path(Member::Mask, stem),
            &DynamicImage::ImageLuma8(t.mask.to_gray()),
        )
    }

    pub fn write_manifest(&self, manifest: &CorpusManifest) -> Result<()> {
        fs::write(self.manifest_path(), serde_json::to_vec_pretty(manifest)?)?;
        Ok(())
    }

    pub fn read_manifest(&self) -> Result<Option<CorpusManifest>> {
        match fs::read(self.manifest_path()) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}

/// Load a triplet from a canonical corpus.
pub fn load_triplet(root: &Path, stem: &str) -> Result<ShadowTriplet> {
    CorpusLayout::canonical(root).load_triplet(stem)
}

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub count: usize,
    pub stems: Vec<String>,
    /// Generator settings for synthetic corpora.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

impl CorpusManifest {
    pub fn new(stems: Vec<String>, generator: Option<serde_json::Value>) -> Self {
        CorpusManifest {
            format_version: MANIFEST_VERSION,
            count: stems.len(),
            stems,
            generator,
        }
    }
}

/// A fixed list of stems of a layout, usable as a training source.
#[derive(Clone, Debug)]
pub struct CorpusSource {
    pub layout: CorpusLayout,
    pub stems: Vec<String>,
}

impl CorpusSource {
    /// All complete triplets of a canonical corpus.
    pub fn open(root: &Path) -> Result<Self> {
        let layout = CorpusLayout::canonical(root);
        if !root.is_dir() {
            return Err(Error::MissingFile(root.to_path_buf()));
        }
        let stems = layout.complete_stems(&Member::ALL)?;
        Ok(CorpusSource { layout, stems })
    }
}

impl TripletSource for CorpusSource {
    fn len(&self) -> usize {
        self.stems.len()
    }

    fn load(&self, index: usize) -> Result<ShadowTriplet> {
        let stem = self
            .stems
            .get(index)
            .ok_or_else(|| Error::Validation(format!("sample {index} out of range")))?;
        self.layout.load_triplet(stem)
    }
}
