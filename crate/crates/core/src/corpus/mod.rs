//! On-disk triplet corpora.
//!
//! ```text
//! root/
//!   shadow/00000.png        8-bit RGB
//!   shadow_free/00000.png   8-bit RGB
//!   mask/00000.png          8-bit gray, {0, 255}
//!   manifest.json
//! ```

mod external;
mod layout;
mod scan;

pub use external::{adapt_external_layout, AdaptedCorpus, AdaptedSplit, ExternalKind};
pub use layout::{
    load_triplet, read_mask, read_rgb, stem_name, CorpusLayout, CorpusManifest, CorpusSource, Member, MANIFEST_FILE,
    MANIFEST_VERSION, MASK_DIR, MASK_THRESHOLD, SHADOW_DIR, SHADOW_FREE_DIR,
};
pub use scan::{scan_corpus, scan_layout, ScanReport, StemStatus};
