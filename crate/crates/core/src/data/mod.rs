//! Domain types and on-disk formats: category tables, label maps, binary
//! masks with run-length encoding, and dataset manifests.

mod category;
mod labelmap;
mod manifest;
mod mask;

pub use category::{
    normalize_name, Category, CategoryTable, ClassId, MatchKind, TableError, RESERVED_NAME_CHARS,
};
pub use labelmap::{LabelMap, LabelMapError, LABELMAP_MAGIC};
pub use manifest::{
    load_manifest, validate_manifest, ImageRecord, Manifest, ManifestError, ManifestFile,
    ManifestImage,
};
pub use mask::{format_rle, parse_rle, BinaryMask, MaskError};

/// Resolve `raw` against `table`: exact canonical match, then alias.
pub fn resolve_category(table: &CategoryTable, raw: &str) -> Option<(ClassId, MatchKind)> {
    table.resolve(raw)
}
