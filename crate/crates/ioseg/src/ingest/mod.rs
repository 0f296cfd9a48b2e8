//! Volume loading and axial slice extraction.
//!
//! Volumes are stored in the fixed row-major axis order of the on-disk
//! format: x fastest, then y, then z. A 2-D slice uses (row, col)
//! coordinates with row 0 at the top, so pixel (row=y, col=x) of an axial
//! slice is voxel (x, y, z).

mod nifti;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

pub use nifti::{load_nifti, load_nifti_with_modality, write_nifti, NiftiDtype};

/// MRI sequence (or segmentation) a volume holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    T1,
    T1ce,
    T2,
    Flair,
    Seg,
    Unknown,
}

impl Modality {
    /// Infer the modality from the BraTS-style filename suffix
    /// (`*_t1ce.nii.gz`, `*_seg.nii`, ...). Unrecognized names map to
    /// [`Modality::Unknown`].
    pub fn from_path(path: &Path) -> Modality {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("")
            .to_ascii_lowercase();
        let stem = name
            .strip_suffix(".nii.gz")
            .or_else(|| name.strip_suffix(".nii"))
            .unwrap_or(&name);
        // Longest suffix first so `_t1ce` is not shadowed by `_t1`.
        const SUFFIXES: [(&str, Modality); 5] = [
            ("_t1ce", Modality::T1ce),
            ("_flair", Modality::Flair),
            ("_seg", Modality::Seg),
            ("_t1", Modality::T1),
            ("_t2", Modality::T2),
        ];
        for (suffix, modality) in SUFFIXES {
            if stem.ends_with(suffix) {
                return modality;
            }
        }
        Modality::Unknown
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Modality::T1 => "t1",
            Modality::T1ce => "t1ce",
            Modality::T2 => "t2",
            Modality::Flair => "flair",
            Modality::Seg => "seg",
            Modality::Unknown => "unknown",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Modality> {
        match s.to_ascii_lowercase().as_str() {
            "t1" => Ok(Modality::T1),
            "t1ce" => Ok(Modality::T1ce),
            "t2" => Ok(Modality::T2),
            "flair" => Ok(Modality::Flair),
            "seg" => Ok(Modality::Seg),
            "unknown" => Ok(Modality::Unknown),
            other => Err(Error::DomainError(format!("unknown modality '{other}'"))),
        }
    }
}

/// Mapping from integer segmentation label to a human-readable name.
pub type LabelSemantics = BTreeMap<u32, String>;

/// The BraTS annotation labels: 1 = necrotic tumor core, 2 = peritumoral
/// edema, 4 = enhancing tumor.
pub fn brats_label_semantics() -> LabelSemantics {
    let mut map = LabelSemantics::new();
    map.insert(1, "necrotic-tumor-core".to_string());
    map.insert(2, "peritumoral-edema".to_string());
    map.insert(4, "enhancing-tumor".to_string());
    map
}

/// A 3-D scalar grid: the loaded MRI (or segmentation) volume.
///
/// Voxels are kept as `f64` regardless of the on-disk datatype; the source
/// datatype is retained so a round trip through [`write_nifti`] is
/// bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: (usize, usize, usize),
    spacing: (f32, f32, f32),
    voxels: Vec<f64>,
    modality: Modality,
    dtype: NiftiDtype,
}

impl Volume {
    /// Build a volume, validating the stored invariants: the voxel count
    /// matches the dimensions, spacing components are strictly positive,
    /// and segmentation volumes hold only non-negative integer values.
    pub fn new(
        dims: (usize, usize, usize),
        spacing: (f32, f32, f32),
        voxels: Vec<f64>,
        modality: Modality,
    ) -> Result<Volume> {
        Volume::with_dtype(dims, spacing, voxels, modality, NiftiDtype::F64)
    }

    pub fn with_dtype(
        dims: (usize, usize, usize),
        spacing: (f32, f32, f32),
        voxels: Vec<f64>,
        modality: Modality,
        dtype: NiftiDtype,
    ) -> Result<Volume> {
        let (nx, ny, nz) = dims;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::DomainError(format!(
                "volume dimensions must be positive, got {nx}x{ny}x{nz}"
            )));
        }
        let expected = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Error::DomainError("volume dimensions overflow".to_string()))?;
        if voxels.len() != expected {
            return Err(Error::DomainError(format!(
                "voxel count {} does not match dims {nx}x{ny}x{nz} = {expected}",
                voxels.len()
            )));
        }
        if !(spacing.0 > 0.0 && spacing.1 > 0.0 && spacing.2 > 0.0) {
            return Err(Error::DomainError(format!(
                "spacing components must be strictly positive, got {spacing:?}"
            )));
        }
        if modality == Modality::Seg {
            for (i, &v) in voxels.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64) {
                    return Err(Error::DomainError(format!(
                        "segmentation voxel {i} is not a non-negative integer: {v}"
                    )));
                }
            }
        }
        Ok(Volume {
            dims,
            spacing,
            voxels,
            modality,
            dtype,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing(&self) -> (f32, f32, f32) {
        self.spacing
    }

    pub fn voxels(&self) -> &[f64] {
        &self.voxels
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dtype(&self) -> NiftiDtype {
        self.dtype
    }

    pub fn voxel(&self, x: usize, y: usize, z: usize) -> f64 {
        let (nx, ny, _) = self.dims;
        self.voxels[x + nx * (y + ny * z)]
    }

    /// Zero-based index of the middle axial slice: `floor(nz / 2)`.
    ///
    /// For a 155-slice volume this selects index 77, the 78th slice.
    pub fn middle_slice_index(&self) -> usize {
        self.dims.2 / 2
    }

    /// Extract the axial plane at `z = index` as a 2-D image.
    pub fn axial_slice(&self, index: usize) -> Result<SliceImage> {
        let (nx, ny, nz) = self.dims;
        if index >= nz {
            return Err(Error::IndexOutOfRange { index, nz });
        }
        let mut pixels = Vec::with_capacity(nx * ny);
        for y in 0..ny {
            for x in 0..nx {
                pixels.push(self.voxel(x, y, index));
            }
        }
        SliceImage::new(nx, ny, pixels)
    }

    /// Extract the axial plane of a segmentation volume as a label mask.
    ///
    /// The label semantics come from configuration; every non-zero label in
    /// the plane must be declared there.
    pub fn axial_mask(&self, index: usize, semantics: &LabelSemantics) -> Result<LabelMask> {
        if self.modality != Modality::Seg {
            return Err(Error::WrongModality {
                expected: Modality::Seg,
                actual: self.modality,
            });
        }
        let (nx, ny, nz) = self.dims;
        if index >= nz {
            return Err(Error::IndexOutOfRange { index, nz });
        }
        let mut labels = Vec::with_capacity(nx * ny);
        for y in 0..ny {
            for x in 0..nx {
                // Integrality is validated at construction for SEG volumes.
                labels.push(self.voxel(x, y, index) as u32);
            }
        }
        LabelMask::new(nx, ny, labels, semantics.clone())
    }
}

/// A 2-D grayscale image of finite scalar intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl SliceImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<SliceImage> {
        if width == 0 || height == 0 {
            return Err(Error::DomainError(format!(
                "slice dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::DomainError(format!(
                "pixel count {} does not match {width}x{height}",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !p.is_finite()) {
            return Err(Error::DomainError(format!(
                "slice contains a non-finite pixel value: {bad}"
            )));
        }
        Ok(SliceImage {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// True when every pixel lies in [0, 1].
    pub fn is_normalized(&self) -> bool {
        self.pixels.iter().all(|&p| (0.0..=1.0).contains(&p))
    }
}

/// A 2-D integer-label raster aligned to a [`SliceImage`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    semantics: LabelSemantics,
}

impl LabelMask {
    pub fn new(
        width: usize,
        height: usize,
        labels: Vec<u32>,
        semantics: LabelSemantics,
    ) -> Result<LabelMask> {
        if labels.len() != width * height {
            return Err(Error::DomainError(format!(
                "label count {} does not match {width}x{height}",
                labels.len()
            )));
        }
        for &label in &labels {
            if label != 0 && !semantics.contains_key(&label) {
                return Err(Error::DomainError(format!(
                    "label {label} not declared in label semantics"
                )));
            }
        }
        Ok(LabelMask {
            width,
            height,
            labels,
            semantics,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn semantics(&self) -> &LabelSemantics {
        &self.semantics
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn volume_from_fn(
        dims: (usize, usize, usize),
        modality: Modality,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Volume {
        let (nx, ny, nz) = dims;
        let mut voxels = Vec::with_capacity(nx * ny * nz);
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    voxels.push(f(x, y, z));
                }
            }
        }
        Volume::new(dims, (1.0, 1.0, 1.0), voxels, modality).unwrap()
    }

    #[test]
    fn middle_slice_index_matches_convention() {
        let v = volume_from_fn((2, 2, 155), Modality::T1ce, |_, _, _| 0.0);
        assert_eq!(v.middle_slice_index(), 77);
        let v = volume_from_fn((2, 2, 1), Modality::T1ce, |_, _, _| 0.0);
        assert_eq!(v.middle_slice_index(), 0);
        let v = volume_from_fn((2, 2, 10), Modality::T1ce, |_, _, _| 0.0);
        assert_eq!(v.middle_slice_index(), 5);
    }

    #[test]
    fn axial_slice_constant_plane() {
        let v = volume_from_fn((4, 4, 3), Modality::T1ce, |_, _, z| z as f64);
        let slice = v.axial_slice(2).unwrap();
        assert!(slice.pixels().iter().all(|&p| p == 2.0));
    }

    #[test]
    fn axial_slice_index_out_of_range() {
        let v = volume_from_fn((4, 4, 3), Modality::T1ce, |_, _, _| 0.0);
        assert!(matches!(
            v.axial_slice(3),
            Err(Error::IndexOutOfRange { index: 3, nz: 3 })
        ));
    }

    #[test]
    fn axial_slice_maps_voxel_to_row_col() {
        // One nonzero voxel at (x=1, y=2, z=0) must land at row 2, col 1.
        let v = volume_from_fn((4, 4, 3), Modality::T1ce, |x, y, z| {
            if (x, y, z) == (1, 2, 0) {
                7.0
            } else {
                0.0
            }
        });
        let slice = v.axial_slice(0).unwrap();
        for row in 0..4 {
            for col in 0..4 {
                let expected = if (row, col) == (2, 1) { 7.0 } else { 0.0 };
                assert_eq!(slice.get(row, col), expected, "row={row} col={col}");
            }
        }
    }

    #[test]
    fn axial_mask_zeros_and_single_label() {
        let semantics = brats_label_semantics();
        let v = volume_from_fn((3, 3, 2), Modality::Seg, |_, _, _| 0.0);
        let mask = v.axial_mask(0, &semantics).unwrap();
        assert!(mask.labels().iter().all(|&l| l == 0));

        let v = volume_from_fn((3, 3, 2), Modality::Seg, |x, y, z| {
            if (x, y, z) == (2, 0, 1) {
                4.0
            } else {
                0.0
            }
        });
        let mask = v.axial_mask(1, &semantics).unwrap();
        let fours: Vec<_> = (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .filter(|&(r, c)| mask.get(r, c) == 4)
            .collect();
        assert_eq!(fours, vec![(0, 2)]);
    }

    #[test]
    fn axial_mask_rejects_non_seg() {
        let v = volume_from_fn((3, 3, 2), Modality::T1ce, |_, _, _| 0.0);
        assert!(matches!(
            v.axial_mask(0, &brats_label_semantics()),
            Err(Error::WrongModality { .. })
        ));
    }

    #[test]
    fn seg_volume_rejects_fractional_voxels() {
        let err = Volume::new((1, 1, 1), (1.0, 1.0, 1.0), vec![0.5], Modality::Seg);
        assert!(err.is_err());
    }

    #[test]
    fn modality_from_path_suffixes() {
        let cases = [
            ("BraTS2021_00000_t1ce.nii.gz", Modality::T1ce),
            ("BraTS2021_00000_t1.nii.gz", Modality::T1),
            ("BraTS2021_00000_t2.nii", Modality::T2),
            ("BraTS2021_00000_flair.nii.gz", Modality::Flair),
            ("BraTS2021_00000_seg.nii.gz", Modality::Seg),
            ("something_else.nii", Modality::Unknown),
        ];
        for (name, expected) in cases {
            assert_eq!(Modality::from_path(Path::new(name)), expected, "{name}");
        }
    }

    #[test]
    fn label_mask_rejects_undeclared_labels() {
        let err = LabelMask::new(2, 1, vec![0, 9], brats_label_semantics());
        assert!(err.is_err());
    }
}
