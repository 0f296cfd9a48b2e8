//! Property tests for the library invariants.

use proptest::prelude::*;

use ioseg::eval::dice;
use ioseg::geometry::{bbox_center, bbox_from_mask, bbox_iou, largest_component, BBox};
use ioseg::ingest::{load_nifti_with_modality, write_nifti, Modality, NiftiDtype, Volume};
use ioseg::pipeline::{threshold_mask, ProbabilityMask};
use ioseg::preprocess::{
    normalize_intensity, resize_binary_mask, resize_image, BinaryMask, RgbImage,
};

fn arb_dims() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..6, 1usize..6, 1usize..6)
}

fn arb_dtype() -> impl Strategy<Value = NiftiDtype> {
    prop_oneof![
        Just(NiftiDtype::U8),
        Just(NiftiDtype::I16),
        Just(NiftiDtype::U16),
        Just(NiftiDtype::F32),
        Just(NiftiDtype::F64),
    ]
}

fn representable(dtype: NiftiDtype) -> BoxedStrategy<f64> {
    match dtype {
        NiftiDtype::U8 => (0u8..=255).prop_map(|v| v as f64).boxed(),
        NiftiDtype::I16 => any::<i16>().prop_map(|v| v as f64).boxed(),
        NiftiDtype::U16 => any::<u16>().prop_map(|v| v as f64).boxed(),
        NiftiDtype::F32 => (-1e6f32..1e6f32).prop_map(|v| v as f64).boxed(),
        NiftiDtype::F64 => (-1e9f64..1e9f64).boxed(),
    }
}

fn arb_volume() -> impl Strategy<Value = Volume> {
    (arb_dims(), arb_dtype()).prop_flat_map(|(dims, dtype)| {
        let count = dims.0 * dims.1 * dims.2;
        (
            proptest::collection::vec(representable(dtype), count),
            (0.1f32..5.0, 0.1f32..5.0, 0.1f32..5.0),
        )
            .prop_map(move |(voxels, spacing)| {
                Volume::with_dtype(dims, spacing, voxels, Modality::Unknown, dtype).unwrap()
            })
    })
}

fn arb_mask(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1usize..=max, 1usize..=max).prop_flat_map(|(w, h)| {
        proptest::collection::vec(0u8..=1, w * h)
            .prop_map(move |bits| BinaryMask::new(w, h, bits).unwrap())
    })
}

proptest! {
    #[test]
    fn nifti_round_trip_bit_identical(volume in arb_volume()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii.gz");
        write_nifti(&volume, &path).unwrap();
        let back = load_nifti_with_modality(&path, Modality::Unknown).unwrap();
        prop_assert_eq!(back.dims(), volume.dims());
        prop_assert_eq!(back.spacing(), volume.spacing());
        let bits: Vec<u64> = volume.voxels().iter().map(|v| v.to_bits()).collect();
        let back_bits: Vec<u64> = back.voxels().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(bits, back_bits);
    }

    #[test]
    fn axial_slices_partition_the_volume(volume in arb_volume()) {
        let (_, _, nz) = volume.dims();
        let slice_sum: f64 = (0..nz)
            .map(|z| volume.axial_slice(z).unwrap().pixels().iter().sum::<f64>())
            .sum();
        let voxel_sum: f64 = volume.voxels().iter().sum();
        let scale = voxel_sum.abs().max(1.0);
        prop_assert!((slice_sum - voxel_sum).abs() <= 1e-9 * scale);
    }

    #[test]
    fn middle_slice_index_is_always_valid(volume in arb_volume()) {
        prop_assert!(volume.axial_slice(volume.middle_slice_index()).is_ok());
    }

    #[test]
    fn normalization_lands_in_unit_interval_and_is_idempotent(
        pixels in proptest::collection::vec(-1e6f64..1e6, 1..64),
    ) {
        let w = pixels.len();
        let slice = ioseg::ingest::SliceImage::new(w, 1, pixels).unwrap();
        let once = normalize_intensity(&slice);
        prop_assert!(once.is_normalized());
        let twice = normalize_intensity(&once);
        for (a, b) in once.pixels().iter().zip(twice.pixels()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn resize_to_own_size_is_identity(
        w in 1usize..12,
        h in 1usize..12,
        seed in any::<u64>(),
    ) {
        let img = RgbImage::from_fn(w, h, |r, c| {
            let x = seed
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add((r * w + c) as u64);
            [(x >> 16) as u8, (x >> 32) as u8, (x >> 48) as u8]
        });
        prop_assert_eq!(resize_image(&img, w, h), img);
    }

    #[test]
    fn mask_resize_never_invents_foreground(mask in arb_mask(12), tw in 1usize..40, th in 1usize..40) {
        let out = resize_binary_mask(&mask, tw, th);
        prop_assert_eq!((out.width(), out.height()), (tw, th));
        if mask.is_empty() {
            prop_assert!(out.is_empty());
        }
        if mask.foreground_count() == mask.width() * mask.height() {
            prop_assert_eq!(out.foreground_count(), tw * th);
        }
    }

    #[test]
    fn dice_symmetry_range_and_identity(a in arb_mask(12), b in arb_mask(12)) {
        prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
        if a.width() == b.width() && a.height() == b.height() {
            let ab = dice(&a, &b).unwrap();
            prop_assert_eq!(ab, dice(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn foreground_stays_inside_bbox_and_center_inside_box(mask in arb_mask(16)) {
        prop_assume!(!mask.is_empty());
        let bbox = bbox_from_mask(&mask).unwrap();
        for (r, c) in mask.foreground() {
            prop_assert!(bbox.contains(r, c));
        }
        let center = bbox_center(&bbox);
        prop_assert!(bbox.contains(center.row, center.col));
    }

    #[test]
    fn largest_component_bbox_nested_in_mask_bbox(mask in arb_mask(16)) {
        prop_assume!(!mask.is_empty());
        let outer = bbox_from_mask(&mask).unwrap();
        let inner = bbox_from_mask(&largest_component(&mask).unwrap()).unwrap();
        prop_assert!(inner.row_min >= outer.row_min && inner.col_min >= outer.col_min);
        prop_assert!(inner.row_max <= outer.row_max && inner.col_max <= outer.col_max);
    }

    #[test]
    fn iou_symmetric_bounded_and_reflexive(
        a in (0usize..16, 0usize..16, 0usize..8, 0usize..8),
        b in (0usize..16, 0usize..16, 0usize..8, 0usize..8),
    ) {
        let make = |(r, c, dr, dc): (usize, usize, usize, usize)| {
            BBox::new(r, c, r + dr, c + dc).unwrap()
        };
        let (a, b) = (make(a), make(b));
        prop_assert_eq!(bbox_iou(&a, &a), 1.0);
        let ab = bbox_iou(&a, &b);
        prop_assert_eq!(ab, bbox_iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn threshold_matches_per_pixel_rule(
        probs in proptest::collection::vec(0.0f64..=1.0, 1..64),
        threshold in 0.01f64..0.99,
    ) {
        let w = probs.len();
        let pm = ProbabilityMask::new(w, 1, probs.clone()).unwrap();
        let mask = threshold_mask(&pm, threshold).unwrap();
        for (bit, p) in mask.bits().iter().zip(&probs) {
            prop_assert_eq!(*bit == 1, *p >= threshold);
        }
    }
}
