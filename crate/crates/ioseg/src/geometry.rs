//! Bounding boxes, prompt points, and connected-component analysis.
//!
//! All coordinates are (row, col) with row 0 at the top of the image;
//! box bounds are inclusive. Conversions to the (x, y) convention used by
//! detection models happen only at backend boundaries.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::preprocess::BinaryMask;

/// Axis-aligned box with inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub row_min: usize,
    pub col_min: usize,
    pub row_max: usize,
    pub col_max: usize,
}

impl BBox {
    pub fn new(row_min: usize, col_min: usize, row_max: usize, col_max: usize) -> Result<BBox> {
        if row_min > row_max || col_min > col_max {
            return Err(Error::GeometryError(format!(
                "invalid box bounds: rows {row_min}..={row_max}, cols {col_min}..={col_max}"
            )));
        }
        Ok(BBox {
            row_min,
            col_min,
            row_max,
            col_max,
        })
    }

    /// Pixel count, bounds inclusive.
    pub fn area(&self) -> usize {
        (self.row_max - self.row_min + 1) * (self.col_max - self.col_min + 1)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_min..=self.row_max).contains(&row) && (self.col_min..=self.col_max).contains(&col)
    }

    /// True when the box lies within a `width` x `height` image.
    pub fn in_bounds(&self, width: usize, height: usize) -> bool {
        self.row_max < height && self.col_max < width
    }

    /// Report serialization order: `[row_min, col_min, row_max, col_max]`.
    pub fn as_array(&self) -> [usize; 4] {
        [self.row_min, self.col_min, self.row_max, self.col_max]
    }
}

/// A single positive (foreground) point prompt for a segmenter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PromptPoint {
    pub row: usize,
    pub col: usize,
}

/// Tight inclusive bounds over all foreground pixels.
pub fn bbox_from_mask(mask: &BinaryMask) -> Result<BBox> {
    let mut bounds: Option<(usize, usize, usize, usize)> = None;
    for (row, col) in mask.foreground() {
        bounds = Some(match bounds {
            None => (row, col, row, col),
            Some((rmin, cmin, rmax, cmax)) => {
                (rmin.min(row), cmin.min(col), rmax.max(row), cmax.max(col))
            }
        });
    }
    let (row_min, col_min, row_max, col_max) = bounds.ok_or(Error::EmptyMask)?;
    BBox::new(row_min, col_min, row_max, col_max)
}

/// Center of a box under the floor rule:
/// `(floor((row_min + row_max) / 2), floor((col_min + col_max) / 2))`.
/// The result always lies inside the box.
pub fn bbox_center(b: &BBox) -> PromptPoint {
    PromptPoint {
        row: (b.row_min + b.row_max) / 2,
        col: (b.col_min + b.col_max) / 2,
    }
}

/// Label 4-connected foreground components; returns one component id per
/// pixel (0 = background) plus the number of components.
fn label_components(mask: &BinaryMask) -> (Vec<u32>, u32) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start_row in 0..h {
        for start_col in 0..w {
            if !mask.get(start_row, start_col) || labels[start_row * w + start_col] != 0 {
                continue;
            }
            next += 1;
            labels[start_row * w + start_col] = next;
            queue.push_back((start_row, start_col));
            while let Some((row, col)) = queue.pop_front() {
                let neighbors = [
                    (row.wrapping_sub(1), col),
                    (row + 1, col),
                    (row, col.wrapping_sub(1)),
                    (row, col + 1),
                ];
                for (nr, nc) in neighbors {
                    if nr < h && nc < w && mask.get(nr, nc) && labels[nr * w + nc] == 0 {
                        labels[nr * w + nc] = next;
                        queue.push_back((nr, nc));
                    }
                }
            }
        }
    }
    (labels, next)
}

/// Restrict the foreground to its largest 4-connected component.
///
/// Size ties are broken by the smallest (row_min, col_min) of the
/// component's bounding box, compared lexicographically.
pub fn largest_component(mask: &BinaryMask) -> Result<BinaryMask> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (w, _h) = (mask.width(), mask.height());
    let (labels, count) = label_components(mask);

    // Per-component pixel count and bbox origin.
    let mut sizes = vec![0usize; count as usize + 1];
    let mut origins = vec![(usize::MAX, usize::MAX); count as usize + 1];
    for (i, &label) in labels.iter().enumerate() {
        if label == 0 {
            continue;
        }
        let (row, col) = (i / w, i % w);
        sizes[label as usize] += 1;
        let origin = &mut origins[label as usize];
        origin.0 = origin.0.min(row);
        origin.1 = origin.1.min(col);
    }

    let mut best = 1usize;
    for candidate in 2..=count as usize {
        let larger = sizes[candidate] > sizes[best];
        let tie_earlier = sizes[candidate] == sizes[best] && origins[candidate] < origins[best];
        if larger || tie_earlier {
            best = candidate;
        }
    }

    let bits = labels
        .iter()
        .map(|&l| (l as usize == best) as u8)
        .collect();
    BinaryMask::new(mask.width(), mask.height(), bits)
}

/// Intersection over union with inclusive pixel counts.
pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let row_min = a.row_min.max(b.row_min);
    let col_min = a.col_min.max(b.col_min);
    let row_max = a.row_max.min(b.row_max);
    let col_max = a.col_max.min(b.col_max);
    let intersection = if row_min <= row_max && col_min <= col_max {
        (row_max - row_min + 1) * (col_max - col_min + 1)
    } else {
        0
    };
    let union = a.area() + b.area() - intersection;
    intersection as f64 / union as f64
}
