//! Masks turned into stereo search restrictions.

use crate::image::Mask;
use crate::stereo::DisparityRange;

/// Square (chessboard) dilation by `radius` pixels.
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let horizontal = Mask::from_fn(w, h, |x, y| {
        (x.saturating_sub(radius)..=(x + radius).min(w - 1)).any(|xx| mask.get(xx, y))
    });
    Mask::from_fn(w, h, |x, y| {
        (y.saturating_sub(radius)..=(y + radius).min(h - 1)).any(|yy| horizontal.get(x, yy))
    })
}

/// Per-row half-open column intervals plus the largest disparity any
/// constrained pixel can take (a left pixel at column `x` matches at most
/// `x` columns to its left).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SearchConstraints {
    pub width: usize,
    pub height: usize,
    pub rows: Vec<Vec<(usize, usize)>>,
    pub max_disparity: Option<usize>,
}

impl SearchConstraints {
    pub fn full(width: usize, height: usize) -> Self {
        mask_to_search_constraints(&Mask::new(width, height, true), 0)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|r| r.is_empty())
    }

    pub fn pixel_count(&self) -> usize {
        self.rows.iter().flatten().map(|(a, b)| b - a).sum()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        self.rows.get(y).is_some_and(|r| r.iter().any(|&(a, b)| a <= x && x < b))
    }

    pub fn to_mask(&self) -> Mask {
        let mut m = Mask::new(self.width, self.height, false);
        for (y, row) in self.rows.iter().enumerate() {
            for &(a, b) in row {
                (a..b).for_each(|x| m.set(x, y, true));
            }
        }
        m
    }

    /// Every constrained pixel of `self` is also constrained in `other`.
    pub fn is_subset_of(&self, other: &SearchConstraints) -> bool {
        self.rows.iter().enumerate().all(|(y, row)| row.iter().all(|&(a, b)| (a..b).all(|x| other.contains(x, y))))
    }

    /// Narrows `range` to what the constrained pixels can reach; `None`
    /// when nothing remains.
    pub fn clip(&self, range: DisparityRange) -> Option<DisparityRange> {
        let max = range.max.min(self.max_disparity?);
        DisparityRange::new(range.min, max).ok()
    }
}

pub fn mask_to_search_constraints(mask: &Mask, dilation: usize) -> SearchConstraints {
    let d = dilate(mask, dilation);
    let (w, h) = d.dims();
    let mut rows = Vec::with_capacity(h);
    let mut max_x: Option<usize> = None;
    for y in 0..h {
        let mut row = Vec::new();
        let mut x = 0;
        while x < w {
            if d.get(x, y) {
                let start = x;
                while x < w && d.get(x, y) {
                    x += 1;
                }
                row.push((start, x));
                max_x = Some(max_x.map_or(x - 1, |m| m.max(x - 1)));
            } else {
                x += 1;
            }
        }
        rows.push(row);
    }
    SearchConstraints { width: w, height: h, rows, max_disparity: max_x }
}
