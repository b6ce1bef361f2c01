//! Binary mask algebra.
//!
//! Masks are stored as row-major run-length encodings. The first count is
//! always a background run (possibly zero), after which runs alternate
//! foreground/background. This layout is shared by masklet files and the
//! backend wire protocol, so it must stay bit-exact:
//!
//! ```text
//! 1x5 row [0,0,1,1,0]  ->  counts [2,2,1]
//! all-zero 2x2         ->  counts [4]
//! all-one 2x2          ->  counts [0,4]
//! ```
//!
//! Area and IoU are computed directly on the runs without decoding.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default threshold used when a backend returns a soft mask.
pub const DEFAULT_BINARIZE_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MaskError {
    #[error("corrupt RLE: {0}")]
    CorruptRle(String),
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("invalid probability mask: {0}")]
    InvalidProb(String),
}

/// Dense binary grid, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl Bitmap {
    pub fn new(width: u32, height: u32, data: Vec<bool>) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::CorruptRle("empty grid".into()));
        }
        if data.len() != width as usize * height as usize {
            return Err(MaskError::CorruptRle(format!(
                "grid has {} cells, expected {}",
                data.len(),
                width as usize * height as usize
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn pixels(&self) -> &[bool] {
        &self.data
    }

    pub fn count_ones(&self) -> u64 {
        self.data.iter().filter(|&&b| b).count() as u64
    }
}

/// Soft mask as emitted by some segmentation backends.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMask {
    width: u32,
    height: u32,
    values: Vec<f32>,
}

impl ProbMask {
    pub fn new(width: u32, height: u32, values: Vec<f32>) -> Result<Self, MaskError> {
        if values.len() != width as usize * height as usize {
            return Err(MaskError::InvalidProb(format!(
                "{} values for a {width}x{height} grid",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(MaskError::InvalidProb(format!("value {v} outside [0,1]")));
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRle {
    width: u32,
    height: u32,
    counts: Vec<u64>,
}

impl TryFrom<RawRle> for RleMask {
    type Error = MaskError;

    fn try_from(raw: RawRle) -> Result<Self, MaskError> {
        RleMask::from_counts(raw.width, raw.height, raw.counts)
    }
}

/// Run-length encoded binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawRle")]
pub struct RleMask {
    width: u32,
    height: u32,
    counts: Vec<u64>,
}

impl RleMask {
    /// Builds a mask from raw counts, rejecting anything that violates the
    /// layout invariants.
    pub fn from_counts(width: u32, height: u32, counts: Vec<u64>) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::CorruptRle(format!("zero dimension {width}x{height}")));
        }
        if counts.is_empty() {
            return Err(MaskError::CorruptRle("no runs".into()));
        }
        if let Some(i) = counts.iter().skip(1).position(|&c| c == 0) {
            return Err(MaskError::CorruptRle(format!("zero-length run at index {}", i + 1)));
        }
        let total: u64 = counts.iter().sum();
        let expected = width as u64 * height as u64;
        if total != expected {
            return Err(MaskError::CorruptRle(format!(
                "counts sum to {total}, expected {expected}"
            )));
        }
        Ok(Self { width, height, counts })
    }

    /// All-background mask.
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            counts: vec![width as u64 * height as u64],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.len() == 1
    }

    /// Foreground runs as half-open `[start, end)` pixel offsets.
    fn foreground_runs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        let mut pos = 0u64;
        self.counts.iter().enumerate().filter_map(move |(i, &c)| {
            let start = pos;
            pos += c;
            (i % 2 == 1).then_some((start, pos))
        })
    }
}

pub fn rle_encode(bitmap: &Bitmap) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for &px in bitmap.pixels() {
        if px == current {
            run += 1;
        } else {
            counts.push(run);
            current = px;
            run = 1;
        }
    }
    counts.push(run);
    RleMask {
        width: bitmap.width,
        height: bitmap.height,
        counts,
    }
}

pub fn rle_decode(mask: &RleMask) -> Bitmap {
    let mut data = Vec::with_capacity(mask.width as usize * mask.height as usize);
    for (i, &c) in mask.counts.iter().enumerate() {
        data.extend(std::iter::repeat_n(i % 2 == 1, c as usize));
    }
    Bitmap {
        width: mask.width,
        height: mask.height,
        data,
    }
}

/// Number of foreground pixels, from run arithmetic alone.
pub fn area(mask: &RleMask) -> u64 {
    mask.counts.iter().skip(1).step_by(2).sum()
}

fn check_dims(a: &RleMask, b: &RleMask) -> Result<(), MaskError> {
    if a.dims() != b.dims() {
        return Err(MaskError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

/// Size of the intersection, merging the two run lists.
pub fn intersection_area(a: &RleMask, b: &RleMask) -> Result<u64, MaskError> {
    check_dims(a, b)?;
    let mut total = 0u64;
    let mut ra = a.foreground_runs().peekable();
    let mut rb = b.foreground_runs().peekable();
    while let (Some(&(sa, ea)), Some(&(sb, eb))) = (ra.peek(), rb.peek()) {
        let lo = sa.max(sb);
        let hi = ea.min(eb);
        if hi > lo {
            total += hi - lo;
        }
        if ea <= eb {
            ra.next();
        } else {
            rb.next();
        }
    }
    Ok(total)
}

/// Intersection-over-union. Two empty masks are identical, so their IoU is 1.
pub fn iou(a: &RleMask, b: &RleMask) -> Result<f64, MaskError> {
    let inter = intersection_area(a, b)?;
    let union = area(a) + area(b) - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Foreground wherever `value >= threshold`.
pub fn binarize(prob: &ProbMask, threshold: f32) -> RleMask {
    let bitmap = Bitmap {
        width: prob.width,
        height: prob.height,
        data: prob.values.iter().map(|&v| v >= threshold).collect(),
    };
    rle_encode(&bitmap)
}

/// Nearest-neighbour resampling to a new grid size.
pub fn resample_nearest(mask: &RleMask, width: u32, height: u32) -> RleMask {
    if mask.dims() == (width, height) {
        return mask.clone();
    }
    if mask.is_empty() {
        return RleMask::empty(width, height);
    }
    let src = rle_decode(mask);
    let (sw, sh) = (mask.width as u64, mask.height as u64);
    let dst = Bitmap::from_fn(width, height, |x, y| {
        let sx = (x as u64 * sw / width as u64) as u32;
        let sy = (y as u64 * sh / height as u64) as u32;
        src.get(sx, sy)
    });
    rle_encode(&dst)
}

/// Pixel-wise union of two same-sized masks.
pub fn union(a: &RleMask, b: &RleMask) -> Result<RleMask, MaskError> {
    check_dims(a, b)?;
    let (da, db) = (rle_decode(a), rle_decode(b));
    let data = da.data.iter().zip(&db.data).map(|(x, y)| *x || *y).collect();
    Ok(rle_encode(&Bitmap {
        width: a.width,
        height: a.height,
        data,
    }))
}

/// Pixel-wise `a AND NOT b`.
pub fn difference(a: &RleMask, b: &RleMask) -> Result<RleMask, MaskError> {
    check_dims(a, b)?;
    let (da, db) = (rle_decode(a), rle_decode(b));
    let data = da.data.iter().zip(&db.data).map(|(x, y)| *x && !*y).collect();
    Ok(rle_encode(&Bitmap {
        width: a.width,
        height: a.height,
        data,
    }))
}

/// Axis-aligned filled rectangle `[x0, x1) x [y0, y1)`, clipped to the grid.
pub fn rect_mask(width: u32, height: u32, x0: i64, y0: i64, x1: i64, y1: i64) -> RleMask {
    let bm = Bitmap::from_fn(width, height, |x, y| {
        let (x, y) = (x as i64, y as i64);
        x >= x0 && x < x1 && y >= y0 && y < y1
    });
    rle_encode(&bm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(bits: &[u8]) -> Bitmap {
        Bitmap::new(bits.len() as u32, 1, bits.iter().map(|&b| b == 1).collect()).unwrap()
    }

    #[test]
    fn encode_fixtures() {
        assert_eq!(rle_encode(&row(&[0, 0, 1, 1, 0])).counts(), &[2, 2, 1]);
        assert_eq!(rle_encode(&Bitmap::zeros(2, 2)).counts(), &[4]);
        let ones = Bitmap::new(2, 2, vec![true; 4]).unwrap();
        assert_eq!(rle_encode(&ones).counts(), &[0, 4]);
    }

    #[test]
    fn decode_fixture() {
        let m = RleMask::from_counts(5, 1, vec![2, 2, 1]).unwrap();
        assert_eq!(rle_decode(&m), row(&[0, 0, 1, 1, 0]));
    }

    #[test]
    fn corrupt_counts_rejected() {
        assert!(matches!(
            RleMask::from_counts(2, 2, vec![3]),
            Err(MaskError::CorruptRle(_))
        ));
        assert!(matches!(
            RleMask::from_counts(2, 2, vec![2, 0, 2]),
            Err(MaskError::CorruptRle(_))
        ));
        let json = r#"{"width":2,"height":2,"counts":[1,1]}"#;
        assert!(serde_json::from_str::<RleMask>(json).is_err());
    }

    #[test]
    fn area_fixtures() {
        assert_eq!(area(&RleMask::empty(2, 2)), 0);
        assert_eq!(area(&RleMask::from_counts(5, 1, vec![2, 2, 1]).unwrap()), 2);
    }

    #[test]
    fn iou_fixtures() {
        let a = rect_mask(20, 20, 0, 0, 10, 10);
        let b = rect_mask(20, 20, 5, 0, 15, 10);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &rect_mask(20, 20, 10, 10, 20, 20)).unwrap(), 0.0);
        // overlap strip 5x10 = 50, union 150
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou(&RleMask::empty(3, 3), &RleMask::empty(3, 3)).unwrap(), 1.0);
        assert!(matches!(
            iou(&a, &RleMask::empty(3, 3)),
            Err(MaskError::DimensionMismatch(..))
        ));
    }

    #[test]
    fn binarize_fixtures() {
        let hi = ProbMask::new(3, 2, vec![0.6; 6]).unwrap();
        let lo = ProbMask::new(3, 2, vec![0.4; 6]).unwrap();
        assert_eq!(area(&binarize(&hi, 0.5)), 6);
        assert_eq!(area(&binarize(&lo, 0.5)), 0);
        let edge = ProbMask::new(2, 1, vec![0.5, 0.49]).unwrap();
        assert_eq!(rle_decode(&binarize(&edge, 0.5)).pixels(), &[true, false]);
        assert!(ProbMask::new(1, 1, vec![1.5]).is_err());
    }

    #[test]
    fn resample_integer_roundtrip() {
        let m = rect_mask(8, 6, 1, 2, 5, 4);
        let up = resample_nearest(&m, 32, 12);
        assert_eq!(area(&up), area(&m) * 8);
        assert_eq!(resample_nearest(&up, 8, 6), m);
    }

    fn bitmap_strategy(max: u32) -> impl Strategy<Value = Bitmap> {
        (1..=max, 1..=max).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), (w * h) as usize)
                .prop_map(move |d| Bitmap::new(w, h, d).unwrap())
        })
    }

    fn pair_strategy(max: u32) -> impl Strategy<Value = (Bitmap, Bitmap)> {
        (1..=max, 1..=max).prop_flat_map(|(w, h)| {
            let n = (w * h) as usize;
            (
                proptest::collection::vec(any::<bool>(), n),
                proptest::collection::vec(any::<bool>(), n),
            )
                .prop_map(move |(a, b)| (Bitmap::new(w, h, a).unwrap(), Bitmap::new(w, h, b).unwrap()))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn roundtrip(bm in bitmap_strategy(16)) {
            let enc = rle_encode(&bm);
            prop_assert!(RleMask::from_counts(enc.width(), enc.height(), enc.counts().to_vec()).is_ok());
            prop_assert_eq!(rle_decode(&enc), bm);
        }

        #[test]
        fn area_matches_pixel_count(bm in bitmap_strategy(16)) {
            prop_assert_eq!(area(&rle_encode(&bm)), bm.count_ones());
        }

        #[test]
        fn iou_matches_pixels((a, b) in pair_strategy(12)) {
            let inter = a.pixels().iter().zip(b.pixels()).filter(|(x, y)| **x && **y).count();
            let uni = a.pixels().iter().zip(b.pixels()).filter(|(x, y)| **x || **y).count();
            let expected = if uni == 0 { 1.0 } else { inter as f64 / uni as f64 };
            let (ea, eb) = (rle_encode(&a), rle_encode(&b));
            prop_assert_eq!(iou(&ea, &eb).unwrap(), expected);
            prop_assert_eq!(iou(&ea, &eb).unwrap(), iou(&eb, &ea).unwrap());
        }

        #[test]
        fn subset_iou_is_area_ratio((a, b) in pair_strategy(12)) {
            let sub = rle_encode(&Bitmap::new(a.width(), a.height(),
                a.pixels().iter().zip(b.pixels()).map(|(x, y)| *x && *y).collect()).unwrap());
            let sup = rle_encode(&b);
            prop_assume!(area(&sup) > 0);
            prop_assert_eq!(iou(&sub, &sup).unwrap(), area(&sub) as f64 / area(&sup) as f64);
        }
    }
}
