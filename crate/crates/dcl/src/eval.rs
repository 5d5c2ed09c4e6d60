//! Detection evaluation: binary masks from value images, IOU, pooled
//! pixel-level ROC curves with trapezoid AUC, weighted Youden threshold
//! selection, local-maxima bounding boxes with non-maximum suppression,
//! greedy-action flow fields, and the change-concentration statistics with a
//! Wilcoxon signed-rank test.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::action::ACTION_COUNT;
use crate::acdqn::greedy_actions;
use crate::error::{DclError, Result};
use crate::reward::max_channel;
use crate::tensor::{Map2, Scalar, Tensor3};

/// Binary h×w mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![false; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline(always)]
    pub fn at(&self, i: usize, j: usize) -> bool {
        self.data[i * self.width + j]
    }

    #[inline(always)]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.width + j] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Chebyshev dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Mask {
        let r = radius as isize;
        Mask::from_fn(self.height, self.width, |i, j| {
            let i0 = (i as isize - r).max(0) as usize;
            let i1 = (i as isize + r).min(self.height as isize - 1) as usize;
            let j0 = (j as isize - r).max(0) as usize;
            let j1 = (j as isize + r).min(self.width as isize - 1) as usize;
            for ii in i0..=i1 {
                for jj in j0..=j1 {
                    if self.at(ii, jj) {
                        return true;
                    }
                }
            }
            false
        })
    }
}

/// `mask[i,j] = V[i,j] ≥ t`.
pub fn threshold_mask<T: Scalar>(values: &Map2<T>, t: f64) -> Mask {
    Mask::from_fn(values.height(), values.width(), |i, j| values.at(i, j).f64() >= t)
}

/// Intersection over union; defined as 1 when both masks are empty.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(DclError::ShapeMismatch("IOU masks".into()));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// One operating point of a ROC curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Pixel-level ROC pooled over all frames, one point per threshold, plus the
/// trapezoid AUC over the FPR-sorted points augmented with (0,0) and (1,1).
///
/// Errors when the pooled truth has no positives or no negatives.
pub fn roc_curve<T: Scalar>(
    values: &[Map2<T>],
    truth: &[Mask],
    thresholds: &[f64],
) -> Result<(Vec<RocPoint>, f64)> {
    if values.len() != truth.len() || values.is_empty() {
        return Err(DclError::Eval(format!(
            "{} value maps vs {} truth masks",
            values.len(),
            truth.len()
        )));
    }
    for (v, t) in values.iter().zip(truth) {
        if (v.height(), v.width()) != (t.height(), t.width()) {
            return Err(DclError::ShapeMismatch("value map vs truth mask".into()));
        }
    }
    let positives: usize = truth.iter().map(Mask::count).sum();
    let total: usize = truth.iter().map(|m| m.height() * m.width()).sum();
    let negatives = total - positives;
    if positives == 0 {
        return Err(DclError::Eval("truth masks contain no positive pixels".into()));
    }
    if negatives == 0 {
        return Err(DclError::Eval("truth masks contain no negative pixels".into()));
    }

    let mut points = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (v, m) in values.iter().zip(truth) {
            for (val, &is_pos) in v.data().iter().zip(m.data()) {
                if val.f64() >= t {
                    if is_pos {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
        }
        points.push(RocPoint {
            threshold: t,
            tpr: tp as f64 / positives as f64,
            fpr: fp as f64 / negatives as f64,
        });
    }

    let auc = auc_trapezoid(&points);
    Ok((points, auc))
}

/// Trapezoid area under the (FPR, TPR) points augmented with (0,0) and (1,1).
pub fn auc_trapezoid(points: &[RocPoint]) -> f64 {
    let mut xy: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    xy.push((0.0, 0.0));
    xy.push((1.0, 1.0));
    xy.sort_by(|a, b| a.partial_cmp(b).expect("rates are finite"));
    let mut auc = 0.0;
    for pair in xy.windows(2) {
        let (x0, y0) = pair[0];
        let (x1, y1) = pair[1];
        auc += (x1 - x0) * (y0 + y1) * 0.5;
    }
    auc
}

/// Weighted Youden index `w_tpr·TPR − w_fpr·FPR`.
pub fn youden(tpr: f64, fpr: f64, w_tpr: f64, w_fpr: f64) -> f64 {
    w_tpr * tpr - w_fpr * fpr
}

/// Operating point maximizing the weighted Youden index; ties resolve to the
/// lower threshold.
pub fn pick_threshold(points: &[RocPoint], w_tpr: f64, w_fpr: f64) -> Option<RocPoint> {
    points
        .iter()
        .copied()
        .max_by(|a, b| {
            let ja = youden(a.tpr, a.fpr, w_tpr, w_fpr);
            let jb = youden(b.tpr, b.fpr, w_tpr, w_fpr);
            ja.partial_cmp(&jb)
                .expect("indices are finite")
                .then(b.threshold.partial_cmp(&a.threshold).expect("thresholds are finite"))
        })
}

/// `count` evenly spaced thresholds across `[lo, hi]`.
pub fn grid_thresholds(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 {
        return vec![lo];
    }
    (0..count).map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64).collect()
}

/// Data-driven thresholds: `count` evenly spaced order statistics of the
/// pooled values, deduplicated. Using exact data values keeps the ROC (and
/// its AUC) invariant under any strictly increasing transform of the scores.
pub fn quantile_thresholds<T: Scalar>(values: &[Map2<T>], count: usize) -> Vec<f64> {
    let mut pool: Vec<f64> = values.iter().flat_map(|m| m.data().iter().map(|v| v.f64())).collect();
    if pool.is_empty() || count == 0 {
        return Vec::new();
    }
    pool.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let n = pool.len();
    let mut out = Vec::with_capacity(count);
    for k in 0..count.max(2) {
        let idx = k * (n - 1) / (count.max(2) - 1);
        out.push(pool[idx]);
    }
    out.dedup();
    out
}

/// Axis-aligned detection box in original-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub center_row: usize,
    pub center_col: usize,
    pub height: usize,
    pub width: usize,
}

impl BoundingBox {
    pub fn top(&self) -> usize {
        self.center_row - self.height / 2
    }

    pub fn left(&self) -> usize {
        self.center_col - self.width / 2
    }
}

fn clipped_box(center: (isize, isize), size: (isize, isize), bounds: (usize, usize)) -> BoundingBox {
    let top = (center.0 - size.0 / 2).max(0);
    let left = (center.1 - size.1 / 2).max(0);
    let bottom = (center.0 - size.0 / 2 + size.0).min(bounds.0 as isize);
    let right = (center.1 - size.1 / 2 + size.1).min(bounds.1 as isize);
    let h = (bottom - top).max(0) as usize;
    let w = (right - left).max(0) as usize;
    BoundingBox {
        center_row: top as usize + h / 2,
        center_col: left as usize + w / 2,
        height: h,
        width: w,
    }
}

/// Plateau-aware local maxima: connected components (8-connectivity) of
/// equal value with no strictly greater neighbor, represented by their
/// lexicographically first pixel. Returned as (row, col, value).
fn local_maxima<T: Scalar>(values: &Map2<T>) -> Vec<(usize, usize, f64)> {
    let (h, w) = (values.height(), values.width());
    let mut visited = vec![false; h * w];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if visited[start] {
            continue;
        }
        let v = values.data()[start].f64();
        // flood the equal-value component
        stack.clear();
        stack.push(start);
        visited[start] = true;
        let mut component = vec![start];
        let mut is_max = true;
        while let Some(px) = stack.pop() {
            let (i, j) = (px / w, px % w);
            for di in -1isize..=1 {
                for dj in -1isize..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (ii, jj) = (i as isize + di, j as isize + dj);
                    if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                        continue;
                    }
                    let q = ii as usize * w + jj as usize;
                    let qv = values.data()[q].f64();
                    if qv > v {
                        is_max = false;
                    } else if qv == v && !visited[q] {
                        visited[q] = true;
                        component.push(q);
                        stack.push(q);
                    }
                }
            }
        }
        if is_max {
            let first = *component.iter().min().expect("non-empty component");
            out.push((first / w, first % w, v));
        }
    }
    out
}

/// Non-maximum-suppressed peaks: local maxima taken greedily in descending
/// value, discarding any peak within Chebyshev distance `min_dist` of an
/// already accepted one. Accepted peaks are pairwise more than `min_dist`
/// apart in model coordinates.
pub fn suppressed_peaks<T: Scalar>(values: &Map2<T>, min_dist: usize) -> Vec<(usize, usize)> {
    let mut peaks = local_maxima(values);
    peaks.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .expect("finite values")
            .then((a.0, a.1).cmp(&(b.0, b.1)))
    });

    let mut accepted: Vec<(usize, usize)> = Vec::new();
    for &(i, j, _) in &peaks {
        let clash = accepted.iter().any(|&(ai, aj)| {
            let cheb = ((i as isize - ai as isize).abs()).max((j as isize - aj as isize).abs());
            cheb <= min_dist as isize
        });
        if !clash {
            accepted.push((i, j));
        }
    }
    accepted
}

/// Local-maxima detection boxes.
///
/// [`suppressed_peaks`] picks the peaks; each becomes a
/// `box_size`×`box_size` box at model resolution, center-scaled to
/// `(orig_h, orig_w)` with rounding and clipped to the image. Clipping can
/// move a border box's center, so the `min_dist` separation guarantee holds
/// for the model-coordinate peaks, not the clipped centers.
pub fn local_maxima_boxes<T: Scalar>(
    values: &Map2<T>,
    min_dist: usize,
    box_size: usize,
    orig_h: usize,
    orig_w: usize,
) -> Vec<BoundingBox> {
    let (h, w) = (values.height(), values.width());
    let sy = orig_h as f64 / h as f64;
    let sx = orig_w as f64 / w as f64;
    let bh = (box_size as f64 * sy).round() as isize;
    let bw = (box_size as f64 * sx).round() as isize;
    suppressed_peaks(values, min_dist)
        .into_iter()
        .map(|(i, j)| {
            let cy = (i as f64 * sy).round() as isize;
            let cx = (j as f64 * sx).round() as isize;
            clipped_box((cy, cx), (bh, bw), (orig_h, orig_w))
        })
        .collect()
}

/// Per-pixel displacement field of the greedy actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowField {
    height: usize,
    width: usize,
    vectors: Vec<(isize, isize)>,
}

impl FlowField {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn at(&self, i: usize, j: usize) -> (isize, isize) {
        self.vectors[i * self.width + j]
    }

    pub fn vectors(&self) -> &[(isize, isize)] {
        &self.vectors
    }
}

/// Map the greedy action at every pixel to its displacement vector.
pub fn flow_field<T: Scalar>(q: &Tensor3<T>, k: isize) -> FlowField {
    assert_eq!(q.channels(), ACTION_COUNT);
    let actions = greedy_actions(q);
    let (h, w) = q.spatial_shape();
    let mut vectors = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            vectors.push(actions.at(i, j).displacement(k));
        }
    }
    FlowField { height: h, width: w, vectors }
}

/// Mean squared max-channel frame difference inside vs outside a region mask,
/// one `(mean_in, mean_out)` pair per frame pair.
pub fn change_concentration<T: Scalar>(
    pairs: &[(&Tensor3<T>, &Tensor3<T>)],
    regions: &[Mask],
) -> Result<Vec<(f64, f64)>> {
    if pairs.len() != regions.len() {
        return Err(DclError::Eval(format!(
            "{} frame pairs vs {} region masks",
            pairs.len(),
            regions.len()
        )));
    }
    let mut out = Vec::with_capacity(pairs.len());
    for ((a, b), region) in pairs.iter().zip(regions) {
        if !a.same_shape(b) || (a.height(), a.width()) != (region.height(), region.width()) {
            return Err(DclError::ShapeMismatch("frame pair vs region mask".into()));
        }
        let ma = max_channel(a);
        let mb = max_channel(b);
        let mut sum_in = 0.0f64;
        let mut n_in = 0usize;
        let mut sum_out = 0.0f64;
        let mut n_out = 0usize;
        for ((&x, &y), &inside) in ma.data().iter().zip(mb.data()).zip(region.data()) {
            let d = x.f64() - y.f64();
            let d2 = d * d;
            if inside {
                sum_in += d2;
                n_in += 1;
            } else {
                sum_out += d2;
                n_out += 1;
            }
        }
        if n_in == 0 || n_out == 0 {
            return Err(DclError::Eval("region mask must split the frame in two".into()));
        }
        out.push((sum_in / n_in as f64, sum_out / n_out as f64));
    }
    Ok(out)
}

/// Result of the one-sided Wilcoxon signed-rank test.
#[derive(Debug, Clone, Copy)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    /// Normal approximation `z = (W+ − n(n+1)/4) / √(n(n+1)(2n+1)/24)`.
    pub z: f64,
    /// One-sided p-value for "first sample exceeds second".
    pub p_one_sided: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n_used: usize,
}

/// One-sided Wilcoxon signed-rank test on paired samples. Ties get midranks,
/// zero differences are dropped, and the test errors if every difference is
/// zero or fewer than 6 pairs are supplied.
pub fn wilcoxon_signed_rank(samples: &[(f64, f64)]) -> Result<WilcoxonResult> {
    if samples.len() < 6 {
        return Err(DclError::Eval(format!(
            "signed-rank test needs at least 6 pairs, got {}",
            samples.len()
        )));
    }
    let mut diffs: Vec<f64> =
        samples.iter().map(|&(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() {
        return Err(DclError::Eval("all paired differences are zero".into()));
    }
    diffs.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).expect("finite differences"));

    let n = diffs.len();
    let mut ranks = vec![0.0f64; n];
    let mut idx = 0usize;
    while idx < n {
        let mut end = idx;
        while end + 1 < n && diffs[end + 1].abs() == diffs[idx].abs() {
            end += 1;
        }
        // midrank for the tie group [idx, end]
        let rank = (idx + end) as f64 / 2.0 + 1.0;
        for r in ranks.iter_mut().take(end + 1).skip(idx) {
            *r = rank;
        }
        idx = end + 1;
    }

    let w_plus: f64 =
        diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| *r).sum();
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
    let z = (w_plus - mean) / var.sqrt();
    let p_one_sided = 0.5 * libm::erfc(z / std::f64::consts::SQRT_2);
    Ok(WilcoxonResult { w_plus, z, p_one_sided, n_used: n })
}

/// `threshold,tpr,fpr` per line, with the AUC in a trailing comment line.
pub fn write_roc_csv(path: &Path, points: &[RocPoint], auc: f64) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "threshold,tpr,fpr")?;
    for p in points {
        writeln!(f, "{},{},{}", p.threshold, p.tpr, p.fpr)?;
    }
    writeln!(f, "# auc,{auc}")?;
    Ok(())
}

/// `cx,cy,h,w` per line (x = column, y = row).
pub fn write_boxes_csv(path: &Path, boxes: &[BoundingBox]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "cx,cy,h,w")?;
    for b in boxes {
        writeln!(f, "{},{},{},{}", b.center_col, b.center_row, b.height, b.width)?;
    }
    Ok(())
}

/// `i,j,di,dj` per line.
pub fn write_flow_csv(path: &Path, flow: &FlowField) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "i,j,di,dj")?;
    for i in 0..flow.height() {
        for j in 0..flow.width() {
            let (di, dj) = flow.at(i, j);
            writeln!(f, "{i},{j},{di},{dj}")?;
        }
    }
    Ok(())
}
