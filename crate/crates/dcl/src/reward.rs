//! Intrinsic reward image: per-pixel squared difference of the max color
//! channel between the predicted and the actual next frame, spread by a box
//! mean filter so each pixel's reward reflects prediction error over the
//! Q-network's receptive field.

use crate::error::{DclError, Result};
use crate::ops::box_mean_filter;
use crate::tensor::{Map2, Scalar, Tensor3};

/// Per-pixel maximum over channels.
pub fn max_channel<T: Scalar>(x: &Tensor3<T>) -> Map2<T> {
    let (h, w) = x.spatial_shape();
    let c = x.channels();
    debug_assert!(c >= 1);
    Map2::from_fn(h, w, |i, j| {
        let mut best = x.at(i, j, 0);
        for ch in 1..c {
            let v = x.at(i, j, ch);
            if v > best {
                best = v;
            }
        }
        best
    })
}

/// Reward image: `R = box_mean(D, window)` where
/// `D[i,j] = (max_c pred[i,j,c] − max_c next[i,j,c])²`.
///
/// The window defaults to the Q-network's receptive field at the call site;
/// it must be odd. All outputs are non-negative.
pub fn reward_image<T: Scalar>(
    pred: &Tensor3<T>,
    next: &Tensor3<T>,
    window: usize,
) -> Result<Map2<T>> {
    if !pred.same_shape(next) {
        return Err(DclError::ShapeMismatch(format!(
            "prediction {}x{}x{} vs next frame {}x{}x{}",
            pred.height(),
            pred.width(),
            pred.channels(),
            next.height(),
            next.width(),
            next.channels()
        )));
    }
    let mp = max_channel(pred);
    let mn = max_channel(next);
    let (h, w) = (mp.height(), mp.width());
    let mut diff = Map2::zeros(h, w);
    for ((d, &a), &b) in diff.data_mut().iter_mut().zip(mp.data()).zip(mn.data()) {
        let e = a.f64() - b.f64();
        *d = T::of(e * e);
    }
    box_mean_filter(&diff, window)
}

/// Scalar mean of a reward image, handy for logging.
pub fn mean_reward<T: Scalar>(reward: &Map2<T>) -> f64 {
    reward.mean()
}
