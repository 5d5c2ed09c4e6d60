//! Per-pixel discrete actions: stay, or move k pixels up/down/left/right.
//!
//! The action-axis order is fixed as `[stay, up, down, left, right]` across
//! the whole pipeline: one-hot encodings, Q-volumes and flow export all index
//! actions this way.

use crate::error::{DclError, Result};
use crate::tensor::{Scalar, Tensor3};

pub const ACTION_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Action {
    Stay = 0,
    Up = 1,
    Down = 2,
    Left = 3,
    Right = 4,
}

impl Action {
    pub const ALL: [Action; ACTION_COUNT] =
        [Action::Stay, Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn from_index(idx: u8) -> Option<Action> {
        Self::ALL.get(idx as usize).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Displacement `(di, dj)` in row/col pixels for step size `k`; rows grow
    /// downward, so `Up` is `(-k, 0)`.
    pub fn displacement(self, k: isize) -> (isize, isize) {
        match self {
            Action::Stay => (0, 0),
            Action::Up => (-k, 0),
            Action::Down => (k, 0),
            Action::Left => (0, -k),
            Action::Right => (0, k),
        }
    }
}

/// h×w grid of action indices; the compact storage used by the replay buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMatrix {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ActionMatrix {
    pub fn filled(height: usize, width: usize, action: Action) -> Self {
        Self { height, width, data: vec![action as u8; height * width] }
    }

    pub fn from_indices(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(DclError::ShapeMismatch(format!(
                "action matrix needs {}x{} = {} entries, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|&&a| a as usize >= ACTION_COUNT) {
            return Err(DclError::Config(format!("invalid action index {bad}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline(always)]
    pub fn at(&self, i: usize, j: usize) -> Action {
        Action::from_index(self.data[i * self.width + j]).expect("stored indices are valid")
    }

    #[inline(always)]
    pub fn set(&mut self, i: usize, j: usize, a: Action) {
        self.data[i * self.width + j] = a as u8;
    }

    pub fn indices(&self) -> &[u8] {
        &self.data
    }

    /// Expand to the h×w×5 one-hot tensor consumed by the forward model.
    pub fn one_hot<T: Scalar>(&self) -> OneHotAction<T> {
        let mut t = Tensor3::zeros(self.height, self.width, ACTION_COUNT);
        for i in 0..self.height {
            for j in 0..self.width {
                t.set(i, j, self.data[i * self.width + j] as usize, T::one());
            }
        }
        OneHotAction(t)
    }
}

/// h×w×5 one-hot encoding of an action matrix. Constructed only from an
/// [`ActionMatrix`], which guarantees each pixel's fiber sums to exactly one.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotAction<T: Scalar>(Tensor3<T>);

impl<T: Scalar> OneHotAction<T> {
    pub fn tensor(&self) -> &Tensor3<T> {
        &self.0
    }

    pub fn spatial_shape(&self) -> (usize, usize) {
        self.0.spatial_shape()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_order_is_fixed() {
        assert_eq!(Action::Stay.index(), 0);
        assert_eq!(Action::Up.index(), 1);
        assert_eq!(Action::Down.index(), 2);
        assert_eq!(Action::Left.index(), 3);
        assert_eq!(Action::Right.index(), 4);
    }

    #[test]
    fn displacements_follow_row_down_convention() {
        assert_eq!(Action::Stay.displacement(2), (0, 0));
        assert_eq!(Action::Up.displacement(2), (-2, 0));
        assert_eq!(Action::Down.displacement(2), (2, 0));
        assert_eq!(Action::Left.displacement(2), (0, -2));
        assert_eq!(Action::Right.displacement(2), (0, 2));
    }

    #[test]
    fn one_hot_fibers_sum_to_one() {
        let mut m = ActionMatrix::filled(3, 4, Action::Stay);
        m.set(1, 2, Action::Right);
        m.set(2, 0, Action::Up);
        let oh = m.one_hot::<f32>();
        let t = oh.tensor();
        for i in 0..3 {
            for j in 0..4 {
                let fiber: f32 = (0..ACTION_COUNT).map(|a| t.at(i, j, a)).sum();
                assert_eq!(fiber, 1.0);
                assert_eq!(t.at(i, j, m.at(i, j).index()), 1.0);
            }
        }
    }

    #[test]
    fn from_indices_validates() {
        assert!(ActionMatrix::from_indices(2, 2, vec![0, 1, 2, 5]).is_err());
        assert!(ActionMatrix::from_indices(2, 2, vec![0, 1]).is_err());
        assert!(ActionMatrix::from_indices(2, 2, vec![0, 1, 2, 4]).is_ok());
    }
}
