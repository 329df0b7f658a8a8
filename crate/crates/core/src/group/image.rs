//! Quarter-turn action on square images.
//!
//! One counter-clockwise quarter turn sends pixel `(i, j)` to `(W − 1 − j, i)`,
//! the same convention as `np.rot90` and as the 2×2 rotation matrix acting on
//! `(row, col)` displacement vectors.

use std::sync::Arc;

use ndarray::Array3;

use super::{Element, FiniteGroup, GroupError, Representation};

/// A group acting on the pixel grid of `size × size` images.
#[derive(Clone, Debug)]
pub struct ImageAction {
    group: Arc<FiniteGroup>,
    size: usize,
    /// `index_map[g][p]` is the flat destination of source pixel `p`.
    index_map: Vec<Vec<usize>>,
}

impl ImageAction {
    pub fn new(group: Arc<FiniteGroup>, size: usize) -> Result<Self, GroupError> {
        let index_map = group
            .elements()
            .map(|g| group.quarter_turns(g).map(|k| quarter_turn_map(size, k)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            group,
            size,
            index_map,
        })
    }

    pub fn group(&self) -> &Arc<FiniteGroup> {
        &self.group
    }

    pub fn height(&self) -> usize {
        self.size
    }

    pub fn width(&self) -> usize {
        self.size
    }

    pub fn index_map(&self, g: Element) -> &[usize] {
        &self.index_map[g]
    }

    /// Rotates every channel of a `C × H × W` image by `g`.
    pub fn rotate_image(&self, g: Element, image: &Array3<f64>) -> Result<Array3<f64>, GroupError> {
        let (c, h, w) = image.dim();
        if h != w {
            return Err(GroupError::NonSquare { height: h, width: w });
        }
        if h != self.size {
            return Err(GroupError::Shape(format!(
                "image is {h}×{w}, action expects {0}×{0}",
                self.size
            )));
        }
        let map = &self.index_map[g];
        let mut out = Array3::zeros((c, h, w));
        for ch in 0..c {
            for (src, &dst) in map.iter().enumerate() {
                out[[ch, dst / w, dst % w]] = image[[ch, src / w, src % w]];
            }
        }
        Ok(out)
    }

    /// The pixel permutation as a representation of dimension `size²`,
    /// i.e. `ρ(g)·vec(x) = vec(rotate(g, x))`.
    pub fn representation(&self) -> Representation {
        let n = self.size * self.size;
        let perms: Vec<Vec<usize>> = self
            .index_map
            .iter()
            .map(|map| {
                let mut perm = vec![0; n];
                for (src, &dst) in map.iter().enumerate() {
                    perm[dst] = src;
                }
                perm
            })
            .collect();
        Representation::permutation(self.group.clone(), &perms)
            .expect("image rotations form a group action")
    }
}

/// Rotates a square `C × H × W` image by `g`.
pub fn rotate_image(
    action: &ImageAction,
    g: Element,
    image: &Array3<f64>,
) -> Result<Array3<f64>, GroupError> {
    action.rotate_image(g, image)
}

/// Rotates a square image by `k` counter-clockwise quarter turns.
pub fn rot90(image: &Array3<f64>, k: usize) -> Result<Array3<f64>, GroupError> {
    let (c, h, w) = image.dim();
    if h != w {
        return Err(GroupError::NonSquare { height: h, width: w });
    }
    let map = quarter_turn_map(h, k);
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for (src, &dst) in map.iter().enumerate() {
            out[[ch, dst / w, dst % w]] = image[[ch, src / w, src % w]];
        }
    }
    Ok(out)
}

/// Rotates a `(row, col)` coordinate on an `n × n` grid by `k` quarter turns.
pub fn rotate_coord(n: usize, (r, c): (usize, usize), k: usize) -> (usize, usize) {
    (0..k % 4).fold((r, c), |(r, c), _| (n - 1 - c, r))
}

fn quarter_turn_map(size: usize, k: usize) -> Vec<usize> {
    (0..size * size)
        .map(|p| {
            let (r, c) = rotate_coord(size, (p / size, p % size), k);
            r * size + c
        })
        .collect()
}
