use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grid::ImageGrid;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TetrominoKind {
    T,
    L,
}

impl TetrominoKind {
    /// Block coordinates of the unrotated shape.
    fn base_blocks(self) -> [(usize, usize); 4] {
        match self {
            // ###
            //  #
            TetrominoKind::T => [(0, 0), (0, 1), (0, 2), (1, 1)],
            // #
            // #
            // ##
            TetrominoKind::L => [(0, 0), (1, 0), (2, 0), (2, 1)],
        }
    }

    /// Block coordinates after `quarter_turns` clockwise rotations, shifted so
    /// the bounding box starts at the origin.
    pub fn blocks(self, quarter_turns: u8) -> [(usize, usize); 4] {
        let mut blocks = self.base_blocks();
        for _ in 0..quarter_turns % 4 {
            let rows = blocks.iter().map(|b| b.0).max().unwrap_or(0) + 1;
            for b in blocks.iter_mut() {
                *b = (b.1, rows - 1 - b.0);
            }
        }
        blocks
    }

    /// Bounding box in blocks as `(rows, cols)`.
    pub fn extent(self, quarter_turns: u8) -> (usize, usize) {
        let blocks = self.blocks(quarter_turns);
        (
            blocks.iter().map(|b| b.0).max().unwrap_or(0) + 1,
            blocks.iter().map(|b| b.1).max().unwrap_or(0) + 1,
        )
    }
}

/// A binary tetromino rendered onto a square grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TetrominoPattern {
    pub kind: TetrominoKind,
    pub quarter_turns: u8,
    /// Pixel coordinates `(row, col)` of the bounding box's top-left corner.
    pub position: (usize, usize),
    pub thickness: usize,
    pub grid: ImageGrid,
}

impl TetrominoPattern {
    /// The same pattern turned a further 90 degrees clockwise in place.
    pub fn rotated(&self) -> Result<TetrominoPattern> {
        make_pattern(
            self.kind,
            (self.quarter_turns + 1) % 4,
            self.position,
            self.thickness,
            self.grid.side(),
        )
    }
}

/// Renders a tetromino of `thickness`-pixel blocks with unit amplitude.
pub fn make_pattern(
    kind: TetrominoKind,
    quarter_turns: u8,
    position: (usize, usize),
    thickness: usize,
    side: usize,
) -> Result<TetrominoPattern> {
    if thickness == 0 {
        return Err(Error::InvalidArgument("pattern thickness must be positive".into()));
    }
    let (rows, cols) = kind.extent(quarter_turns);
    if position.0 + rows * thickness > side || position.1 + cols * thickness > side {
        return Err(Error::InvalidArgument(format!(
            "{kind:?} tetromino ({rows}x{cols} blocks of {thickness}px, {quarter_turns} quarter turns) \
             at {position:?} does not fit a {side}x{side} grid"
        )));
    }
    let mut grid = ImageGrid::zeros(side);
    for (br, bc) in kind.blocks(quarter_turns) {
        for dr in 0..thickness {
            for dc in 0..thickness {
                grid.set(
                    position.0 + br * thickness + dr,
                    position.1 + bc * thickness + dc,
                    1.0,
                );
            }
        }
    }
    Ok(TetrominoPattern {
        kind,
        quarter_turns: quarter_turns % 4,
        position,
        thickness,
        grid,
    })
}

/// Rotation by quarter turns followed by placement of the bounding box.
/// `(0, 0, 0)` is the identity: the unrotated shape at the top-left corner.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RigidTransform {
    pub quarter_turns: u8,
    pub row: usize,
    pub col: usize,
}

impl RigidTransform {
    pub const IDENTITY: RigidTransform = RigidTransform {
        quarter_turns: 0,
        row: 0,
        col: 0,
    };
}

/// Every in-bounds placement of `kind` for one rotation.
pub fn placements(
    kind: TetrominoKind,
    quarter_turns: u8,
    thickness: usize,
    side: usize,
) -> Vec<RigidTransform> {
    let (rows, cols) = kind.extent(quarter_turns);
    let (h, w) = (rows * thickness, cols * thickness);
    if h > side || w > side {
        return Vec::new();
    }
    let mut out = Vec::new();
    for row in 0..=side - h {
        for col in 0..=side - w {
            out.push(RigidTransform {
                quarter_turns,
                row,
                col,
            });
        }
    }
    out
}

/// Uniform rotation, then a uniform in-bounds translation for that rotation.
pub fn sample_rigid_transform<R: Rng + ?Sized>(
    rng: &mut R,
    kind: TetrominoKind,
    thickness: usize,
    side: usize,
) -> Result<RigidTransform> {
    if thickness == 0 || (0..4).all(|q| placements(kind, q, thickness, side).is_empty()) {
        return Err(Error::InvalidArgument(format!(
            "no placement of a {kind:?} tetromino with {thickness}px blocks fits a {side}x{side} grid"
        )));
    }
    let quarter_turns = rng.random_range(0..4u8);
    let (rows, cols) = kind.extent(quarter_turns);
    let (h, w) = (rows * thickness, cols * thickness);
    if h > side || w > side {
        return Err(Error::InvalidArgument(format!(
            "{kind:?} tetromino with {thickness}px blocks fits only some rotations of a {side}x{side} grid"
        )));
    }
    Ok(RigidTransform {
        quarter_turns,
        row: rng.random_range(0..=side - h),
        col: rng.random_range(0..=side - w),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn block_counts() {
        let t = make_pattern(TetrominoKind::T, 0, (0, 0), 1, 8).unwrap();
        assert_eq!(t.grid.data().iter().filter(|&&v| v != 0.0).count(), 4);
        let l = make_pattern(TetrominoKind::L, 0, (8, 8), 8, 64).unwrap();
        assert_eq!(l.grid.data().iter().filter(|&&v| v != 0.0).count(), 256);
    }

    #[test]
    fn four_quarter_turns_restore_pattern() {
        for kind in [TetrominoKind::T, TetrominoKind::L] {
            let p = make_pattern(kind, 0, (1, 1), 2, 10).unwrap();
            let mut q = p.clone();
            for _ in 0..4 {
                q = q.rotated().unwrap();
            }
            assert_eq!(p, q);
        }
    }

    #[test]
    fn each_rotation_is_distinct() {
        for kind in [TetrominoKind::T, TetrominoKind::L] {
            let grids: Vec<_> = (0..4)
                .map(|q| make_pattern(kind, q, (0, 0), 1, 4).unwrap().grid)
                .collect();
            for i in 0..4 {
                for j in i + 1..4 {
                    assert_ne!(grids[i], grids[j]);
                }
            }
        }
    }

    #[test]
    fn out_of_bounds_rejected() {
        assert!(make_pattern(TetrominoKind::T, 0, (7, 0), 1, 8).is_err());
        assert!(make_pattern(TetrominoKind::L, 0, (0, 0), 4, 8).is_err());
    }

    #[test]
    fn rigid_samples_stay_in_bounds() {
        // a 2x3-block shape in a grid three blocks wide: few placements
        let (side, thickness) = (6, 2);
        let mut valid = Vec::new();
        for q in 0..4u8 {
            for row in 0..side {
                for col in 0..side {
                    if make_pattern(TetrominoKind::T, q, (row, col), thickness, side).is_ok() {
                        valid.push(RigidTransform { quarter_turns: q, row, col });
                    }
                }
            }
        }
        assert_eq!(valid.len(), 12);
        let listed: Vec<RigidTransform> = (0..4)
            .flat_map(|q| placements(TetrominoKind::T, q, thickness, side))
            .collect();
        assert_eq!(listed, valid);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 4];
        let mut saw_identity = false;
        for _ in 0..10_000 {
            let tr = sample_rigid_transform(&mut rng, TetrominoKind::T, thickness, side).unwrap();
            assert!(valid.contains(&tr));
            counts[tr.quarter_turns as usize] += 1;
            saw_identity |= tr == RigidTransform::IDENTITY;
        }
        assert!(saw_identity);
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.25).abs() < 0.02, "{counts:?}");
        }
    }
}
