//! Binary 7x7 aperture masks.

use std::fmt;

use crate::error::{Error, Result};

/// Side length of the aperture grid.
pub const GRID: usize = 7;
/// Number of cells in the aperture grid.
pub const CELLS: usize = GRID * GRID;

/// Bits of [`AperturePattern::selected`].
pub const SELECTED_BITS: u64 = 0x8804_0880_3860;

const ALL_CELLS: u64 = (1u64 << CELLS) - 1;

/// A 7x7 binary aperture mask with at least one open cell.
///
/// Cell `(row, col)` is bit `row * 7 + col` of the packed representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AperturePattern {
    bits: u64,
}

impl AperturePattern {
    pub fn from_bits(bits: u64) -> Result<Self> {
        if bits & !ALL_CELLS != 0 {
            return Err(Error::InvalidPattern(format!(
                "bits beyond cell {CELLS} are set: {bits:#x}"
            )));
        }
        if bits == 0 {
            return Err(Error::InvalidPattern("all cells closed".into()));
        }
        Ok(Self { bits })
    }

    pub fn from_grid(grid: &[[bool; GRID]; GRID]) -> Result<Self> {
        let mut bits = 0u64;
        for (r, row) in grid.iter().enumerate() {
            for (c, &open) in row.iter().enumerate() {
                if open {
                    bits |= 1 << (r * GRID + c);
                }
            }
        }
        Self::from_bits(bits)
    }

    /// Every cell open.
    pub fn full_open() -> Self {
        Self { bits: ALL_CELLS }
    }

    /// Only the central cell open.
    pub fn pinhole() -> Self {
        Self {
            bits: 1 << (3 * GRID + 3),
        }
    }

    /// The pattern selected by a seeded search (population 100, 50
    /// generations, seed 7) under the default imaging settings.
    pub fn selected() -> Self {
        Self { bits: SELECTED_BITS }
    }

    /// Cells whose centres lie inside the disk inscribed in the grid.
    pub fn circular() -> Self {
        let mut bits = 0u64;
        for r in 0..GRID {
            for c in 0..GRID {
                let dy = r as f64 - 3.0;
                let dx = c as f64 - 3.0;
                if dx * dx + dy * dy <= 3.5 * 3.5 {
                    bits |= 1 << (r * GRID + c);
                }
            }
        }
        Self { bits }
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    #[inline]
    pub fn is_open(&self, row: usize, col: usize) -> bool {
        self.bits >> (row * GRID + col) & 1 == 1
    }

    /// Number of open cells, `n` in the noise model.
    pub fn open_count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn grid(&self) -> [[bool; GRID]; GRID] {
        let mut g = [[false; GRID]; GRID];
        for (r, row) in g.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = self.is_open(r, c);
            }
        }
        g
    }

    /// The mask rotated by 180 degrees.
    pub fn rot180(&self) -> Self {
        // bit i maps to bit 48 - i
        Self {
            bits: self.bits.reverse_bits() >> (64 - CELLS),
        }
    }

    /// True when the mask equals its own 180-degree rotation.
    pub fn is_point_symmetric(&self) -> bool {
        self.rot180() == *self
    }

    /// Parses the text format: optional `#` comment lines, then seven lines
    /// of seven `0`/`1` characters.
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        if rows.len() != GRID {
            return Err(Error::InvalidPattern(format!(
                "expected {GRID} rows, found {}",
                rows.len()
            )));
        }
        let mut grid = [[false; GRID]; GRID];
        for (r, line) in rows.iter().enumerate() {
            let chars: Vec<char> = line.chars().collect();
            if chars.len() != GRID {
                return Err(Error::InvalidPattern(format!(
                    "row {} has {} cells, expected {GRID}",
                    r + 1,
                    chars.len()
                )));
            }
            for (c, ch) in chars.into_iter().enumerate() {
                grid[r][c] = match ch {
                    '0' => false,
                    '1' => true,
                    other => {
                        return Err(Error::InvalidPattern(format!(
                            "row {} has invalid character {other:?}",
                            r + 1
                        )))
                    }
                };
            }
        }
        Self::from_grid(&grid)
    }

    /// Renders the text format (no comment lines).
    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(GRID * (GRID + 1));
        for r in 0..GRID {
            for c in 0..GRID {
                s.push(if self.is_open(r, c) { '1' } else { '0' });
            }
            s.push('\n');
        }
        s
    }

    /// Row-major `0`/`1` string of all 49 cells.
    pub fn bit_string(&self) -> String {
        self.to_text().replace('\n', "")
    }
}

impl fmt::Display for AperturePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_with_comments() {
        let text = "# selected\n# n = 3\n1000000\n0000000\n0000000\n0001000\n0000000\n0000000\n0000001\n";
        let p = AperturePattern::parse(text).unwrap();
        assert_eq!(p.open_count(), 3);
        assert!(p.is_open(0, 0) && p.is_open(3, 3) && p.is_open(6, 6));
        assert!(p.is_point_symmetric());
        assert_eq!(AperturePattern::parse(&p.to_text()).unwrap(), p);
    }

    #[test]
    fn parse_errors() {
        let closed = "0000000\n".repeat(7);
        assert!(matches!(AperturePattern::parse(&closed), Err(Error::InvalidPattern(_))));
        assert!(AperturePattern::parse(&"1111111\n".repeat(6)).is_err());
        assert!(AperturePattern::parse(&"111111\n".repeat(7)).is_err());
        assert!(AperturePattern::parse(&"11111x1\n".repeat(7)).is_err());
        assert!(AperturePattern::from_bits(0).is_err());
        assert!(AperturePattern::from_bits(1 << 49).is_err());
    }

    #[test]
    fn presets() {
        assert_eq!(AperturePattern::full_open().open_count(), 49);
        assert_eq!(AperturePattern::pinhole().open_count(), 1);
        assert!(AperturePattern::circular().is_point_symmetric());
        assert!(AperturePattern::full_open().is_point_symmetric());
    }

    proptest! {
        #[test]
        fn rot180_matches_grid_rotation(bits in 1u64..(1u64 << 49)) {
            let p = AperturePattern::from_bits(bits).unwrap();
            let r = p.rot180();
            for row in 0..GRID {
                for col in 0..GRID {
                    prop_assert_eq!(r.is_open(row, col), p.is_open(GRID - 1 - row, GRID - 1 - col));
                }
            }
            prop_assert_eq!(r.rot180(), p);
            prop_assert_eq!(r.open_count(), p.open_count());
        }
    }
}
