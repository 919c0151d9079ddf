use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Free,
    Wall,
    /// One-way teleport trigger on the right border.
    Teleport,
}

/// Grid of wall/free cells placed in world coordinates.
///
/// Cell `(row, col)` covers `x ∈ [ox + col·s, ox + (col+1)·s)` and
/// `y ∈ [oy + row·s, oy + (row+1)·s)`, where `s` is the cell size and
/// `(ox, oy)` the origin. Rows grow downward in rendered images.
#[derive(Clone, PartialEq)]
pub struct MazeLayout {
    name: String,
    cells: Vec<Cell>,
    height: usize,
    width: usize,
    cell_size: f64,
    origin: [f64; 2],
}

impl fmt::Debug for MazeLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MazeLayout({}, {}x{})\n{}", self.name, self.height, self.width, self.to_ascii())
    }
}

pub const UMAZE: &str = "\
#####
#...#
###.#
#...#
#####
";

pub const MEDIUM: &str = "\
########
#..##..#
#..#...#
##...###
#..#...#
#.#..#.#
#...#..#
########
";

pub const TELEPORT: &str = "\
#######
#.....T
#.###.T
#.....T
#######
";

/// Unit-square arena split by a vertical wall at x = 0.5 (width 0.04) with
/// a door for y ∈ [0.4, 0.6], on a 0.04 grid with a one-cell border.
pub fn wall_ascii() -> String {
    let n = 27;
    let mut s = String::new();
    for r in 0..n {
        for c in 0..n {
            let border = r == 0 || c == 0 || r == n - 1 || c == n - 1;
            // interior row i covers y ∈ [0.04 (i-1), 0.04 i)
            let door = (11..=15).contains(&r);
            let wall = c == 13 && !door;
            s.push(if border || wall { '#' } else { '.' });
        }
        s.push('\n');
    }
    s
}

impl MazeLayout {
    /// Parses an ASCII map: `#` wall, `.` free, `T` teleport trigger.
    pub fn parse(name: &str, text: &str, cell_size: f64, origin: [f64; 2]) -> Result<Self> {
        let lines: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        let bad = |detail: String| Error::Format { path: format!("layout '{name}'"), detail };
        let height = lines.len();
        let width = lines.first().map_or(0, |l| l.chars().count());
        if height < 3 || width < 3 {
            return Err(bad(format!("layout must be at least 3x3, got {height}x{width}")));
        }
        let mut cells = Vec::with_capacity(height * width);
        for (r, line) in lines.iter().enumerate() {
            if line.chars().count() != width {
                return Err(bad(format!("row {r} has length {} (expected {width})", line.chars().count())));
            }
            for ch in line.chars() {
                cells.push(match ch {
                    '#' => Cell::Wall,
                    '.' => Cell::Free,
                    'T' => Cell::Teleport,
                    other => return Err(bad(format!("unknown symbol '{other}' in row {r}"))),
                });
            }
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(bad(format!("cell size must be positive, got {cell_size}")));
        }
        let layout = Self { name: name.to_string(), cells, height, width, cell_size, origin };
        layout.validate().map_err(bad)?;
        Ok(layout)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        for r in 0..self.height {
            for c in 0..self.width {
                let border = r == 0 || c == 0 || r == self.height - 1 || c == self.width - 1;
                match self.cell(r, c) {
                    Cell::Teleport if c != self.width - 1 || r == 0 || r == self.height - 1 => {
                        return Err(format!("teleport cell ({r},{c}) must sit on the right border"));
                    }
                    Cell::Teleport if self.cell(r, 1) != Cell::Free => {
                        return Err(format!("teleport row {r} needs a free landing cell at column 1"));
                    }
                    Cell::Free if border => return Err(format!("border cell ({r},{c}) must be a wall")),
                    _ => {}
                }
            }
        }
        if !self.cells.contains(&Cell::Free) {
            return Err("layout has no free cell".into());
        }
        Ok(())
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "wall" => Self::parse("wall", &wall_ascii(), 0.04, [-0.04, -0.04]),
            "umaze" => Self::parse("umaze", UMAZE, 1.0, [0.0, 0.0]),
            "medium" => Self::parse("medium", MEDIUM, 1.0, [0.0, 0.0]),
            "teleport" => Self::parse("teleport", TELEPORT, 1.0, [0.0, 0.0]),
            other => Err(Error::Config(vec![format!("unknown layout '{other}' (expected wall|umaze|medium|teleport)")])),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.width + col]
    }

    pub fn is_free(&self, row: usize, col: usize) -> bool {
        self.cell(row, col) == Cell::Free
    }

    pub fn has_teleport(&self) -> bool {
        self.cells.contains(&Cell::Teleport)
    }

    /// `(row, col)` containing a world point, or `None` outside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.origin[0]) / self.cell_size).floor();
        let r = ((y - self.origin[1]) / self.cell_size).floor();
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            None
        } else {
            Some((r as usize, c as usize))
        }
    }

    /// Walls and everything outside the grid block movement; teleport cells do not.
    pub fn blocks(&self, x: f64, y: f64) -> bool {
        self.cell_of(x, y).is_none_or(|(r, c)| self.cell(r, c) == Cell::Wall)
    }

    pub fn in_free_cell(&self, x: f64, y: f64) -> bool {
        self.cell_of(x, y).is_some_and(|(r, c)| self.is_free(r, c))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.origin[0] + (col as f64 + 0.5) * self.cell_size,
            self.origin[1] + (row as f64 + 0.5) * self.cell_size,
        ]
    }

    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&(r, c)| self.is_free(r, c))
            .collect()
    }

    /// Boolean wall mask, row-major `height × width`.
    pub fn wall_mask(&self) -> Vec<bool> {
        self.cells.iter().map(|&c| c == Cell::Wall).collect()
    }

    /// Left edge of the interior (teleport landing x).
    pub fn left_interior_x(&self) -> f64 {
        self.origin[0] + self.cell_size
    }

    /// Left edge of the right border column (teleport trigger x).
    pub fn right_interior_x(&self) -> f64 {
        self.origin[0] + (self.width - 1) as f64 * self.cell_size
    }

    /// Same geometry with every cell split into `factor × factor` sub-cells.
    pub fn refined(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let (h, w) = (self.height * factor, self.width * factor);
        let mut cells = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                cells.push(self.cell(r / factor, c / factor));
            }
        }
        Self {
            name: format!("{}x{factor}", self.name),
            cells,
            height: h,
            width: w,
            cell_size: self.cell_size / factor as f64,
            origin: self.origin,
        }
    }

    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity(self.height * (self.width + 1));
        for r in 0..self.height {
            for c in 0..self.width {
                s.push(match self.cell(r, c) {
                    Cell::Free => '.',
                    Cell::Wall => '#',
                    Cell::Teleport => 'T',
                });
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_layouts_parse() {
        for name in ["wall", "umaze", "medium", "teleport"] {
            let l = MazeLayout::named(name).unwrap();
            assert!(!l.free_cells().is_empty());
        }
        assert_eq!(MazeLayout::named("umaze").unwrap().free_cells().len(), 7);
    }

    #[test]
    fn wall_geometry() {
        let l = MazeLayout::named("wall").unwrap();
        assert!(l.blocks(0.5, 0.2));
        assert!(l.blocks(0.49, 0.8));
        assert!(!l.blocks(0.5, 0.5));
        assert!(!l.blocks(0.47, 0.2));
        assert!(!l.blocks(0.53, 0.2));
        assert!(!l.blocks(0.001, 0.001));
        assert!(l.blocks(-0.001, 0.5));
        assert!(l.blocks(0.5, 0.39) && !l.blocks(0.5, 0.41) && !l.blocks(0.5, 0.59) && l.blocks(0.5, 0.61));
    }

    #[test]
    fn rejects_open_border_and_bad_teleport() {
        assert!(MazeLayout::parse("x", "###\n#..\n###\n", 1.0, [0.0, 0.0]).is_err());
        assert!(MazeLayout::parse("x", "####\n##.T\n####\n", 1.0, [0.0, 0.0]).is_err());
        assert!(MazeLayout::parse("x", "###\n###\n###\n", 1.0, [0.0, 0.0]).is_err());
        assert!(MazeLayout::parse("x", "###\n#?#\n###\n", 1.0, [0.0, 0.0]).is_err());
    }

    #[test]
    fn refine_preserves_geometry() {
        let l = MazeLayout::named("umaze").unwrap();
        let f = l.refined(2);
        assert_eq!((f.height(), f.width()), (10, 10));
        assert_eq!(f.free_cells().len(), 28);
        for &(x, y) in &[(1.2, 1.7), (3.6, 2.4), (2.0, 2.5), (0.5, 0.5)] {
            assert_eq!(l.blocks(x, y), f.blocks(x, y));
        }
    }

    #[test]
    fn ascii_round_trip() {
        let l = MazeLayout::named("teleport").unwrap();
        let again = MazeLayout::parse("teleport", &l.to_ascii(), 1.0, [0.0, 0.0]).unwrap();
        assert_eq!(l, again);
    }
}
