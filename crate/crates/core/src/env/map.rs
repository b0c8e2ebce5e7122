use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAP: &str = include_str!("../../assets/commons_25x9.txt");
pub const SMALL_MAP: &str = include_str!("../../assets/commons_15x9.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Wall,
    Empty,
    AppleSite,
    Spawn,
}

impl Cell {
    fn from_char(c: char) -> Option<Cell> {
        match c {
            '@' => Some(Cell::Wall),
            '.' => Some(Cell::Empty),
            'a' => Some(Cell::AppleSite),
            'P' => Some(Cell::Spawn),
            _ => None,
        }
    }

    fn to_char(self) -> char {
        match self {
            Cell::Wall => '@',
            Cell::Empty => '.',
            Cell::AppleSite => 'a',
            Cell::Spawn => 'P',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pos {
    pub row: i32,
    pub col: i32,
}

impl Pos {
    pub fn new(row: i32, col: i32) -> Self {
        Pos { row, col }
    }

    pub fn offset(self, d_row: i32, d_col: i32) -> Self {
        Pos {
            row: self.row + d_row,
            col: self.col + d_col,
        }
    }
}

/// Static layout of the field, parsed from ASCII: `@` wall, `.` empty,
/// `a` apple site, `P` spawn point. The border must be wall.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapSpec {
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    apple_sites: Vec<Pos>,
    spawn_points: Vec<Pos>,
    /// For each apple site, the other sites within Euclidean distance 2.
    neighbours: Vec<Vec<usize>>,
    /// Cell index to apple-site index.
    site_of_cell: Vec<Option<usize>>,
}

impl MapSpec {
    pub fn default_map() -> Self {
        DEFAULT_MAP.parse().expect("bundled map is valid")
    }

    pub fn small_map() -> Self {
        SMALL_MAP.parse().expect("bundled map is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn apple_sites(&self) -> &[Pos] {
        &self.apple_sites
    }

    pub fn spawn_points(&self) -> &[Pos] {
        &self.spawn_points
    }

    pub fn neighbours(&self, site: usize) -> &[usize] {
        &self.neighbours[site]
    }

    pub fn contains(&self, pos: Pos) -> bool {
        pos.row >= 0 && pos.col >= 0 && (pos.row as usize) < self.height && (pos.col as usize) < self.width
    }

    /// Out-of-map positions read as wall.
    pub fn cell(&self, pos: Pos) -> Cell {
        if self.contains(pos) {
            self.cells[pos.row as usize * self.width + pos.col as usize]
        } else {
            Cell::Wall
        }
    }

    pub fn is_wall(&self, pos: Pos) -> bool {
        self.cell(pos) == Cell::Wall
    }

    pub fn site_at(&self, pos: Pos) -> Option<usize> {
        if self.contains(pos) {
            self.site_of_cell[pos.row as usize * self.width + pos.col as usize]
        } else {
            None
        }
    }
}

impl FromStr for MapSpec {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().map(str::trim_end).filter(|l| !l.is_empty()).collect();
        if rows.is_empty() {
            return Err(Error::Map("empty map".into()));
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        let mut cells = Vec::with_capacity(width * height);
        for (r, line) in rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(Error::Map(format!(
                    "row {r} has {} cells, expected {width}",
                    line.chars().count()
                )));
            }
            for (c, ch) in line.chars().enumerate() {
                let cell = Cell::from_char(ch)
                    .ok_or_else(|| Error::Map(format!("unknown symbol {ch:?} at row {r}, column {c}")))?;
                let border = r == 0 || c == 0 || r + 1 == height || c + 1 == width;
                if border && cell != Cell::Wall {
                    return Err(Error::Map(format!("border cell at row {r}, column {c} is not wall")));
                }
                cells.push(cell);
            }
        }
        let mut apple_sites = Vec::new();
        let mut spawn_points = Vec::new();
        let mut site_of_cell = vec![None; cells.len()];
        for (i, cell) in cells.iter().enumerate() {
            let pos = Pos::new((i / width) as i32, (i % width) as i32);
            match cell {
                Cell::AppleSite => {
                    site_of_cell[i] = Some(apple_sites.len());
                    apple_sites.push(pos);
                }
                Cell::Spawn => spawn_points.push(pos),
                _ => {}
            }
        }
        let neighbours = apple_sites
            .iter()
            .enumerate()
            .map(|(i, a)| {
                apple_sites
                    .iter()
                    .enumerate()
                    .filter(|&(j, b)| {
                        let (dr, dc) = (a.row - b.row, a.col - b.col);
                        j != i && dr * dr + dc * dc <= 4
                    })
                    .map(|(j, _)| j)
                    .collect()
            })
            .collect();
        Ok(MapSpec {
            width,
            height,
            cells,
            apple_sites,
            spawn_points,
            neighbours,
            site_of_cell,
        })
    }
}

impl fmt::Display for MapSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.cells.chunks(self.width) {
            let line: String = row.iter().map(|c| c.to_char()).collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_maps_parse() {
        let map = MapSpec::default_map();
        assert_eq!((map.width(), map.height()), (25, 9));
        assert!(map.spawn_points().len() >= 10);
        let small = MapSpec::small_map();
        assert_eq!((small.width(), small.height()), (15, 9));
        assert!(small.spawn_points().len() >= 4);
    }

    #[test]
    fn display_round_trips() {
        let map = MapSpec::default_map();
        let again: MapSpec = map.to_string().parse().unwrap();
        assert_eq!(again, map);
    }

    #[test]
    fn open_border_is_rejected() {
        let err = "@@@\n@P.\n@@@\n".parse::<MapSpec>().unwrap_err();
        assert!(err.to_string().contains("border"));
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!("@@@\n@@\n@@@\n".parse::<MapSpec>().is_err());
        assert!("@@@\n@x@\n@@@\n".parse::<MapSpec>().is_err());
    }

    #[test]
    fn radius_two_neighbourhood_is_euclidean() {
        let map: MapSpec = "@@@@@@@\n@aaaaa@\n@aaaaa@\n@aaaaa@\n@aaaaa@\n@aaaaa@\n@@@@@@@\n".parse().unwrap();
        let centre = map.site_at(Pos::new(3, 3)).unwrap();
        // 4 at distance 1, 4 at sqrt 2, 4 at exactly 2
        assert_eq!(map.neighbours(centre).len(), 12);
    }
}
