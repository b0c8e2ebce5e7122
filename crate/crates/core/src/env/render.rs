//! Human-facing frames of the global state.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::env::game::GridState;
use crate::env::map::{Cell, Pos};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tile {
    Wall,
    Empty,
    Apple,
    Agent(usize),
    Beam,
    Sight,
}

fn tile(state: &GridState, pos: Pos) -> Tile {
    if state.map().cell(pos) == Cell::Wall {
        return Tile::Wall;
    }
    if let Some(id) = state.agent_at(pos) {
        return Tile::Agent(id);
    }
    if state.beams().contains(&pos) {
        return Tile::Beam;
    }
    if state.has_apple(pos) {
        return Tile::Apple;
    }
    if state.agents().iter().any(|a| a.is_active() && a.front() == pos) {
        return Tile::Sight;
    }
    Tile::Empty
}

fn tiles(state: &GridState) -> impl Iterator<Item = (Pos, Tile)> + '_ {
    let (w, h) = (state.map().width() as i32, state.map().height() as i32);
    (0..h).flat_map(move |r| (0..w).map(move |c| (Pos::new(r, c), tile(state, Pos::new(r, c)))))
}

/// ANSI-coloured text, one line per map row.
pub fn render_ansi(state: &GridState) -> String {
    let mut out = String::new();
    let width = state.map().width() as i32;
    for (pos, t) in tiles(state) {
        let _ = match t {
            Tile::Wall => write!(out, "\x1b[37m@\x1b[0m"),
            Tile::Empty => write!(out, " "),
            Tile::Apple => write!(out, "\x1b[32ma\x1b[0m"),
            Tile::Agent(id) => write!(out, "\x1b[31m{}\x1b[0m", id % 10),
            Tile::Beam => write!(out, "\x1b[33m*\x1b[0m"),
            Tile::Sight => write!(out, "\x1b[90m.\x1b[0m"),
        };
        if pos.col == width - 1 {
            out.push('\n');
        }
    }
    out
}

/// Plain text without escape codes.
pub fn render_text(state: &GridState) -> String {
    let mut out = String::new();
    let width = state.map().width() as i32;
    for (pos, t) in tiles(state) {
        out.push(match t {
            Tile::Wall => '@',
            Tile::Empty => ' ',
            Tile::Apple => 'a',
            Tile::Agent(id) => char::from_digit((id % 10) as u32, 10).unwrap_or('A'),
            Tile::Beam => '*',
            Tile::Sight => '.',
        });
        if pos.col == width - 1 {
            out.push('\n');
        }
    }
    out
}

pub fn render_image(state: &GridState, cell_px: u32) -> RgbImage {
    let (w, h) = (state.map().width() as u32, state.map().height() as u32);
    let mut img = RgbImage::new(w * cell_px, h * cell_px);
    for (pos, t) in tiles(state) {
        let colour = match t {
            Tile::Wall => Rgb([190, 190, 190]),
            Tile::Empty => Rgb([0, 0, 0]),
            Tile::Apple => Rgb([40, 200, 40]),
            Tile::Agent(_) => Rgb([220, 40, 40]),
            Tile::Beam => Rgb([240, 220, 40]),
            Tile::Sight => Rgb([70, 70, 70]),
        };
        for dy in 0..cell_px {
            for dx in 0..cell_px {
                img.put_pixel(pos.col as u32 * cell_px + dx, pos.row as u32 * cell_px + dy, colour);
            }
        }
    }
    img
}

pub fn save_png(state: &GridState, path: &Path, cell_px: u32) -> Result<()> {
    render_image(state, cell_px).save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::map::MapSpec;

    #[test]
    fn text_frame_matches_map_size() {
        let state = GridState::reset(MapSpec::small_map(), 4, 0).unwrap();
        let text = render_text(&state);
        assert_eq!(text.lines().count(), 9);
        assert!(text.lines().all(|l| l.chars().count() == 15));
        assert!(text.contains('0') && text.contains('3'));
        assert!(render_ansi(&state).contains("\x1b[32ma"));
        let img = render_image(&state, 4);
        assert_eq!(img.dimensions(), (60, 36));
    }
}
