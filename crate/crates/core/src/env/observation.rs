use serde::{Deserialize, Serialize};

use crate::env::game::{GridState, VISION_RADIUS};
use crate::env::map::Pos;
use crate::error::{Error, Result};

pub const OBS_SIDE: usize = 9;
pub const OBS_PIXELS: usize = OBS_SIDE * OBS_SIDE;
pub const NUM_CHANNELS: usize = 7;
/// Length of the one-hot encoding, `9 x 9 x 7`, channels last.
pub const OBS_LEN: usize = OBS_PIXELS * NUM_CHANNELS;

/// Pixel classes, in one-hot channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Channel {
    Empty = 0,
    Own = 1,
    Other = 2,
    Apple = 3,
    Beam = 4,
    Sight = 5,
    Wall = 6,
}

impl Channel {
    pub const ALL: [Channel; NUM_CHANNELS] = [
        Channel::Empty,
        Channel::Own,
        Channel::Other,
        Channel::Apple,
        Channel::Beam,
        Channel::Sight,
        Channel::Wall,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Egocentric 9x9 view. Row 0 is farthest ahead of the agent, the agent sits
/// at the centre pixel. Stored as one class per pixel, so the one-hot
/// encoding always has exactly one channel set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    #[serde(with = "pixels_serde")]
    pixels: [Channel; OBS_PIXELS],
}

mod pixels_serde {
    use super::{Channel, OBS_PIXELS};
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &[Channel; OBS_PIXELS], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(p.iter().map(|c| *c as u8))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[Channel; OBS_PIXELS], D::Error> {
        let raw = Vec::<u8>::deserialize(d)?;
        if raw.len() != OBS_PIXELS {
            return Err(serde::de::Error::custom("observation must have 81 pixels"));
        }
        let mut out = [Channel::Empty; OBS_PIXELS];
        for (o, v) in out.iter_mut().zip(raw) {
            *o = *Channel::ALL
                .get(v as usize)
                .ok_or_else(|| serde::de::Error::custom("pixel class out of range"))?;
        }
        Ok(out)
    }
}

impl Default for Observation {
    fn default() -> Self {
        Observation::timeout()
    }
}

impl Observation {
    /// The frame a timed-out agent receives: every pixel empty.
    pub fn timeout() -> Self {
        Observation {
            pixels: [Channel::Empty; OBS_PIXELS],
        }
    }

    pub fn from_pixels(pixels: [Channel; OBS_PIXELS]) -> Self {
        Observation { pixels }
    }

    pub fn is_timeout(&self) -> bool {
        *self == Observation::timeout()
    }

    pub fn pixels(&self) -> &[Channel; OBS_PIXELS] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> Channel {
        self.pixels[row * OBS_SIDE + col]
    }

    pub fn count(&self, channel: Channel) -> usize {
        self.pixels.iter().filter(|&&c| c == channel).count()
    }

    /// Writes the `9 x 9 x 7` one-hot encoding into `out`.
    pub fn write_one_hot(&self, out: &mut [f64]) {
        assert_eq!(out.len(), OBS_LEN);
        out.iter_mut().for_each(|x| *x = 0.0);
        for (i, c) in self.pixels.iter().enumerate() {
            out[i * NUM_CHANNELS + c.index()] = 1.0;
        }
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut out = vec![0.0; OBS_LEN];
        self.write_one_hot(&mut out);
        out
    }

    pub fn from_one_hot(values: &[f64]) -> Result<Self> {
        if values.len() != OBS_LEN {
            return Err(Error::shape("observation", OBS_LEN, values.len()));
        }
        let mut pixels = [Channel::Empty; OBS_PIXELS];
        for (i, px) in values.chunks_exact(NUM_CHANNELS).enumerate() {
            let set: Vec<usize> = px.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(c, _)| c).collect();
            let zeros = px.iter().filter(|&&v| v == 0.0).count();
            if set.len() != 1 || zeros != NUM_CHANNELS - 1 {
                return Err(Error::InvalidArgument(format!("pixel {i} is not one-hot")));
            }
            pixels[i] = Channel::ALL[set[0]];
        }
        Ok(Observation { pixels })
    }

    /// Keeps only other-agent pixels; everything else becomes empty.
    pub fn mask_others(&self) -> Self {
        let mut pixels = self.pixels;
        for p in &mut pixels {
            if *p != Channel::Other {
                *p = Channel::Empty;
            }
        }
        Observation { pixels }
    }

    /// Class index per pixel.
    pub fn classes(&self) -> [u8; OBS_PIXELS] {
        let mut out = [0u8; OBS_PIXELS];
        for (o, c) in out.iter_mut().zip(&self.pixels) {
            *o = *c as u8;
        }
        out
    }

    /// The view rotated 90 degrees clockwise.
    pub fn rotated_clockwise(&self) -> Self {
        let mut pixels = [Channel::Empty; OBS_PIXELS];
        for r in 0..OBS_SIDE {
            for c in 0..OBS_SIDE {
                pixels[c * OBS_SIDE + (OBS_SIDE - 1 - r)] = self.pixels[r * OBS_SIDE + c];
            }
        }
        Observation { pixels }
    }
}

/// The 9x9 window around agent `id`, rotated so the agent faces up.
pub fn render_observation(state: &GridState, id: usize) -> Result<Observation> {
    let me = state.agent(id)?;
    if !me.is_active() {
        return Ok(Observation::timeout());
    }
    let map = state.map();
    let visible: Vec<_> = state.agents().iter().filter(|a| a.is_active()).collect();
    let sights: Vec<Pos> = visible.iter().map(|a| a.front()).collect();
    let (f, r) = (me.orientation.forward(), me.orientation.right());
    let mut pixels = [Channel::Empty; OBS_PIXELS];
    let side = OBS_SIDE as i32;
    for i in 0..side {
        for j in 0..side {
            let ahead = VISION_RADIUS - i;
            let right = j - VISION_RADIUS;
            let pos = me.position.offset(ahead * f.0 + right * r.0, ahead * f.1 + right * r.1);
            let class = if map.is_wall(pos) {
                Channel::Wall
            } else if pos == me.position {
                Channel::Own
            } else if visible.iter().any(|a| a.position == pos) {
                Channel::Other
            } else if state.beams().contains(&pos) {
                Channel::Beam
            } else if state.has_apple(pos) {
                Channel::Apple
            } else if sights.contains(&pos) {
                Channel::Sight
            } else {
                Channel::Empty
            };
            pixels[(i * side + j) as usize] = class;
        }
    }
    Ok(Observation { pixels })
}
