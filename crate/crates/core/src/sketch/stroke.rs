use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_LEN: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PenState {
    Down,
    Lift,
    End,
}

impl PenState {
    pub const ALL: [PenState; 3] = [PenState::Down, PenState::Lift, PenState::End];

    pub fn index(self) -> usize {
        match self {
            PenState::Down => 0,
            PenState::Lift => 1,
            PenState::End => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }

    /// Exactly one entry equal to 1 and the others equal to 0.
    pub fn from_one_hot(v: &[f64]) -> Result<Self> {
        if v.len() != 3 {
            return Err(Error::InvalidSequence(format!(
                "pen vector has {} entries, expected 3",
                v.len()
            )));
        }
        let ones = v.iter().filter(|&&x| x == 1.0).count();
        let zeros = v.iter().filter(|&&x| x == 0.0).count();
        if ones != 1 || zeros != 2 {
            return Err(Error::InvalidSequence(format!(
                "pen vector {v:?} is not one-hot"
            )));
        }
        Ok(Self::from_index(v.iter().position(|&x| x == 1.0).unwrap()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrokePoint {
    pub dx: f64,
    pub dy: f64,
    pub pen: PenState,
}

impl StrokePoint {
    pub fn new(dx: f64, dy: f64, pen: PenState) -> Self {
        Self { dx, dy, pen }
    }

    /// Implicit decoder start token `(0, 0, down)`.
    pub fn start_token() -> Self {
        Self::new(0.0, 0.0, PenState::Down)
    }

    /// Padding point used past the end of a sequence.
    pub fn pad() -> Self {
        Self::new(0.0, 0.0, PenState::End)
    }

    pub fn to_stroke5(self) -> [f64; 5] {
        let p = self.pen.one_hot();
        [self.dx, self.dy, p[0], p[1], p[2]]
    }

    pub fn from_stroke5(row: &[f64]) -> Result<Self> {
        if row.len() != 5 {
            return Err(Error::InvalidSequence(format!(
                "stroke-5 row has {} entries",
                row.len()
            )));
        }
        if !row[0].is_finite() || !row[1].is_finite() {
            return Err(Error::InvalidSequence("non-finite offset".into()));
        }
        Ok(Self::new(
            row[0],
            row[1],
            PenState::from_one_hot(&row[2..])?,
        ))
    }
}

/// Validated sequence of stroke-5 points: non-empty, at most `max_len`
/// points, nothing after the first `End`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<StrokePoint>", into = "Vec<StrokePoint>")]
pub struct StrokeSequence {
    points: Vec<StrokePoint>,
}

impl TryFrom<Vec<StrokePoint>> for StrokeSequence {
    type Error = Error;
    fn try_from(points: Vec<StrokePoint>) -> Result<Self> {
        Self::new(points, usize::MAX)
    }
}

impl From<StrokeSequence> for Vec<StrokePoint> {
    fn from(s: StrokeSequence) -> Self {
        s.points
    }
}

impl StrokeSequence {
    pub fn new(points: Vec<StrokePoint>, max_len: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidSequence("empty sequence".into()));
        }
        if points.len() > max_len {
            return Err(Error::InvalidSequence(format!(
                "length {} exceeds maximum {max_len}",
                points.len()
            )));
        }
        if let Some(end) = points.iter().position(|p| p.pen == PenState::End) {
            if end + 1 != points.len() {
                return Err(Error::InvalidSequence(format!(
                    "{} points follow the end token",
                    points.len() - end - 1
                )));
            }
        }
        if points
            .iter()
            .any(|p| !p.dx.is_finite() || !p.dy.is_finite())
        {
            return Err(Error::InvalidSequence("non-finite offset".into()));
        }
        Ok(Self { points })
    }

    pub fn from_stroke5(rows: &[[f64; 5]], max_len: usize) -> Result<Self> {
        let points = rows
            .iter()
            .map(|r| StrokePoint::from_stroke5(r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(points, max_len)
    }

    pub fn points(&self) -> &[StrokePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_terminated(&self) -> bool {
        self.points.last().is_some_and(|p| p.pen == PenState::End)
    }

    /// Absolute coordinates of each point: running sum of offsets from `(0, 0)`.
    pub fn to_absolute(&self) -> Vec<(f64, f64)> {
        let (mut x, mut y) = (0.0, 0.0);
        self.points
            .iter()
            .map(|p| {
                x += p.dx;
                y += p.dy;
                (x, y)
            })
            .collect()
    }

    /// Offset encoding of absolute coordinates relative to `(0, 0)`.
    pub fn from_absolute(coords: &[(f64, f64)], pens: &[PenState], max_len: usize) -> Result<Self> {
        if coords.len() != pens.len() {
            return Err(Error::InvalidSequence(
                "coordinate and pen counts differ".into(),
            ));
        }
        let mut prev = (0.0, 0.0);
        let points = coords
            .iter()
            .zip(pens)
            .map(|(&(x, y), &pen)| {
                let p = StrokePoint::new(x - prev.0, y - prev.1, pen);
                prev = (x, y);
                p
            })
            .collect();
        Self::new(points, max_len)
    }

    pub(crate) fn map_offsets(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| StrokePoint::new(f(p.dx), f(p.dy), p.pen))
                .collect(),
        }
    }
}
