use std::io::{BufRead, Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::DecayTrace;
use crate::{Error, Result};

const BINARY_MAGIC: &[u8; 8] = b"SBFRAME1";
const TEXT_MAGIC: &str = "# spinbath frames v1";

/// Photon-count frames indexed (time, row, column).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFrameSet {
    /// Sequence time of every frame, s.
    pub times: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    /// Exposure per frame, s.
    pub exposure: f64,
    /// Row-major counts, `times.len() × rows × cols`.
    pub counts: Vec<u32>,
}

impl PixelFrameSet {
    pub fn new(times: Vec<f64>, rows: usize, cols: usize, exposure: f64, counts: Vec<u32>) -> Result<Self> {
        let s = Self {
            times,
            rows,
            cols,
            exposure,
            counts,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.times.is_empty() {
            return Err(Error::invalid("frame set must have at least one frame and one pixel"));
        }
        if self.counts.len() != self.times.len() * self.rows * self.cols {
            return Err(Error::invalid(format!(
                "frame data holds {} counts, expected {}×{}×{}",
                self.counts.len(),
                self.times.len(),
                self.rows,
                self.cols
            )));
        }
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("frame times must be strictly ascending"));
        }
        if !(self.exposure >= 0.0 && self.exposure.is_finite()) {
            return Err(Error::invalid("exposure must be finite and non-negative"));
        }
        Ok(())
    }

    #[inline]
    pub fn count(&self, t: usize, r: usize, c: usize) -> u32 {
        self.counts[(t * self.rows + r) * self.cols + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// Rectangular pixel groups, with the tile-grid shape when the tiles form
/// a regular grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouping {
    pub tiles: Vec<Tile>,
    /// (tile rows, tile columns); `(1, tiles.len())` for free-form groupings.
    pub shape: (usize, usize),
}

impl Grouping {
    pub fn whole(rows: usize, cols: usize) -> Self {
        Self {
            tiles: vec![Tile {
                row: 0,
                col: 0,
                height: rows,
                width: cols,
            }],
            shape: (1, 1),
        }
    }

    /// Tiles of `th × tw` pixels covering the frame; edge tiles are cropped.
    pub fn regular(rows: usize, cols: usize, th: usize, tw: usize) -> Result<Self> {
        if th == 0 || tw == 0 {
            return Err(Error::invalid("tile size must be positive"));
        }
        let (nr, nc) = (rows.div_ceil(th), cols.div_ceil(tw));
        let mut tiles = Vec::with_capacity(nr * nc);
        for i in 0..nr {
            for j in 0..nc {
                tiles.push(Tile {
                    row: i * th,
                    col: j * tw,
                    height: th.min(rows - i * th),
                    width: tw.min(cols - j * tw),
                });
            }
        }
        Ok(Self { tiles, shape: (nr, nc) })
    }

    pub fn custom(tiles: Vec<Tile>) -> Self {
        let n = tiles.len();
        Self { tiles, shape: (1, n) }
    }

    fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        if self.tiles.is_empty() {
            return Err(Error::invalid("grouping has no tiles"));
        }
        for (k, t) in self.tiles.iter().enumerate() {
            if t.height == 0 || t.width == 0 {
                return Err(Error::invalid(format!("group {k} is empty")));
            }
            if t.row + t.height > rows || t.col + t.width > cols {
                return Err(Error::invalid(format!("group {k} extends beyond the {rows}×{cols} frame")));
            }
        }
        Ok(())
    }
}

/// Exact per-group count sums, `[group][time]`.
pub fn group_counts(frames: &PixelFrameSet, grouping: &Grouping) -> Result<Vec<Vec<u64>>> {
    frames.validate()?;
    grouping.validate(frames.rows, frames.cols)?;
    Ok(grouping
        .tiles
        .iter()
        .map(|tile| {
            (0..frames.times.len())
                .map(|t| {
                    let mut s = 0u64;
                    for r in tile.row..tile.row + tile.height {
                        for c in tile.col..tile.col + tile.width {
                            s += frames.count(t, r, c) as u64;
                        }
                    }
                    s
                })
                .collect()
        })
        .collect())
}

/// One summed trace per pixel group.
pub fn group_pixels(frames: &PixelFrameSet, grouping: &Grouping, d_omega: f64) -> Result<Vec<DecayTrace>> {
    Ok(group_counts(frames, grouping)?
        .into_iter()
        .zip(&grouping.tiles)
        .map(|(sums, tile)| DecayTrace {
            times: frames.times.clone(),
            values: sums.into_iter().map(|s| s as f64).collect(),
            d_omega,
            metadata: format!(
                "group rows {}..{} cols {}..{}",
                tile.row,
                tile.row + tile.height,
                tile.col,
                tile.col + tile.width
            ),
        })
        .collect())
}

/// Poisson frames with mean `mean_counts × signal(row, col, t)` per pixel.
pub fn synthesize_frames<F>(
    times: &[f64],
    rows: usize,
    cols: usize,
    exposure: f64,
    mean_counts: f64,
    signal: F,
    seed: u64,
) -> Result<PixelFrameSet>
where
    F: Fn(usize, usize, f64) -> f64,
{
    if !(mean_counts >= 0.0 && mean_counts.is_finite()) {
        return Err(Error::invalid("mean counts must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = Vec::with_capacity(times.len() * rows * cols);
    for &t in times {
        for r in 0..rows {
            for c in 0..cols {
                let mean = mean_counts * signal(r, c, t);
                if !(mean >= 0.0 && mean.is_finite()) {
                    return Err(Error::invalid(format!("negative or non-finite pixel signal at ({r}, {c}, {t})")));
                }
                let k = if mean > 0.0 {
                    Poisson::new(mean).unwrap().sample(&mut rng) as u32
                } else {
                    0
                };
                counts.push(k);
            }
        }
    }
    PixelFrameSet::new(times.to_vec(), rows, cols, exposure, counts)
}

/// Self-describing text frame format.
pub fn write_frames_text<W: Write>(frames: &PixelFrameSet, mut w: W) -> Result<()> {
    writeln!(w, "{TEXT_MAGIC}")?;
    writeln!(w, "dims {} {} {}", frames.times.len(), frames.rows, frames.cols)?;
    writeln!(w, "exposure {:e}", frames.exposure)?;
    let times: Vec<String> = frames.times.iter().map(|t| format!("{t:e}")).collect();
    writeln!(w, "times {}", times.join(" "))?;
    for t in 0..frames.times.len() {
        writeln!(w, "frame {t}")?;
        for r in 0..frames.rows {
            let row: Vec<String> = (0..frames.cols).map(|c| frames.count(t, r, c).to_string()).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
    }
    Ok(())
}

/// Little-endian binary: magic, u32 frames/rows/cols, f64 exposure, f64
/// times, u32 counts.
pub fn write_frames_binary<W: Write>(frames: &PixelFrameSet, mut w: W) -> Result<()> {
    w.write_all(BINARY_MAGIC)?;
    for d in [frames.times.len(), frames.rows, frames.cols] {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&frames.exposure.to_le_bytes())?;
    for t in &frames.times {
        w.write_all(&t.to_le_bytes())?;
    }
    for c in &frames.counts {
        w.write_all(&c.to_le_bytes())?;
    }
    Ok(())
}

/// Read either frame format, detected from the leading bytes.
pub fn read_frames<R: Read>(mut r: R) -> Result<PixelFrameSet> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.starts_with(BINARY_MAGIC) {
        read_binary(&bytes)
    } else {
        read_text(&bytes)
    }
}

fn read_binary(bytes: &[u8]) -> Result<PixelFrameSet> {
    let mut pos = BINARY_MAGIC.len();
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::invalid(format!("binary frames truncated at byte {pos}")))?;
        pos += n;
        Ok(s)
    };
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    }
    let exposure = f64::from_le_bytes(take(8)?.try_into().unwrap());
    let times = (0..dims[0])
        .map(|_| Ok(f64::from_le_bytes(take(8)?.try_into().unwrap())))
        .collect::<Result<Vec<_>>>()?;
    let total = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .ok_or_else(|| Error::invalid("binary frame dimensions overflow"))?;
    let counts = (0..total)
        .map(|_| Ok(u32::from_le_bytes(take(4)?.try_into().unwrap())))
        .collect::<Result<Vec<_>>>()?;
    if pos != bytes.len() {
        return Err(Error::invalid(format!("{} trailing bytes after frame data", bytes.len() - pos)));
    }
    PixelFrameSet::new(times, dims[1], dims[2], exposure, counts)
}

fn read_text(bytes: &[u8]) -> Result<PixelFrameSet> {
    let mut lines = bytes.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| -> Result<(usize, String)> {
        loop {
            match lines.next() {
                Some((_, Ok(l))) if l.trim().is_empty() => continue,
                Some((n, Ok(l))) => return Ok((n, l)),
                Some((n, Err(e))) => return Err(Error::invalid(format!("line {n}: {e}"))),
                None => return Err(Error::invalid(format!("unexpected end of file, expected {what}"))),
            }
        }
    };
    let bad = |n: usize, msg: &str| Error::invalid(format!("line {n}: {msg}"));
    let (n, l) = next("header")?;
    if l.trim() != TEXT_MAGIC {
        return Err(bad(n, "not a frame file (missing header)"));
    }
    let keyed = |n: usize, l: &str, key: &str| -> Result<Vec<String>> {
        let mut it = l.split_whitespace();
        if it.next() != Some(key) {
            return Err(bad(n, &format!("expected `{key}`")));
        }
        Ok(it.map(str::to_string).collect())
    };
    let (n, l) = next("dims")?;
    let dims: Vec<usize> = keyed(n, &l, "dims")?
        .iter()
        .map(|s| s.parse().map_err(|_| bad(n, "dims must be three non-negative integers")))
        .collect::<Result<_>>()?;
    if dims.len() != 3 {
        return Err(bad(n, "dims must be three non-negative integers"));
    }
    let (n, l) = next("exposure")?;
    let exposure: f64 = keyed(n, &l, "exposure")?
        .first()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(n, "exposure needs one number"))?;
    let (n, l) = next("times")?;
    let times: Vec<f64> = keyed(n, &l, "times")?
        .iter()
        .map(|s| s.parse().map_err(|_| bad(n, &format!("invalid time `{s}`"))))
        .collect::<Result<_>>()?;
    if times.len() != dims[0] {
        return Err(bad(n, &format!("{} times listed, dims say {}", times.len(), dims[0])));
    }
    let mut counts = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for t in 0..dims[0] {
        let (n, l) = next("frame marker")?;
        if keyed(n, &l, "frame")? != [t.to_string()] {
            return Err(bad(n, &format!("expected `frame {t}`")));
        }
        for _ in 0..dims[1] {
            let (n, l) = next("frame row")?;
            let row: Vec<u32> = l
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| bad(n, &format!("invalid count `{s}`"))))
                .collect::<Result<_>>()?;
            if row.len() != dims[2] {
                return Err(bad(n, &format!("row has {} counts, expected {}", row.len(), dims[2])));
            }
            counts.extend(row);
        }
    }
    PixelFrameSet::new(times, dims[1], dims[2], exposure, counts)
}
