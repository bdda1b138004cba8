//! Tensor and image files, synthetic vessel images, and tile augmentation.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, malformed, Result};
use crate::scan::rotate_index_grid;
use crate::tensor::{reflect_pad, Tensor, MAX_RANK};

pub const TENSOR_MAGIC: &[u8; 4] = b"PMT1";

/// Serialises a tensor: magic, rank byte, `u32` LE dims, `f32` LE payload.
pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(5 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| crate::Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parses a tensor that must occupy `bytes` exactly. Error offsets are
/// reported relative to `base`.
pub(crate) fn decode_tensor_at(bytes: &[u8], base: u64) -> Result<Tensor> {
    let at = |i: usize| base + i as u64;
    if bytes.len() < 4 {
        return malformed(at(bytes.len()), "truncated magic");
    }
    if &bytes[..4] != TENSOR_MAGIC {
        return malformed(at(0), "bad magic, expected PMT1");
    }
    let Some(&rank) = bytes.get(4) else {
        return malformed(at(4), "missing rank byte");
    };
    let rank = rank as usize;
    if rank > MAX_RANK {
        return malformed(at(4), format!("rank {rank} exceeds {MAX_RANK}"));
    }
    let header = 5 + 4 * rank;
    if bytes.len() < header {
        return malformed(at(bytes.len()), "truncated dimensions");
    }
    let shape: Vec<usize> = bytes[5..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let need = n.and_then(|n| n.checked_mul(4)).and_then(|b| b.checked_add(header));
    let Some(need) = need else {
        return malformed(at(5), "dimensions overflow");
    };
    if bytes.len() < need {
        return malformed(at(bytes.len()), format!("payload truncated, need {} bytes", need - header));
    }
    if bytes.len() > need {
        return malformed(at(need), "trailing bytes after payload");
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::from_vec(&shape, data)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    decode_tensor_at(bytes, 0)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(t)?)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&fs::read(path)?)
}

/// Splits a PNM header into whitespace-separated tokens, skipping `#`
/// comments, and returns the tokens with the offset just past the single
/// whitespace byte that ends the header.
fn pnm_header(bytes: &[u8], tokens: usize) -> Result<(Vec<String>, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < tokens {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
            i += 1;
        }
        if start == i {
            return malformed(i as u64, "truncated header");
        }
        out.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return malformed(i as u64, "header must end with one whitespace byte");
    }
    Ok((out, i + 1))
}

fn header_number(tok: &str, offset: usize, what: &str) -> Result<usize> {
    match tok.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => malformed(offset as u64, format!("bad {what} {tok:?}")),
    }
}

/// Parses a binary P5 greymap with maxval 255 into a `1 × H × W` tensor in
/// `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    let (tok, data_start) = pnm_header(bytes, 4)?;
    if tok[0] != "P5" {
        return malformed(0, format!("expected P5, found {:?}", tok[0]));
    }
    let w = header_number(&tok[1], 0, "width")?;
    let h = header_number(&tok[2], 0, "height")?;
    if tok[3] != "255" {
        return malformed(0, format!("maxval must be 255, found {}", tok[3]));
    }
    let need = data_start + w * h;
    if bytes.len() < need {
        return malformed(bytes.len() as u64, format!("pixel data truncated, need {} bytes", w * h));
    }
    if bytes.len() > need {
        return malformed(need as u64, "trailing bytes after pixel data");
    }
    let data = bytes[data_start..].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::from_vec(&[1, h, w], data)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_pgm(&fs::read(path)?)
}

fn to_byte(v: f64) -> Result<u8> {
    if v.is_nan() {
        return invalid("NaN pixel value");
    }
    Ok((v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// Encodes a `1 × H × W` tensor as P5, clamping to `[0, 1]`.
pub fn encode_pgm(gray: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = gray.dims3()?;
    if c != 1 {
        return invalid(format!("greymap needs 1 channel, got {c}"));
    }
    let mut out = format!("P5 {w} {h} 255\n").into_bytes();
    for &v in gray.data() {
        out.push(to_byte(v)?);
    }
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, gray: &Tensor) -> Result<()> {
    fs::write(path, encode_pgm(gray)?)?;
    Ok(())
}

/// Encodes a `3 × H × W` tensor in `[0, 1]` as P6 with a one-line header.
pub fn encode_ppm(rgb: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = rgb.dims3()?;
    if c != 3 {
        return invalid(format!("pixmap needs 3 channels, got {c}"));
    }
    let mut out = format!("P6 {w} {h} 255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                out.push(to_byte(rgb.at3(ch, y, x))?);
            }
        }
    }
    Ok(out)
}

pub fn write_ppm(path: impl AsRef<Path>, rgb: &Tensor) -> Result<()> {
    fs::write(path, encode_ppm(rgb)?)?;
    Ok(())
}

/// An image with its binary vessel mask, both `1 × H × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair {
    pub image: Tensor,
    pub mask: Tensor,
}

impl SamplePair {
    pub fn new(image: Tensor, mask: Tensor) -> Result<Self> {
        let (c, _, _) = image.dims3()?;
        if c != 1 {
            return invalid(format!("image needs 1 channel, got {c}"));
        }
        image.check_same_shape(&mask)?;
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return invalid("mask must be binary");
        }
        Ok(Self { image, mask })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub size: usize,
    pub n_branches: usize,
    /// Stroke diameter range in pixels.
    pub thickness_range: (f64, f64),
    pub noise_sigma: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            size: 64,
            n_branches: 5,
            thickness_range: (1.0, 3.0),
            noise_sigma: 0.05,
        }
    }
}

impl SynthParams {
    /// Sparser, thinner vessels suited to 16 × 16 crops.
    pub fn small() -> Self {
        Self {
            size: 16,
            n_branches: 2,
            thickness_range: (1.0, 2.0),
            noise_sigma: 0.05,
        }
    }
}

struct Stroke {
    points: Vec<(f64, f64)>,
    headings: Vec<f64>,
}

fn stamp(mask: &mut [f64], size: usize, (x, y): (f64, f64), radius: f64) {
    let lo = |v: f64| (v - radius).floor().max(0.0) as usize;
    let hi = |v: f64| ((v + radius).ceil().max(0.0) as usize).min(size - 1);
    for py in lo(y)..=hi(y) {
        for px in lo(x)..=hi(x) {
            let (dx, dy) = (px as f64 - x, py as f64 - y);
            if dx * dx + dy * dy <= radius * radius {
                mask[py * size + px] = 1.0;
            }
        }
    }
}

/// Generates a vessel-like image and its mask.
///
/// Strokes are random walks with slowly turning headings. The first starts
/// at a random interior point; each later stroke branches off a random
/// point of an earlier one. The image is a blurred copy of the mask on a
/// linear background gradient plus Gaussian noise, clamped to `[0, 1]`.
pub fn synth_vessels(seed: u64, p: &SynthParams) -> Result<SamplePair> {
    let size = p.size;
    if size < 16 {
        return invalid(format!("synthetic image size {size} is below 16"));
    }
    let (t_lo, t_hi) = p.thickness_range;
    if !(t_lo > 0.0 && t_lo <= t_hi && t_hi.is_finite()) {
        return invalid(format!("bad thickness range ({t_lo}, {t_hi})"));
    }
    if !(p.noise_sigma >= 0.0 && p.noise_sigma.is_finite()) {
        return invalid(format!("bad noise sigma {}", p.noise_sigma));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let turn = Normal::new(0.0, 0.25).unwrap();
    let s = size as f64;
    let mut mask = vec![0.0; size * size];
    let mut strokes: Vec<Stroke> = Vec::with_capacity(p.n_branches);
    for _ in 0..p.n_branches {
        let (start, mut heading) = match strokes.len() {
            0 => (
                (rng.random_range(0.2 * s..0.8 * s), rng.random_range(0.2 * s..0.8 * s)),
                rng.random_range(0.0..std::f64::consts::TAU),
            ),
            n => {
                let parent = &strokes[rng.random_range(0..n)];
                let k = rng.random_range(0..parent.points.len());
                let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                (parent.points[k], parent.headings[k] + side * rng.random_range(0.4..1.2))
            }
        };
        let thickness = if t_hi > t_lo { rng.random_range(t_lo..t_hi) } else { t_lo };
        let steps = rng.random_range(size / 2..=size);
        let mut pt = start;
        let mut stroke = Stroke { points: Vec::new(), headings: Vec::new() };
        for i in 0..steps {
            // taper towards the tip, never below one pixel
            let radius = (thickness * (1.0 - 0.5 * i as f64 / steps as f64)).max(1.0) / 2.0;
            stamp(&mut mask, size, pt, radius);
            stroke.points.push(pt);
            stroke.headings.push(heading);
            heading += turn.sample(&mut rng);
            let (mut dx, mut dy) = (heading.cos(), heading.sin());
            // bounce off the border so every stroke keeps its length
            if !(0.0..=s - 1.0).contains(&(pt.0 + dx)) {
                dx = -dx;
            }
            if !(0.0..=s - 1.0).contains(&(pt.1 + dy)) {
                dy = -dy;
            }
            heading = dy.atan2(dx);
            pt = (pt.0 + dx, pt.1 + dy);
        }
        strokes.push(stroke);
    }

    let noise = Normal::new(0.0, p.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let (gx, gy) = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
    let mut image = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut acc = 0.0;
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (yy, xx) = (y as isize + dy, x as isize + dx);
                    if (0..size as isize).contains(&yy) && (0..size as isize).contains(&xx) {
                        acc += mask[yy as usize * size + xx as usize];
                    }
                }
            }
            let background = 0.3 + gx * (x as f64 / s - 0.5) + gy * (y as f64 / s - 0.5);
            let n = if p.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            image[y * size + x] = (background + 0.5 * acc / 9.0 + n).clamp(0.0, 1.0);
        }
    }
    SamplePair::new(
        Tensor::from_vec(&[1, size, size], image)?,
        Tensor::from_vec(&[1, size, size], mask)?,
    )
}

/// `count` pairs drawn with consecutive seeds starting at `seed`.
pub fn synth_dataset(seed: u64, count: usize, p: &SynthParams) -> Result<Vec<SamplePair>> {
    (0..count as u64).map(|i| synth_vessels(seed.wrapping_add(i), p)).collect()
}

/// Rotates every channel of a `C × H × W` tensor by quarter turns
/// counter-clockwise.
pub fn rotate_quarter(t: &Tensor, turns: usize) -> Result<Tensor> {
    let (c, h, w) = t.dims3()?;
    let (rh, rw, map) = rotate_index_grid(h, w, turns);
    let mut data = Vec::with_capacity(t.len());
    for ci in 0..c {
        let plane = t.channel(ci);
        data.extend(map.iter().map(|&i| plane[i]));
    }
    Tensor::from_vec(&[c, rh, rw], data)
}

pub const TILE_GRID: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileOptions {
    pub rotate: bool,
    pub shuffle: bool,
}

impl Default for TileOptions {
    fn default() -> Self {
        Self { rotate: true, shuffle: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub pair: SamplePair,
    pub grid_row: usize,
    pub grid_col: usize,
    pub quarter_turns: usize,
}

/// Cuts a pair into a 4 × 4 grid of tiles, reflect-padding the bottom/right
/// to multiples of four, then rotates, noises and shuffles the tiles.
pub fn tile_and_augment(pair: &SamplePair, seed: u64, noise_sigma: f64, opts: TileOptions) -> Result<Vec<Tile>> {
    let (_, h, w) = pair.image.dims3()?;
    if h < TILE_GRID || w < TILE_GRID {
        return invalid(format!("{h}×{w} is too small to tile {TILE_GRID}×{TILE_GRID}"));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return invalid(format!("bad noise sigma {noise_sigma}"));
    }
    let (ph, pw) = (h.div_ceil(TILE_GRID) * TILE_GRID, w.div_ceil(TILE_GRID) * TILE_GRID);
    let image = reflect_pad(&pair.image, ph, pw)?;
    let mask = reflect_pad(&pair.mask, ph, pw)?;
    let (th, tw) = (ph / TILE_GRID, pw / TILE_GRID);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let cut = |t: &Tensor, r: usize, c: usize| {
        Tensor::from_fn3(1, th, tw, |_, y, x| t.at3(0, r * th + y, c * tw + x))
    };
    let mut tiles = Vec::with_capacity(TILE_GRID * TILE_GRID);
    for r in 0..TILE_GRID {
        for c in 0..TILE_GRID {
            let turns = if opts.rotate { rng.random_range(0..4) } else { 0 };
            let mut img = rotate_quarter(&cut(&image, r, c), turns)?;
            if noise_sigma > 0.0 {
                for v in img.data_mut() {
                    *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
            let msk = rotate_quarter(&cut(&mask, r, c), turns)?;
            tiles.push(Tile {
                pair: SamplePair { image: img, mask: msk },
                grid_row: r,
                grid_col: c,
                quarter_turns: turns,
            });
        }
    }
    if opts.shuffle {
        tiles.shuffle(&mut rng);
    }
    Ok(tiles)
}
