//! Polygon scan orders.
//!
//! A grid is peeled into nested polygonal shells around a centre point. Each
//! shell is traversed by angle about the centre, with the sweep direction
//! flipping from one shell to the next, and the shells are concatenated
//! inner to outer. Four rotated variants of the same order feed the
//! cross-scan / cross-merge pair used by the 2D selective scan.
//!
//! Coordinates: a grid cell `(row, col)` of an `H × W` grid lives at the
//! plane point `(x, y) = (col, H - 1 - row)`, so `y` points up the image and
//! angles are measured counter-clockwise from the column axis.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

/// Gauge values within this relative distance of a shell boundary belong to
/// the inner shell.
const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolygonSpec {
    pub n_sides: usize,
    /// Phase of vertex 0 relative to the x axis, in radians.
    pub theta: f64,
    /// Plane coordinates `(a, b)` of the centre. `None` means the grid centre
    /// `((W - 1) / 2, (H - 1) / 2)`.
    pub center: Option<(f64, f64)>,
    /// Gauge increment per shell, in cells.
    pub scale_step: f64,
}

impl Default for PolygonSpec {
    fn default() -> Self {
        Self::regular(5)
    }
}

impl PolygonSpec {
    pub fn regular(n_sides: usize) -> Self {
        Self {
            n_sides,
            theta: 0.0,
            center: None,
            scale_step: 1.0,
        }
    }

    pub fn with_theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    /// Maps the shape names used by the ablation tables onto side counts.
    pub fn from_shape_name(name: &str) -> Option<Self> {
        let n = match name {
            "triangle" => 3,
            "quadrilateral" => 4,
            "pentagon" => 5,
            "hexagon" => 6,
            "octagon" => 8,
            _ => return None,
        };
        Some(Self::regular(n))
    }

    pub fn shape_name(&self) -> Option<&'static str> {
        Some(match self.n_sides {
            3 => "triangle",
            4 => "quadrilateral",
            5 => "pentagon",
            6 => "hexagon",
            8 => "octagon",
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sides < 3 {
            return invalid(format!("polygon needs at least 3 sides, got {}", self.n_sides));
        }
        if !(self.scale_step.is_finite() && self.scale_step > 0.0) {
            return invalid(format!("scale_step must be positive, got {}", self.scale_step));
        }
        if !self.theta.is_finite() {
            return invalid("theta must be finite");
        }
        if let Some((a, b)) = self.center {
            if !(a.is_finite() && b.is_finite()) {
                return invalid("polygon centre must be finite");
            }
        }
        Ok(())
    }

    fn center_or_origin(&self) -> (f64, f64) {
        self.center.unwrap_or((0.0, 0.0))
    }

    fn grid_center(&self, height: usize, width: usize) -> (f64, f64) {
        self.center
            .unwrap_or(((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0))
    }
}

/// Vertices `(a + R cos φ_i, b + R sin φ_i)` with `φ_i = θ + 2πi/N`.
///
/// An unset centre is taken as the origin.
pub fn polygon_vertices(spec: &PolygonSpec, radius: f64) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    if !radius.is_finite() || radius <= 0.0 {
        return invalid(format!("radius must be positive and finite, got {radius}"));
    }
    let (a, b) = spec.center_or_origin();
    let n = spec.n_sides;
    Ok((0..n)
        .map(|i| {
            let phi = spec.theta + TAU * i as f64 / n as f64;
            (a + radius * phi.cos(), b + radius * phi.sin())
        })
        .collect())
}

/// Smallest circumradius `s` such that `point` lies in the regular N-gon of
/// circumradius `s` centred on the spec centre.
pub fn polygon_gauge(point: (f64, f64), spec: &PolygonSpec) -> f64 {
    let (a, b) = spec.center_or_origin();
    gauge_of_offset(point.0 - a, point.1 - b, spec.n_sides, spec.theta)
}

/// Edge `i` joins vertices `i` and `i + 1`; its outward normal sits at angle
/// `θ + (2i + 1)π/N` and its distance from the centre is `s·cos(π/N)`.
fn gauge_of_offset(dx: f64, dy: f64, n_sides: usize, theta: f64) -> f64 {
    if dx == 0.0 && dy == 0.0 {
        return 0.0;
    }
    let n = n_sides as f64;
    let apothem = (PI / n).cos();
    let support = (0..n_sides)
        .map(|i| {
            let phi = theta + (2 * i + 1) as f64 * PI / n;
            dx * phi.cos() + dy * phi.sin()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    (support / apothem).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    fn for_ring(ring_index: usize) -> Self {
        if ring_index % 2 == 0 {
            Direction::Forward
        } else {
            Direction::Reverse
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanRing {
    /// Layer number counted outward from the centre shell.
    pub ring_index: usize,
    /// Raw shell number `⌈gauge / scale_step⌉`. Equals `ring_index` unless
    /// the polygon is coarse enough that some shells contain no cell, in
    /// which case the empty shells are skipped when numbering layers.
    pub shell: usize,
    pub cells: Vec<usize>,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Rot0,
    Rot90,
    Rot180,
    Rot270,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Rot0, Variant::Rot90, Variant::Rot180, Variant::Rot270];

    fn quarter_turns(self) -> usize {
        match self {
            Variant::Rot0 => 0,
            Variant::Rot90 => 1,
            Variant::Rot180 => 2,
            Variant::Rot270 => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rot0 => "rot0",
            Variant::Rot90 => "rot90",
            Variant::Rot180 => "rot180",
            Variant::Rot270 => "rot270",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "rot0" | "0" => Variant::Rot0,
            "rot90" | "90" => Variant::Rot90,
            "rot180" | "180" => Variant::Rot180,
            "rot270" | "270" => Variant::Rot270,
            other => return invalid(format!("unknown scan variant '{other}'")),
        })
    }
}

/// Counter-clockwise rotation of the index grid by `turns` quarter turns.
///
/// Returns the rotated grid's dimensions and, for each rotated position in
/// row-major order, the flat index of the original cell found there.
pub fn rotate_index_grid(height: usize, width: usize, turns: usize) -> (usize, usize, Vec<usize>) {
    let (rh, rw) = if turns % 2 == 0 { (height, width) } else { (width, height) };
    let mut map = Vec::with_capacity(height * width);
    for i in 0..rh {
        for j in 0..rw {
            let (r, c) = match turns % 4 {
                0 => (i, j),
                1 => (j, width - 1 - i),
                2 => (height - 1 - i, width - 1 - j),
                _ => (height - 1 - j, i),
            };
            map.push(r * width + c);
        }
    }
    (rh, rw, map)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOrder {
    pub height: usize,
    pub width: usize,
    pub order: Vec<usize>,
    pub rings: Vec<ScanRing>,
    pub variant: Variant,
    pub polygon: PolygonSpec,
}

struct CellGeom {
    gauge: f64,
    angle: f64,
}

fn cell_geometry(height: usize, width: usize, spec: &PolygonSpec) -> Vec<CellGeom> {
    let (a, b) = spec.grid_center(height, width);
    let exact = spec.center.is_none();
    let mut cells = Vec::with_capacity(height * width);
    for row in 0..height {
        for col in 0..width {
            let dx = col as f64 - a;
            let dy = (height - 1 - row) as f64 - b;
            cells.push(CellGeom {
                gauge: gauge_of_offset(dx, dy, spec.n_sides, spec.theta),
                angle: if exact {
                    lattice_angle(row, col, height, width)
                } else {
                    normalize_angle(dy.atan2(dx))
                },
            });
        }
    }
    cells
}

/// Angle of a cell about the default grid centre, computed from the
/// gcd-reduced doubled offset so collinear cells get bit-identical angles.
fn lattice_angle(row: usize, col: usize, height: usize, width: usize) -> f64 {
    let dx = 2 * col as i64 - (width as i64 - 1);
    let dy = (height as i64 - 1) - 2 * row as i64;
    if dx == 0 && dy == 0 {
        return 0.0;
    }
    let g = gcd(dx.unsigned_abs(), dy.unsigned_abs()) as i64;
    normalize_angle(((dy / g) as f64).atan2((dx / g) as f64))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn normalize_angle(a: f64) -> f64 {
    let a = if a < 0.0 { a + TAU } else { a };
    // fold TAU itself (from tiny negative inputs) and -0.0 onto 0
    if a >= TAU { 0.0 } else { a + 0.0 }
}

fn shell_of(gauge: f64, step: f64) -> usize {
    let s = gauge / step;
    (s - BOUNDARY_EPS * s.max(1.0)).ceil().max(0.0) as usize
}

/// Assigns every cell of an `H × W` grid to a shell. Cells inside each ring
/// are listed in row-major order.
pub fn ring_partition(height: usize, width: usize, spec: &PolygonSpec) -> Result<Vec<ScanRing>> {
    if height == 0 || width == 0 {
        return invalid(format!("empty grid {height}×{width}"));
    }
    spec.validate()?;
    let geom = cell_geometry(height, width, spec);
    Ok(partition_from_geometry(&geom, spec.scale_step))
}

fn partition_from_geometry(geom: &[CellGeom], step: f64) -> Vec<ScanRing> {
    // nearest cell, lowest flat index on ties
    let seed = (0..geom.len())
        .min_by(|&i, &j| geom[i].gauge.total_cmp(&geom[j].gauge).then(i.cmp(&j)))
        .expect("non-empty grid");
    let mut shells: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    shells.insert(0, vec![seed]);
    for (i, g) in geom.iter().enumerate() {
        if i == seed {
            continue;
        }
        let s = shell_of(g.gauge, step).max(1);
        shells.entry(s).or_default().push(i);
    }
    shells
        .into_iter()
        .enumerate()
        .map(|(ring_index, (shell, cells))| ScanRing {
            ring_index,
            shell,
            cells,
            direction: Direction::for_ring(ring_index),
        })
        .collect()
}

/// Builds the polygon scan order for one rotation variant.
pub fn scan_order(height: usize, width: usize, spec: &PolygonSpec, variant: Variant) -> Result<ScanOrder> {
    if height == 0 || width == 0 {
        return invalid(format!("empty grid {height}×{width}"));
    }
    spec.validate()?;
    let (rh, rw, to_original) = rotate_index_grid(height, width, variant.quarter_turns());
    let geom = cell_geometry(rh, rw, spec);
    let mut rings = partition_from_geometry(&geom, spec.scale_step);
    let mut order = Vec::with_capacity(height * width);
    for ring in &mut rings {
        let forward = ring.direction == Direction::Forward;
        ring.cells.sort_by(|&i, &j| {
            let by_angle = geom[i].angle.total_cmp(&geom[j].angle);
            let by_angle = if forward { by_angle } else { by_angle.reverse() };
            by_angle
                .then(geom[i].gauge.total_cmp(&geom[j].gauge))
                .then(i.cmp(&j))
        });
        for c in &mut ring.cells {
            *c = to_original[*c];
        }
        order.extend_from_slice(&ring.cells);
    }
    Ok(ScanOrder {
        height,
        width,
        order,
        rings,
        variant,
        polygon: *spec,
    })
}

/// The four rotated variants in `Rot0, Rot90, Rot180, Rot270` order.
pub fn scan_orders(height: usize, width: usize, spec: &PolygonSpec) -> Result<[ScanOrder; 4]> {
    let [a, b, c, d] = Variant::ALL.map(|v| scan_order(height, width, spec, v));
    Ok([a?, b?, c?, d?])
}

impl ScanOrder {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `inverse[cell] = position of cell in the traversal`.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.order.len()];
        for (k, &cell) in self.order.iter().enumerate() {
            inv[cell] = k;
        }
        inv
    }

    /// `H W N theta variant` on the first line, the permutation on the second.
    pub fn to_text(&self) -> String {
        let perm: Vec<String> = self.order.iter().map(|i| i.to_string()).collect();
        format!(
            "{} {} {} {} {}\n{}\n",
            self.height,
            self.width,
            self.polygon.n_sides,
            self.polygon.theta,
            self.variant,
            perm.join(" ")
        )
    }

    /// RGB heat map (`3 × H × W`, values `k / 255`) whose hue runs from red at
    /// the first visited cell to magenta at the last.
    pub fn heatmap(&self) -> Tensor {
        let n = self.order.len();
        let (h, w) = (self.height, self.width);
        let mut rgb = Tensor::zeros(&[3, h, w]);
        for (rank, &cell) in self.order.iter().enumerate() {
            let hue = if n > 1 { 300.0 * rank as f64 / (n - 1) as f64 } else { 0.0 };
            let px = hue_to_rgb8(hue);
            for (ch, v) in px.iter().enumerate() {
                rgb.set3(ch, cell / w, cell % w, f64::from(*v) / 255.0);
            }
        }
        rgb
    }
}

/// Fully saturated, full-value HSV colour for a hue in degrees.
fn hue_to_rgb8(hue: f64) -> [u8; 3] {
    let h = hue / 60.0;
    let sector = (h.floor() as i64).rem_euclid(6);
    let f = h - h.floor();
    let up = (f * 255.0).round() as u8;
    let down = 255 - up;
    match sector {
        0 => [255, up, 0],
        1 => [down, 255, 0],
        2 => [0, 255, up],
        3 => [0, down, 255],
        4 => [up, 0, 255],
        _ => [255, 0, down],
    }
}

/// Parsed form of [`ScanOrder::to_text`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScanOrderText {
    pub height: usize,
    pub width: usize,
    pub n_sides: usize,
    pub theta: f64,
    pub variant: Variant,
    pub order: Vec<usize>,
}

impl FromStr for ScanOrderText {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s.lines();
        let header = lines.next().ok_or_else(|| Error::InvalidArgument("empty scan order".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let [h, w, n, theta, variant] = fields[..] else {
            return invalid(format!("bad scan order header '{header}'"));
        };
        let num = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::InvalidArgument(format!("bad integer '{v}'")))
        };
        let order = lines
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(num)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            height: num(h)?,
            width: num(w)?,
            n_sides: num(n)?,
            theta: theta
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad theta '{theta}'")))?,
            variant: variant.parse()?,
            order,
        })
    }
}

fn check_orders(orders: &[ScanOrder], h: usize, w: usize) -> Result<()> {
    if orders.is_empty() {
        return invalid("at least one scan order is required");
    }
    for o in orders {
        if (o.height, o.width) != (h, w) || o.order.len() != h * w {
            return invalid(format!(
                "scan order is {}×{}, feature map is {h}×{w}",
                o.height, o.width
            ));
        }
    }
    Ok(())
}

/// Gathers a `C × H × W` map into one `C × (H·W)` sequence per order.
pub fn cross_scan(feature: &Tensor, orders: &[ScanOrder]) -> Result<Vec<Tensor>> {
    let (c, h, w) = feature.dims3()?;
    check_orders(orders, h, w)?;
    let plane = h * w;
    let src = feature.data();
    Ok(orders
        .iter()
        .map(|o| {
            let mut data = Vec::with_capacity(c * plane);
            for ci in 0..c {
                let chan = &src[ci * plane..(ci + 1) * plane];
                data.extend(o.order.iter().map(|&cell| chan[cell]));
            }
            Tensor::from_vec(&[c, plane], data).expect("shape by construction")
        })
        .collect())
}

/// Scatters each sequence back through its order and sums the maps.
///
/// The sum is a fixed pairwise tree over the directions, so merging four
/// copies of the same map is exactly `4 · x`.
pub fn cross_merge(seqs: &[Tensor], orders: &[ScanOrder]) -> Result<Tensor> {
    let Some(first) = orders.first() else {
        return invalid("at least one scan order is required");
    };
    let (h, w) = (first.height, first.width);
    check_orders(orders, h, w)?;
    if seqs.len() != orders.len() {
        return invalid(format!("{} sequences for {} orders", seqs.len(), orders.len()));
    }
    let plane = h * w;
    let c = seqs[0].dims2()?.0;
    let maps = seqs
        .iter()
        .zip(orders)
        .map(|(s, o)| {
            let (sc, len) = s.dims2()?;
            if sc != c || len != plane {
                return invalid(format!("sequence {sc}×{len} does not match {c}×{plane}"));
            }
            let mut map = vec![0.0; c * plane];
            let data = s.data();
            for ci in 0..c {
                for (k, &cell) in o.order.iter().enumerate() {
                    map[ci * plane + cell] = data[ci * plane + k];
                }
            }
            Ok(map)
        })
        .collect::<Result<Vec<_>>>()?;
    let summed = pairwise_sum(maps);
    Tensor::from_vec(&[c, h, w], summed)
}

fn pairwise_sum(mut maps: Vec<Vec<f64>>) -> Vec<f64> {
    while maps.len() > 1 {
        let mut next = Vec::with_capacity(maps.len().div_ceil(2));
        let mut it = maps.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += *y;
                }
            }
            next.push(a);
        }
        maps = next;
    }
    maps.pop().unwrap_or_default()
}
