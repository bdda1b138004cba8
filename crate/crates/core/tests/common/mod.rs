//! Independent oracles shared by the integration tests and the acceptance
//! harness. Nothing here calls into the library's numerical code.
#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polymamba::scan::{polygon_gauge, ring_partition, scan_order, PolygonSpec, Variant};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

// ---------------------------------------------------------------- scan

/// Rotates an `h × w` index grid a quarter turn counter-clockwise `turns`
/// times, returning the new size and, per new cell, the old flat index.
pub fn rot90_grid(h: usize, w: usize, turns: usize) -> (usize, usize, Vec<usize>) {
    let mut grid: Vec<Vec<usize>> = (0..h).map(|r| (0..w).map(|c| r * w + c).collect()).collect();
    for _ in 0..turns % 4 {
        let (gh, gw) = (grid.len(), grid[0].len());
        // new[i][j] = old[j][gw - 1 - i]
        grid = (0..gw).map(|i| (0..gh).map(|j| grid[j][gw - 1 - i]).collect()).collect();
    }
    let (rh, rw) = (grid.len(), grid[0].len());
    (rh, rw, grid.into_iter().flatten().collect())
}

/// Regular N-gon gauge of a cell about the grid centre, in the image-up
/// plane frame.
pub fn cell_gauge(h: usize, w: usize, idx: usize, n: usize, theta: f64) -> f64 {
    let (row, col) = (idx / w, idx % w);
    let dx = col as f64 - (w as f64 - 1.0) / 2.0;
    let dy = (h as f64 - 1.0) / 2.0 - row as f64;
    let support = (0..n)
        .map(|i| {
            let phi = theta + (2 * i + 1) as f64 * PI / n as f64;
            dx * phi.cos() + dy * phi.sin()
        })
        .fold(f64::NEG_INFINITY, f64::max);
    (support / (PI / n as f64).cos()).max(0.0)
}

pub fn cell_angle(h: usize, w: usize, idx: usize) -> f64 {
    let (row, col) = (idx / w, idx % w);
    let a = ((h as f64 - 1.0) / 2.0 - row as f64).atan2(col as f64 - (w as f64 - 1.0) / 2.0);
    if a < 0.0 { a + TAU } else { a }
}

/// Checks the unrotated order of one grid: permutation, rings covering the
/// order in sequence, shells consistent with the gauge, strictly nested
/// rings and alternating traversal directions.
pub fn check_base_order(h: usize, w: usize, n: usize, theta: f64) -> Result<(), String> {
    let spec = PolygonSpec::regular(n).with_theta(theta);
    let o = scan_order(h, w, &spec, Variant::Rot0).map_err(|e| e.to_string())?;
    let mut sorted = o.order.clone();
    sorted.sort_unstable();
    if sorted != (0..h * w).collect::<Vec<_>>() {
        return Err(format!("{h}x{w} N={n}: not a permutation"));
    }
    let concat: Vec<usize> = o.rings.iter().flat_map(|r| r.cells.iter().copied()).collect();
    if concat != o.order {
        return Err(format!("{h}x{w} N={n}: rings do not tile the order"));
    }
    let parts = ring_partition(h, w, &spec).map_err(|e| e.to_string())?;
    let mut covered: Vec<usize> = parts.iter().flat_map(|r| r.cells.iter().copied()).collect();
    covered.sort_unstable();
    if covered != sorted {
        return Err(format!("{h}x{w} N={n}: partition is not exhaustive"));
    }
    let g = |i: usize| cell_gauge(h, w, i, n, theta);
    let min_gauge = (0..h * w).map(g).fold(f64::INFINITY, f64::min);
    if o.rings[0].cells.len() != 1 || (g(o.rings[0].cells[0]) - min_gauge).abs() > 1e-9 {
        return Err(format!("{h}x{w} N={n}: ring 0 is not the single nearest cell"));
    }
    for (m, ring) in o.rings.iter().enumerate() {
        if ring.ring_index != m {
            return Err(format!("{h}x{w} N={n}: ring {m} numbered {}", ring.ring_index));
        }
        if m > 0 {
            let s = ring.shell as f64;
            for &c in &ring.cells {
                let gc = g(c);
                if gc > s * (1.0 + 1e-7) || gc <= (s - 1.0) * (1.0 + 1e-7) && ring.shell > 1 {
                    return Err(format!("{h}x{w} N={n}: cell {c} gauge {gc} outside shell {}", ring.shell));
                }
            }
        }
    }
    for pair in o.rings.windows(2).skip(1) {
        let inner = pair[0].cells.iter().map(|&c| g(c)).fold(f64::NEG_INFINITY, f64::max);
        let outer = pair[1].cells.iter().map(|&c| g(c)).fold(f64::INFINITY, f64::min);
        if outer <= inner {
            return Err(format!("{h}x{w} N={n}: ring {} not strictly outside", pair[1].ring_index));
        }
    }
    // sum of raw increments of a ring sorted by angle telescopes to last - first
    let sweep = |cells: &[usize]| cell_angle(h, w, *cells.last().unwrap()) - cell_angle(h, w, cells[0]);
    for pair in o.rings.windows(2) {
        let (a, b) = (&pair[0].cells, &pair[1].cells);
        if a.len() < 2 || b.len() < 2 {
            continue;
        }
        let (sa, sb) = (sweep(a), sweep(b));
        if sa.abs() < 1e-9 || sb.abs() < 1e-9 {
            continue;
        }
        if sa.signum() == sb.signum() {
            return Err(format!("{h}x{w} N={n}: rings {} and {} turn the same way", pair[0].ring_index, pair[1].ring_index));
        }
    }
    Ok(())
}

/// Variant `v` must equal the base order of the rotated grid, mapped back.
pub fn check_variant(h: usize, w: usize, n: usize, theta: f64, v: Variant, turns: usize) -> Result<(), String> {
    let spec = PolygonSpec::regular(n).with_theta(theta);
    let got = scan_order(h, w, &spec, v).map_err(|e| e.to_string())?.order;
    let (rh, rw, map) = rot90_grid(h, w, turns);
    let base = scan_order(rh, rw, &spec, Variant::Rot0).map_err(|e| e.to_string())?.order;
    let expect: Vec<usize> = base.iter().map(|&i| map[i]).collect();
    if got != expect {
        return Err(format!("{h}x{w} N={n} {v}: differs from the rotated-grid order"));
    }
    Ok(())
}

/// Gauge of a vertex-aligned corner, used to sanity-check the library's
/// public gauge against this file's.
pub fn public_gauge_agrees(h: usize, w: usize, n: usize, theta: f64) -> bool {
    let spec = PolygonSpec {
        center: Some(((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0)),
        ..PolygonSpec::regular(n).with_theta(theta)
    };
    (0..h * w).all(|i| {
        let p = ((i % w) as f64, (h - 1 - i / w) as f64);
        (polygon_gauge(p, &spec) - cell_gauge(h, w, i, n, theta)).abs() < 1e-9
    })
}

// ---------------------------------------------------------------- ssm

/// Dense S6 recurrence on a `C × L` row-major sequence, ZOH evaluated
/// without any cancellation-avoiding tricks.
#[allow(clippy::too_many_arguments)]
pub fn dense_scan(
    x: &[f64],
    c: usize,
    l: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    cm: &[f64],
    d: &[f64],
    delta: &[f64],
) -> Vec<f64> {
    let mut y = vec![0.0; c * l];
    for ch in 0..c {
        let mut h = vec![0.0; n];
        for t in 0..l {
            let dt = delta[ch * l + t];
            let xt = x[ch * l + t];
            let mut acc = 0.0;
            for k in 0..n {
                let ak = a[ch * n + k];
                let abar = (dt * ak).exp();
                let bbar = if ak.abs() < 1e-8 { dt * b[t * n + k] } else { (abar - 1.0) / ak * b[t * n + k] };
                h[k] = abar * h[k] + bbar * xt;
                acc += cm[t * n + k] * h[k];
            }
            y[ch * l + t] = acc + d[ch] * xt;
        }
    }
    y
}

// ---------------------------------------------------------------- haar

/// Energy of a map after reflecting one extra row/column onto odd edges.
pub fn padded_energy(x: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let ph = h + h % 2;
    let pw = w + w % 2;
    let src = |i: usize, n: usize| if i < n { i } else if n >= 2 { n - 2 } else { 0 };
    let mut e = 0.0;
    for ch in 0..c {
        for y in 0..ph {
            for xx in 0..pw {
                let v = x[ch * h * w + src(y, h) * w + src(xx, w)];
                e += v * v;
            }
        }
    }
    e
}

// ---------------------------------------------------------------- metrics

pub struct RationalMetrics {
    pub se: Option<BigRational>,
    pub sp: Option<BigRational>,
    pub pr: Option<BigRational>,
    pub iou: Option<BigRational>,
    pub f1: Option<BigRational>,
    pub acc: Option<BigRational>,
}

fn q(num: u64, den: u64) -> Option<BigRational> {
    (den != 0).then(|| BigRational::new(BigInt::from(num), BigInt::from(den)))
}

/// Textbook definitions in exact arithmetic; F1 as the harmonic mean of
/// precision and recall.
pub fn rational_metrics(tp: u64, fp: u64, tn: u64, fn_: u64) -> RationalMetrics {
    let se = q(tp, tp + fn_);
    let pr = q(tp, tp + fp);
    let two = BigRational::from_integer(BigInt::from(2));
    let f1 = match (&pr, &se) {
        (Some(p), Some(s)) if p + s != BigRational::from_integer(BigInt::from(0)) => {
            Some(&two * p * s / (p + s))
        }
        _ => None,
    };
    RationalMetrics {
        se,
        sp: q(tn, tn + fp),
        pr,
        iou: q(tp, tp + fp + fn_),
        f1,
        acc: q(tp + tn, tp + fp + tn + fn_),
    }
}

/// True when `v` is the double nearest to `exact`: neither neighbouring
/// double is closer.
pub fn is_nearest_double(v: f64, exact: &BigRational) -> bool {
    let zero = BigRational::from_integer(BigInt::from(0));
    let dist = |x: f64| {
        BigRational::from_float(x).map(|r| {
            let d = r - exact;
            if d < zero { -d } else { d }
        })
    };
    let Some(d) = dist(v) else { return false };
    [f64::from_bits(v.to_bits() + 1), f64::from_bits(v.to_bits().wrapping_sub(1))]
        .into_iter()
        .filter(|n| n.is_finite() && *n >= 0.0)
        .all(|n| dist(n).is_none_or(|dn| d <= dn))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn mann_whitney(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

// ---------------------------------------------------------------- params

fn conv_n(i: usize, o: usize, k: usize) -> usize {
    o * i * k * k + o
}

fn dw_n(c: usize, k: usize) -> usize {
    c * k * k + c
}

fn ln_n(c: usize) -> usize {
    2 * c
}

fn ssm_n(c: usize, n: usize) -> usize {
    // A (C×N), D (C), B and C projections (N×C each), Δ projection (C×C) + bias
    c * n + c + 2 * n * c + c * c + c
}

fn double_n(i: usize, o: usize) -> usize {
    conv_n(i, o, 3) + ln_n(o) + conv_n(o, o, 3) + ln_n(o)
}

fn global_n(c: usize, n: usize) -> usize {
    ln_n(c) + dw_n(c, 3) + 4 * ssm_n(c, n) + ln_n(c) + conv_n(c, c, 1)
}

pub fn sfcam_n(c: usize, n: usize) -> usize {
    let local = 2 * conv_n(c, c, 1) + conv_n(c, c, 3) + conv_n(c, c, 5) + conv_n(3 * c, c, 1) + conv_n(c, c, 3);
    let wavelet = conv_n(3 * c, c, 1) + dw_n(c, 3) + 3 * conv_n(c, c, 1);
    let bcfm = 2 * ln_n(c) + conv_n(1, 1, 1) + conv_n(1, 1, 3) + conv_n(c, 3 * c, 1);
    local + global_n(c, n) + wavelet + 2 * bcfm + conv_n(4 * c, c, 1) + conv_n(c, c, 3)
}

/// Shape arithmetic for the full network.
pub fn network_param_count(levels: usize, base: usize, n: usize) -> usize {
    let ch = |l: usize| base << l;
    let mut total = 0;
    for l in 0..levels {
        total += double_n(if l == 0 { 1 } else { ch(l - 1) }, ch(l));
        total += sfcam_n(ch(l), n) + double_n(ch(l) + ch(l + 1), ch(l));
    }
    total += conv_n(ch(levels - 1), ch(levels), 3) + ln_n(ch(levels)) + global_n(ch(levels), n);
    total + conv_n(base, 1, 1)
}

// ---------------------------------------------------------------- sfcam

/// Reads parameters in declaration order.
pub struct Cursor<'a> {
    v: &'a [f64],
    i: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(v: &'a [f64]) -> Self {
        Self { v, i: 0 }
    }

    pub fn take(&mut self, n: usize) -> &'a [f64] {
        let s = &self.v[self.i..self.i + n];
        self.i += n;
        s
    }

    pub fn one(&mut self) -> f64 {
        self.take(1)[0]
    }

    pub fn used(&self) -> usize {
        self.i
    }
}

type M2 = [[f64; 2]; 2];

/// Zero-padded "same" convolution of a 2×2 map with a k×k kernel.
fn conv_2x2(x: &M2, kern: &[f64], k: usize, bias: f64) -> M2 {
    let r = (k / 2) as isize;
    let mut out = [[bias; 2]; 2];
    for (y, row) in out.iter_mut().enumerate() {
        for (xx, o) in row.iter_mut().enumerate() {
            for ky in 0..k {
                for kx in 0..k {
                    let sy = y as isize + ky as isize - r;
                    let sx = xx as isize + kx as isize - r;
                    if (0..2).contains(&sy) && (0..2).contains(&sx) {
                        *o += kern[ky * k + kx] * x[sy as usize][sx as usize];
                    }
                }
            }
        }
    }
    out
}

fn conv_k(p: &mut Cursor, x: &M2, k: usize) -> M2 {
    let kern = p.take(k * k);
    let b = p.one();
    conv_2x2(x, kern, k, b)
}

fn affine(x: &M2, w: f64, b: f64) -> M2 {
    x.map(|r| r.map(|v| w * v + b))
}

fn konst(v: f64) -> M2 {
    [[v; 2]; 2]
}

/// One-channel layer norm: every position normalises a single value.
fn ln_1(p: &mut Cursor, x: &M2, eps: f64) -> M2 {
    let (g, b) = (p.one(), p.one());
    // the mean of one value is itself and its variance is zero
    x.map(|r| r.map(|v| {
        let (mean, var) = (v, 0.0);
        (v - mean) / (var + eps).sqrt() * g + b
    }))
}

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn flat(x: &M2) -> [f64; 4] {
    [x[0][0], x[0][1], x[1][0], x[1][1]]
}

fn unflat(v: [f64; 4]) -> M2 {
    [[v[0], v[1]], [v[2], v[3]]]
}

/// The four pentagon orders of a 2×2 grid (Rot0, Rot90, Rot180, Rot270).
pub const PENTAGON_2X2: [[usize; 4]; 4] = [[0, 3, 2, 1], [1, 2, 0, 3], [3, 0, 1, 2], [2, 1, 3, 0]];

fn ssm_dir(p: &mut Cursor, seq: [f64; 4], n: usize) -> [f64; 4] {
    let a_log = p.take(n);
    let d = p.one();
    let w_b = p.take(n);
    let w_c = p.take(n);
    let w_dt = p.one();
    let b_dt = p.one();
    let mut h = vec![0.0; n];
    let mut y = [0.0; 4];
    for t in 0..4 {
        let s = seq[t];
        let z = w_dt * s + b_dt;
        let dt = if z > 30.0 { z } else { (1.0 + z.exp()).ln() };
        let mut acc = 0.0;
        for k in 0..n {
            let a = -a_log[k].exp();
            let abar = (dt * a).exp();
            h[k] = abar * h[k] + (abar - 1.0) / a * (w_b[k] * s) * s;
            acc += w_c[k] * s * h[k];
        }
        y[t] = acc + d * s;
    }
    y
}

fn bcfm_1(p: &mut Cursor, a: &M2, b: &M2, eps: f64) -> (M2, M2) {
    let la = ln_1(p, a, eps);
    let lb = ln_1(p, b, eps);
    let prod = [[la[0][0] * lb[0][0], la[0][1] * lb[0][1]], [la[1][0] * lb[1][0], la[1][1] * lb[1][1]]];
    let (sw, sb) = (p.one(), p.one());
    let squeezed = affine(&prod, sw, sb);
    let gate = conv_k(p, &squeezed, 3).map(|r| r.map(sig));
    let mut ah = *a;
    let mut bh = *b;
    for y in 0..2 {
        for x in 0..2 {
            ah[y][x] = a[y][x] * gate[y][x] + a[y][x];
            bh[y][x] = b[y][x] * gate[y][x] + b[y][x];
        }
    }
    let w = p.take(3);
    let bias = p.take(3);
    let proj = |m: &M2, j: usize| flat(&affine(m, w[j], bias[j]));
    let (qa, ka, va) = (proj(&ah, 0), proj(&ah, 1), proj(&ah, 2));
    let (qb, kb, vb) = (proj(&bh, 0), proj(&bh, 1), proj(&bh, 2));
    let attend = |q: [f64; 4], k: [f64; 4], v: [f64; 4]| {
        let mut out = [0.0; 4];
        for t in 0..4 {
            let s: Vec<f64> = (0..4).map(|u| q[t] * k[u]).collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            out[t] = (0..4).map(|u| e[u] / z * v[u]).sum();
        }
        unflat(out)
    };
    (attend(qa, kb, vb), attend(qb, ka, va))
}

/// Straight-line forward of the one-channel block on a 2×2 map, reading
/// parameters in declaration order. Returns the output and the number of
/// parameters consumed.
pub fn sfcam_2x2(x: &M2, params: &[f64], n: usize, eps: f64) -> (M2, usize) {
    let mut p = Cursor::new(params);

    // local: 1×1 → (1×1, 3×3, 5×5) → 1×1 fuse → 3×3
    let (rw, rb) = (p.one(), p.one());
    let fb = affine(x, rw, rb);
    let (k1w, k1b) = (p.one(), p.one());
    let b1 = affine(&fb, k1w, k1b);
    let b3 = conv_k(&mut p, &fb, 3);
    let b5 = conv_k(&mut p, &fb, 5);
    let fw = p.take(3);
    let fbias = p.one();
    let mut fused = konst(fbias);
    for y in 0..2 {
        for xx in 0..2 {
            fused[y][xx] += fw[0] * b1[y][xx] + fw[1] * b3[y][xx] + fw[2] * b5[y][xx];
        }
    }
    let local = conv_k(&mut p, &fused, 3);

    // global
    let normed = ln_1(&mut p, x, eps);
    let dw = conv_k(&mut p, &normed, 3);
    let seq_src = flat(&dw);
    let mut merged = [0.0; 4];
    for order in PENTAGON_2X2 {
        let seq = order.map(|i| seq_src[i]);
        let y = ssm_dir(&mut p, seq, n);
        for t in 0..4 {
            merged[order[t]] += y[t];
        }
    }
    let x1 = ln_1(&mut p, &unflat(merged), eps);
    let (lw, lb) = (p.one(), p.one());
    let mut global = dw;
    for y in 0..2 {
        for xx in 0..2 {
            let z = lw * normed[y][xx] + lb;
            global[y][xx] += x1[y][xx] * (z * sig(z));
        }
    }

    // wavelet: one 2×2 block, so every band is a single value and the
    // bilinear lift is constant
    let [a, b, c, d] = flat(x);
    let (ll, lh, hl, hh) = ((a + b + c + d) / 2.0, (a - b + c - d) / 2.0, (a + b - c - d) / 2.0, (a - b - c + d) / 2.0);
    let hw = p.take(3);
    let hb = p.one();
    let r = hw[0] * lh + hw[1] * hl + hw[2] * hh + hb;
    let dk = p.take(9);
    let dkb = p.one();
    let r = dk[4] * r + dkb;
    let (mw, mb) = (p.one(), p.one());
    let r = mw * r + mb;
    let (pw, pb) = (p.one(), p.one());
    let high = konst(pw * r + pb);
    let (ow, ob) = (p.one(), p.one());
    let low = konst(ow * ll + ob);

    let (local_x, high_x) = bcfm_1(&mut p, &local, &high, eps);
    let (global_x, low_x) = bcfm_1(&mut p, &global, &low, eps);

    let cw = p.take(4);
    let cb = p.one();
    let mut pre = konst(cb);
    for y in 0..2 {
        for xx in 0..2 {
            pre[y][xx] += cw[0] * local_x[y][xx] + cw[1] * high_x[y][xx] + cw[2] * global_x[y][xx] + cw[3] * low_x[y][xx]
                + x[y][xx];
        }
    }
    let mut out = conv_k(&mut p, &pre, 3);
    for y in 0..2 {
        for xx in 0..2 {
            out[y][xx] += x[y][xx];
        }
    }
    (out, p.used())
}
