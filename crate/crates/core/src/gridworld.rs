//! Occupancy maps, exact Euclidean distance transforms, and the TSDF speed model.
//!
//! Grids are stored row-major with row 0 at the bottom (lowest world `y`).
//! The map border is treated as an obstacle: distances are measured to the
//! nearest occupied cell center *or* to a virtual ring of occupied cells
//! surrounding the grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Bounds, Config2, Error, Real, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid<T> {
    pub width: usize,
    pub height: usize,
    pub cell_size: T,
    /// World coordinates of the lower-left corner of cell (0, 0).
    pub origin: Config2<T>,
    /// Row-major, `true` = occupied.
    pub cells: Vec<bool>,
}

impl<T: Real> OccupancyGrid<T> {
    pub fn new(
        width: usize,
        height: usize,
        cell_size: T,
        origin: Config2<T>,
        cells: Vec<bool>,
    ) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid must be at least 2x2, got {width}x{height}"
            )));
        }
        if cells.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} cells, got {}",
                width * height,
                cells.len()
            )));
        }
        if !(cell_size > T::zero()) || !cell_size.is_finite() {
            return Err(Error::InvalidArgument("cell_size must be positive".into()));
        }
        if !origin.is_finite() {
            return Err(Error::InvalidArgument("origin must be finite".into()));
        }
        Ok(OccupancyGrid {
            width,
            height,
            cell_size,
            origin,
            cells,
        })
    }

    /// All-free grid with unit origin at (0, 0).
    pub fn empty(width: usize, height: usize, cell_size: T) -> Result<Self> {
        Self::new(
            width,
            height,
            cell_size,
            Config2::default(),
            vec![false; width * height],
        )
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    #[inline]
    pub fn is_occupied(&self, i: usize, j: usize) -> bool {
        self.cells[self.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, occupied: bool) {
        let k = self.index(i, j);
        self.cells[k] = occupied;
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Config2<T> {
        let half = T::lit(0.5);
        Config2([
            self.origin[0] + (T::from_usize(i).unwrap() + half) * self.cell_size,
            self.origin[1] + (T::from_usize(j).unwrap() + half) * self.cell_size,
        ])
    }

    pub fn bounds(&self) -> Bounds<T> {
        let ext = Config2([
            T::from_usize(self.width).unwrap() * self.cell_size,
            T::from_usize(self.height).unwrap() * self.cell_size,
        ]);
        Bounds::new(self.origin, self.origin + ext)
    }

    /// Cell containing `q`; points on the upper domain edge map to the last cell.
    pub fn cell_of(&self, q: &Config2<T>) -> Option<(usize, usize)> {
        if !self.bounds().contains(q) {
            return None;
        }
        let fx = ((q[0] - self.origin[0]) / self.cell_size).floor();
        let fy = ((q[1] - self.origin[1]) / self.cell_size).floor();
        let i = fx.to_usize().unwrap_or(0).min(self.width - 1);
        let j = fy.to_usize().unwrap_or(0).min(self.height - 1);
        Some((i, j))
    }

    /// Serializes as binary PGM (P5); occupied cells are black, free cells white.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        for row in (0..self.height).rev() {
            for i in 0..self.width {
                out.push(if self.is_occupied(i, row) { 0 } else { 255 });
            }
        }
        out
    }
}

/// Parses a P2 or P5 PGM image. Pixels below 128 are occupied; image row 0 is the top of the map.
pub fn load_pgm<T: Real>(bytes: &[u8], cell_size: T, origin: Config2<T>) -> Result<OccupancyGrid<T>> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos).ok_or_else(|| Error::Parse("missing magic".into()))?;
    let binary = match magic.as_slice() {
        b"P2" => false,
        b"P5" => true,
        other => {
            return Err(Error::Parse(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let width = next_number(bytes, &mut pos, "width")?;
    let height = next_number(bytes, &mut pos, "height")?;
    let maxval = next_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Parse(format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Parse(format!("maxval {maxval} outside 1..=255")));
    }
    let n = width * height;
    let pixels: Vec<u8> = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        pos += 1;
        let raster = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::Parse(format!("expected {n} raster bytes")))?;
        raster.to_vec()
    } else {
        let mut px = Vec::with_capacity(n);
        for _ in 0..n {
            let v = next_number(bytes, &mut pos, "pixel")?;
            if v > maxval {
                return Err(Error::Parse(format!("pixel {v} exceeds maxval {maxval}")));
            }
            px.push(v as u8);
        }
        px
    };
    let mut cells = vec![false; n];
    for (r, row) in pixels.chunks_exact(width).enumerate() {
        let j = height - 1 - r;
        for (i, &v) in row.iter().enumerate() {
            cells[j * width + i] = v < 128;
        }
    }
    OccupancyGrid::new(width, height, cell_size, origin, cells).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::Parse(m),
        other => other,
    })
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Option<Vec<u8>> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    (*pos > start).then(|| bytes[start..*pos].to_vec())
}

fn next_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(bytes, pos).ok_or_else(|| Error::Parse(format!("missing {what}")))?;
    std::str::from_utf8(&tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse(format!("bad {what} {:?}", String::from_utf8_lossy(&tok))))
}

/// Per-cell Euclidean distance (meters) to the nearest occupied cell center,
/// counting a virtual occupied ring just outside the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceField<T> {
    pub grid: OccupancyGrid<T>,
    pub dist: Vec<T>,
}

/// Squared distances in cell units, padded grid of `(w+2) x (h+2)` with an occupied ring.
fn squared_edt_cells(grid: &OccupancyGrid<impl Real>) -> Vec<i64> {
    let (w, h) = (grid.width + 2, grid.height + 2);
    let occupied = |i: usize, j: usize| {
        i == 0 || j == 0 || i == w - 1 || j == h - 1 || grid.is_occupied(i - 1, j - 1)
    };
    // Column pass: vertical distance to nearest obstacle. Every column hits the ring.
    let mut g = vec![0i64; w * h];
    for i in 0..w {
        let mut last: Option<i64> = None;
        for j in 0..h {
            if occupied(i, j) {
                last = Some(j as i64);
            }
            g[j * w + i] = last.map_or(i64::MAX / 4, |l| j as i64 - l);
        }
        let mut last: Option<i64> = None;
        for j in (0..h).rev() {
            if occupied(i, j) {
                last = Some(j as i64);
            }
            if let Some(l) = last {
                let d = l - j as i64;
                if d < g[j * w + i] {
                    g[j * w + i] = d;
                }
            }
        }
    }
    // Row pass: lower envelope of parabolas with exact integer separators.
    let mut out = vec![0i64; w * h];
    let mut s = vec![0usize; w];
    let mut t = vec![0i64; w];
    for j in 0..h {
        let row = &g[j * w..(j + 1) * w];
        let f = |x: i64, i: usize| (x - i as i64).pow(2) + row[i].pow(2);
        let sep = |i: usize, u: usize| {
            let (ii, uu) = (i as i64, u as i64);
            (uu * uu - ii * ii + row[u].pow(2) - row[i].pow(2)).div_euclid(2 * (uu - ii))
        };
        let mut q = 0usize;
        s[0] = 0;
        t[0] = 0;
        for u in 1..w {
            while f(t[q], s[q]) > f(t[q], u) {
                if q == 0 {
                    break;
                }
                q -= 1;
            }
            if q == 0 && f(t[0], s[0]) > f(t[0], u) {
                s[0] = u;
            } else {
                let wv = 1 + sep(s[q], u);
                if wv < w as i64 {
                    q += 1;
                    s[q] = u;
                    t[q] = wv;
                }
            }
        }
        for u in (0..w).rev() {
            out[j * w + u] = f(u as i64, s[q]);
            if u as i64 == t[q] && q > 0 {
                q -= 1;
            }
        }
    }
    out
}

/// Exact two-pass EDT (Meijster et al. separable scheme) in integer arithmetic.
pub fn compute_edt<T: Real>(grid: &OccupancyGrid<T>) -> DistanceField<T> {
    let sq = squared_edt_cells(grid);
    let pw = grid.width + 2;
    let mut dist = Vec::with_capacity(grid.width * grid.height);
    for j in 0..grid.height {
        for i in 0..grid.width {
            let d2 = sq[(j + 1) * pw + (i + 1)];
            dist.push(cell_distance(d2, grid.cell_size));
        }
    }
    DistanceField {
        grid: grid.clone(),
        dist,
    }
}

/// Converts a squared distance in cell units to meters. Shared with test oracles so
/// that equal integer distances give bit-equal results.
#[inline]
pub fn cell_distance<T: Real>(squared_cells: i64, cell_size: T) -> T {
    T::from_i64(squared_cells).unwrap().sqrt() * cell_size
}

impl<T: Real> DistanceField<T> {
    #[inline]
    pub fn at_cell(&self, i: usize, j: usize) -> T {
        self.dist[j * self.grid.width + i]
    }

    pub fn max_dist(&self) -> T {
        self.dist.iter().copied().fold(T::zero(), T::max)
    }

    /// Bilinear interpolation over cell centers; the virtual ring contributes zeros.
    pub fn interpolate(&self, q: &Config2<T>) -> Result<T> {
        if !q.is_finite() || !self.grid.bounds().contains(q) {
            return Err(Error::OutOfBounds {
                x: q[0].to_f64_lossy(),
                y: q[1].to_f64_lossy(),
            });
        }
        Ok(self.interpolate_unchecked(q))
    }

    pub(crate) fn interpolate_unchecked(&self, q: &Config2<T>) -> T {
        let g = &self.grid;
        let half = T::lit(0.5);
        let fx = (q[0] - g.origin[0]) / g.cell_size - half;
        let fy = (q[1] - g.origin[1]) / g.cell_size - half;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let (w, h) = (g.width as i64, g.height as i64);
        let xi = x0.to_i64().unwrap_or(-1).clamp(-1, w);
        let yi = y0.to_i64().unwrap_or(-1).clamp(-1, h);
        let at = |i: i64, j: i64| -> T {
            if i < 0 || j < 0 || i >= w || j >= h {
                T::zero()
            } else {
                self.dist[(j * w + i) as usize]
            }
        };
        let one = T::one();
        let a = at(xi, yi) * (one - tx) + at(xi + 1, yi) * tx;
        let b = at(xi, yi + 1) * (one - tx) + at(xi + 1, yi + 1) * tx;
        a * (one - ty) + b * ty
    }
}

/// TSDF speed parameters (meters, meters, unitless).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedParams<T> {
    pub d_min: T,
    pub d_max: T,
    pub s_const: T,
}

impl<T: Real> SpeedParams<T> {
    pub fn new(d_min: T, d_max: T, s_const: T) -> Result<Self> {
        if !(d_min > T::zero() && d_min < d_max && s_const > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "speed params need 0 < d_min < d_max and s_const > 0 (got {d_min}, {d_max}, {s_const})"
            )));
        }
        Ok(SpeedParams {
            d_min,
            d_max,
            s_const,
        })
    }

    /// `d_min = 1` cell, `d_max = 10` cells, `s_const = 1`.
    pub fn for_cell_size(cell_size: T) -> Self {
        SpeedParams {
            d_min: cell_size,
            d_max: cell_size * T::lit(10.0),
            s_const: T::one(),
        }
    }

    /// Speed at a clearance of `dist`: `t^2 (2 - t)^2` with `t = tsdf(dist)`.
    #[inline]
    pub fn speed(&self, dist: T) -> T {
        let t = tsdf(dist, self);
        let two = T::lit(2.0);
        t * t * (two - t) * (two - t)
    }

    /// Lowest attainable speed (at clearance `d_min` or below).
    pub fn min_speed(&self) -> T {
        self.speed(self.d_min)
    }
}

/// `(s_const / d_max) * clip(dist, d_min, d_max)`
#[inline]
pub fn tsdf<T: Real>(dist: T, p: &SpeedParams<T>) -> T {
    p.s_const / p.d_max * dist.max(p.d_min).min(p.d_max)
}

pub fn ground_truth_speed<T: Real>(q: &Config2<T>, df: &DistanceField<T>, p: &SpeedParams<T>) -> Result<T> {
    Ok(p.speed(df.interpolate(q)?))
}

/// Rejection-samples `n` configurations uniformly over `{q : dist(q) > margin}`.
pub fn sample_free<T: Real>(df: &DistanceField<T>, margin: T, n: usize, seed: u64) -> Result<Vec<Config2<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = FreeSampler::new(df, margin)?;
    Ok((0..n).map(|_| sampler.sample(&mut rng)).collect())
}

/// Reusable rejection sampler over the clearance region of a distance field.
#[derive(Clone, Debug)]
pub struct FreeSampler<'a, T> {
    df: &'a DistanceField<T>,
    margin: T,
    bounds: Bounds<T>,
}

impl<'a, T: Real> FreeSampler<'a, T> {
    pub fn new(df: &'a DistanceField<T>, margin: T) -> Result<Self> {
        if !df.dist.iter().any(|&d| d > margin) {
            return Err(Error::EmptyFreeSpace {
                margin: margin.to_f64_lossy(),
            });
        }
        Ok(FreeSampler {
            df,
            margin,
            bounds: df.grid.bounds(),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Config2<T> {
        loop {
            let q = uniform_in(&self.bounds, rng);
            if self.df.interpolate_unchecked(&q) > self.margin {
                return q;
            }
        }
    }

    /// Uniform over the clearance region intersected with a disc; `None` after `tries` rejections.
    pub fn sample_near<R: Rng + ?Sized>(
        &self,
        center: &Config2<T>,
        radius: T,
        tries: usize,
        rng: &mut R,
    ) -> Option<Config2<T>> {
        for _ in 0..tries {
            let r = radius * T::lit(rng.random::<f64>().sqrt());
            let theta = T::lit(rng.random::<f64>() * std::f64::consts::TAU);
            let q = Config2([center[0] + r * theta.cos(), center[1] + r * theta.sin()]);
            if self.bounds.contains(&q) && self.df.interpolate_unchecked(&q) > self.margin {
                return Some(q);
            }
        }
        None
    }
}

pub(crate) fn uniform_in<T: Real, R: Rng + ?Sized>(b: &Bounds<T>, rng: &mut R) -> Config2<T> {
    let u = T::lit(rng.random::<f64>());
    let v = T::lit(rng.random::<f64>());
    Config2([
        b.min[0] + (b.max[0] - b.min[0]) * u,
        b.min[1] + (b.max[1] - b.min[1]) * v,
    ])
}

/// True iff the interpolated clearance exceeds `d_safe` at samples spaced at most
/// half a cell apart along `[a, b]`, endpoints included.
pub fn segment_clear<T: Real>(a: &Config2<T>, b: &Config2<T>, df: &DistanceField<T>, d_safe: T) -> Result<bool> {
    df.interpolate(a)?;
    df.interpolate(b)?;
    // Canonical endpoint order keeps the sample set identical for (a, b) and (b, a).
    let (p, q) = if (a[0], a[1]) <= (b[0], b[1]) { (a, b) } else { (b, a) };
    let spacing = df.grid.cell_size * T::lit(0.5);
    let n = (p.dist(q) / spacing).ceil().to_usize().unwrap_or(0).max(1);
    let nf = T::from_usize(n).unwrap();
    Ok((0..=n).all(|k| {
        let s = p.lerp(q, T::from_usize(k).unwrap() / nf);
        df.interpolate_unchecked(&s) > d_safe
    }))
}

/// A map together with its distance field and speed model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment<T> {
    pub field: DistanceField<T>,
    pub speed: SpeedParams<T>,
}

impl<T: Real> Environment<T> {
    pub fn new(grid: OccupancyGrid<T>, speed: SpeedParams<T>) -> Self {
        Environment {
            field: compute_edt(&grid),
            speed,
        }
    }

    /// Default speed parameters derived from the cell size.
    pub fn with_default_speed(grid: OccupancyGrid<T>) -> Self {
        let speed = SpeedParams::for_cell_size(grid.cell_size);
        Self::new(grid, speed)
    }

    #[inline]
    pub fn grid(&self) -> &OccupancyGrid<T> {
        &self.field.grid
    }

    pub fn bounds(&self) -> Bounds<T> {
        self.field.grid.bounds()
    }

    pub fn speed_at(&self, q: &Config2<T>) -> Result<T> {
        ground_truth_speed(q, &self.field, &self.speed)
    }

    /// S* evaluated at every cell center (row-major).
    pub fn speed_grid(&self) -> Vec<T> {
        self.field.dist.iter().map(|&d| self.speed.speed(d)).collect()
    }

    pub fn clearance(&self, q: &Config2<T>) -> Result<T> {
        self.field.interpolate(q)
    }

    pub fn segment_clear(&self, a: &Config2<T>, b: &Config2<T>, d_safe: T) -> Result<bool> {
        segment_clear(a, b, &self.field, d_safe)
    }

    pub fn is_free(&self, q: &Config2<T>, d_safe: T) -> bool {
        self.field.interpolate(q).map(|d| d > d_safe).unwrap_or(false)
    }
}
