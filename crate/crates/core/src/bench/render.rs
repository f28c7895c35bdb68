use crate::field::FieldModel;
use crate::fmm::FmmGrid;
use crate::gridworld::Environment;
use crate::{Config2, Error, Real, Result};

/// Fixed path colors, cycled.
pub const PATH_COLORS: [[u8; 3]; 4] = [[230, 25, 75], [255, 225, 25], [0, 130, 200], [245, 130, 48]];
const OBSTACLE: [u8; 3] = [0, 0, 0];
const UNREACHED: [u8; 3] = [64, 64, 64];
const BAND: [u8; 3] = [255, 255, 255];

// Viridis control points at t = 0, 1/8, ..., 1.
const VIRIDIS: [[u8; 3]; 9] = [
    [68, 1, 84],
    [71, 44, 122],
    [59, 81, 139],
    [44, 113, 142],
    [33, 144, 141],
    [39, 173, 129],
    [92, 200, 99],
    [170, 220, 50],
    [253, 231, 37],
];

/// Viridis-like color for `t` in `[0, 1]` (clamped), piecewise linear between control points.
pub fn viridis(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let x = t * 8.0;
    let k = (x.floor() as usize).min(7);
    let f = x - k as f64;
    let (a, b) = (VIRIDIS[k], VIRIDIS[k + 1]);
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (a[c] as f64 + (b[c] as f64 - a[c] as f64) * f).round() as u8;
    }
    out
}

/// RGB raster; pixel (x, y) with y = 0 at the top.
#[derive(Clone, Debug, PartialEq)]
pub struct Canvas {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Canvas {
            width,
            height,
            rgb: fill.iter().copied().cycle().take(3 * width * height).collect(),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let k = 3 * (y * self.width + x);
        [self.rgb[k], self.rgb[k + 1], self.rgb[k + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, c: [u8; 3]) {
        if x < self.width && y < self.height {
            let k = 3 * (y * self.width + x);
            self.rgb[k..k + 3].copy_from_slice(&c);
        }
    }

    /// Paints a row-major field (`rows` from top) of `w` x `h` values, each value a
    /// `scale` x `scale` block, normalized over its finite range. `None` entries are obstacles.
    pub fn from_scalar(w: usize, h: usize, values: &[Option<f64>], scale: usize) -> Self {
        let finite = values.iter().flatten().filter(|v| v.is_finite());
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let mut c = Canvas::new(w * scale, h * scale, OBSTACLE);
        for y in 0..h {
            for x in 0..w {
                let col = match values[y * w + x] {
                    None => OBSTACLE,
                    Some(v) if !v.is_finite() => UNREACHED,
                    Some(v) => viridis(if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }),
                };
                c.fill_block(x, y, scale, col);
            }
        }
        c
    }

    fn fill_block(&mut self, x: usize, y: usize, scale: usize, col: [u8; 3]) {
        for dy in 0..scale {
            for dx in 0..scale {
                self.set(x * scale + dx, y * scale + dy, col);
            }
        }
    }

    /// Marks cells whose band index `floor(v / interval)` differs from the right or lower neighbor.
    pub fn draw_bands(&mut self, w: usize, h: usize, values: &[f64], interval: f64, scale: usize) {
        if !(interval > 0.0) {
            return;
        }
        let band = |v: f64| if v.is_finite() { Some((v / interval).floor() as i64) } else { None };
        for y in 0..h {
            for x in 0..w {
                let Some(b) = band(values[y * w + x]) else { continue };
                let right = (x + 1 < w).then(|| band(values[y * w + x + 1])).flatten();
                let down = (y + 1 < h).then(|| band(values[(y + 1) * w + x])).flatten();
                if right.is_some_and(|r| r != b) || down.is_some_and(|d| d != b) {
                    self.fill_block(x, y, scale, BAND);
                }
            }
        }
    }

    /// One-pixel Bresenham polyline through pixel coordinates.
    pub fn draw_polyline(&mut self, pts: &[(i64, i64)], col: [u8; 3]) {
        if let [p] = pts {
            self.plot(p.0, p.1, col);
        }
        for w in pts.windows(2) {
            let ((mut x0, mut y0), (x1, y1)) = (w[0], w[1]);
            let dx = (x1 - x0).abs();
            let dy = -(y1 - y0).abs();
            let sx = if x0 < x1 { 1 } else { -1 };
            let sy = if y0 < y1 { 1 } else { -1 };
            let mut err = dx + dy;
            loop {
                self.plot(x0, y0, col);
                if x0 == x1 && y0 == y1 {
                    break;
                }
                let e2 = 2 * err;
                if e2 >= dy {
                    err += dy;
                    x0 += sx;
                }
                if e2 <= dx {
                    err += dx;
                    y0 += sy;
                }
            }
        }
    }

    fn plot(&mut self, x: i64, y: i64, col: [u8; 3]) {
        if x >= 0 && y >= 0 {
            self.set(x as usize, y as usize, col);
        }
    }

    /// Binary PPM (P6).
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }
}

pub enum Overlay<'a, T> {
    /// Ground-truth speed from clearance.
    Speed,
    /// Predicted speed background with arrival-time bands, both relative to `source`.
    Learned { model: &'a FieldModel<T>, source: Config2<T> },
    /// Oracle arrival times with bands.
    Fmm(&'a FmmGrid<T>),
}

/// Renders a map-sized overlay (one cell per `scale` x `scale` block, north up) with paths.
/// `bands` is the iso-band width in seconds; defaults to a tenth of the largest finite time.
pub fn render<T: Real>(
    env: &Environment<T>,
    overlay: &Overlay<T>,
    paths: &[Vec<Config2<T>>],
    scale: usize,
    bands: Option<f64>,
) -> Result<Canvas> {
    if scale == 0 {
        return Err(Error::InvalidArgument("scale must be at least 1".into()));
    }
    let g = env.grid();
    let (w, h) = (g.width, g.height);
    // Cell (i, j) lands at image row h - 1 - j.
    let flip = |v: &[T]| -> Vec<f64> {
        let mut out = Vec::with_capacity(w * h);
        for row in 0..h {
            let j = h - 1 - row;
            out.extend(v[j * w..(j + 1) * w].iter().map(|x| x.to_f64_lossy()));
        }
        out
    };
    let (background, times) = match overlay {
        Overlay::Speed => (flip(&env.speed_grid()), None),
        Overlay::Learned { model, source } => (
            flip(&model.speed_slice(&env.field, source)?),
            Some(flip(&model.time_slice(&env.field, source)?)),
        ),
        Overlay::Fmm(grid) => {
            let t = flip(&grid.times);
            (t.clone(), Some(t))
        }
    };
    let values: Vec<Option<f64>> = (0..w * h)
        .map(|k| {
            let (x, row) = (k % w, k / w);
            (!g.is_occupied(x, h - 1 - row)).then_some(background[k])
        })
        .collect();
    let mut canvas = Canvas::from_scalar(w, h, &values, scale);
    if let Some(t) = times {
        let masked: Vec<f64> = t
            .iter()
            .zip(&values)
            .map(|(v, o)| if o.is_some() { *v } else { f64::INFINITY })
            .collect();
        let max = masked.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
        canvas.draw_bands(w, h, &masked, bands.unwrap_or(max / 10.0), scale);
    }
    let cs = g.cell_size.to_f64_lossy();
    let px = |q: &Config2<T>| -> (i64, i64) {
        let x = (q[0] - g.origin[0]).to_f64_lossy() / cs * scale as f64;
        let y = (q[1] - g.origin[1]).to_f64_lossy() / cs * scale as f64;
        let top = (h * scale) as f64 - y;
        (x.floor() as i64, top.floor() as i64)
    };
    for (k, path) in paths.iter().enumerate() {
        let pts: Vec<_> = path.iter().map(px).collect();
        canvas.draw_polyline(&pts, PATH_COLORS[k % PATH_COLORS.len()]);
    }
    Ok(canvas)
}
