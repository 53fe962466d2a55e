//! Interpolation tables used to cache expensive smooth functions.

use crate::error::{Error, Result};

/// Natural cubic spline through `(x_i, y_i)` with strictly increasing knots.
#[derive(Debug, Clone)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    second: Vec<f64>,
    uniform_step: Option<f64>,
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 3 || y.len() != n {
            return Err(Error::Dimension {
                expected: n.max(3),
                got: y.len(),
            });
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("spline knots must be strictly increasing"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("spline values must be finite"));
        }
        // Tridiagonal system for the second derivatives, natural end conditions.
        let mut second = vec![0.0; n];
        let mut u = vec![0.0; n];
        for i in 1..n - 1 {
            let sig = (x[i] - x[i - 1]) / (x[i + 1] - x[i - 1]);
            let p = sig * second[i - 1] + 2.0;
            second[i] = (sig - 1.0) / p;
            let dy = (y[i + 1] - y[i]) / (x[i + 1] - x[i]) - (y[i] - y[i - 1]) / (x[i] - x[i - 1]);
            u[i] = (6.0 * dy / (x[i + 1] - x[i - 1]) - sig * u[i - 1]) / p;
        }
        second[n - 1] = 0.0;
        for k in (0..n - 1).rev() {
            second[k] = second[k] * second[k + 1] + u[k];
        }
        let step = (x[n - 1] - x[0]) / (n - 1) as f64;
        let uniform = x
            .iter()
            .enumerate()
            .all(|(i, &xi)| (xi - (x[0] + step * i as f64)).abs() <= 1e-9 * step);
        Ok(Self {
            x,
            y,
            second,
            uniform_step: uniform.then_some(step),
        })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    pub fn contains(&self, t: f64) -> bool {
        let (a, b) = self.range();
        t >= a && t <= b
    }

    fn interval(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.uniform_step {
            Some(h) => (((t - self.x[0]) / h).floor().max(0.0) as usize).min(n - 2),
            None => self.x.partition_point(|&xi| xi <= t).clamp(1, n - 1) - 1,
        }
    }

    /// Evaluate; outside the knot range the end cubic is extrapolated.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.interval(t);
        let h = self.x[k + 1] - self.x[k];
        let a = (self.x[k + 1] - t) / h;
        let b = (t - self.x[k]) / h;
        a * self.y[k]
            + b * self.y[k + 1]
            + ((a * a * a - a) * self.second[k] + (b * b * b - b) * self.second[k + 1]) * h * h / 6.0
    }
}

/// Values on a uniform rectangular grid, `values[i * ny + j]` at `(x_i, y_j)`.
#[derive(Debug, Clone)]
pub struct UniformGrid2d {
    pub x0: f64,
    pub dx: f64,
    pub nx: usize,
    pub y0: f64,
    pub dy: f64,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl UniformGrid2d {
    pub fn from_fn<F: FnMut(f64, f64) -> f64>(
        (xlo, xhi, nx): (f64, f64, usize),
        (ylo, yhi, ny): (f64, f64, usize),
        mut f: F,
    ) -> Result<Self> {
        if nx < 2 || ny < 2 || !(xhi > xlo) || !(yhi > ylo) {
            return Err(Error::domain("2-d grid needs at least 2x2 points over a nonempty box"));
        }
        let dx = (xhi - xlo) / (nx - 1) as f64;
        let dy = (yhi - ylo) / (ny - 1) as f64;
        let mut values = Vec::with_capacity(nx * ny);
        for i in 0..nx {
            let x = xlo + dx * i as f64;
            for j in 0..ny {
                values.push(f(x, ylo + dy * j as f64));
            }
        }
        Ok(Self {
            x0: xlo,
            dx,
            nx,
            y0: ylo,
            dy,
            ny,
            values,
        })
    }

    pub fn x_at(&self, i: usize) -> f64 {
        self.x0 + self.dx * i as f64
    }

    pub fn y_at(&self, j: usize) -> f64 {
        self.y0 + self.dy * j as f64
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ny + j]
    }

    /// Node value with one layer of linear extrapolation past each edge.
    fn get_extended(&self, i: isize, j: isize) -> f64 {
        let nx = self.nx as isize;
        let ny = self.ny as isize;
        if i < 0 {
            return 2.0 * self.get_extended(0, j) - self.get_extended(1, j);
        }
        if i >= nx {
            return 2.0 * self.get_extended(nx - 1, j) - self.get_extended(nx - 2, j);
        }
        if j < 0 {
            return 2.0 * self.get_extended(i, 0) - self.get_extended(i, 1);
        }
        if j >= ny {
            return 2.0 * self.get_extended(i, ny - 1) - self.get_extended(i, ny - 2);
        }
        self.get(i as usize, j as usize)
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x_at(self.nx - 1) && y >= self.y0 && y <= self.y_at(self.ny - 1)
    }

    /// Bilinear interpolation; coordinates are clamped to the grid box.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let (i, fx) = locate(x, self.x0, self.dx, self.nx);
        let (j, fy) = locate(y, self.y0, self.dy, self.ny);
        let v00 = self.get(i, j);
        let v01 = self.get(i, j + 1);
        let v10 = self.get(i + 1, j);
        let v11 = self.get(i + 1, j + 1);
        (1.0 - fx) * ((1.0 - fy) * v00 + fy * v01) + fx * ((1.0 - fy) * v10 + fy * v11)
    }

    /// Catmull–Rom bicubic interpolation, clamped like [`Self::bilinear`].
    pub fn bicubic(&self, x: f64, y: f64) -> f64 {
        let (i, fx) = locate(x, self.x0, self.dx, self.nx);
        let (j, fy) = locate(y, self.y0, self.dy, self.ny);
        let wx = catmull_rom(fx);
        let wy = catmull_rom(fy);
        let mut acc = 0.0;
        for (a, wa) in wx.iter().enumerate() {
            let ii = i as isize + a as isize - 1;
            let mut row = 0.0;
            for (b, wb) in wy.iter().enumerate() {
                row += wb * self.get_extended(ii, j as isize + b as isize - 1);
            }
            acc += wa * row;
        }
        acc
    }
}

fn locate(t: f64, t0: f64, dt: f64, n: usize) -> (usize, f64) {
    let s = ((t - t0) / dt).clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    (i, s - i as f64)
}

fn catmull_rom(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}
