//! Procedural aerial-style test scenes.
//!
//! Used where a real photograph is not available (benchmarks, tests): smooth
//! terrain from two octaves of value noise, overlaid rectangular parcels of
//! uniform reflectivity, a few straight roads, and weak fine texture. All
//! values stay in `[0, 1]`.

use crate::image::Image;
use crate::rng::Stream;

struct ValueNoise {
    cell: usize,
    cols: usize,
    grid: Vec<f64>,
}

impl ValueNoise {
    fn new(width: usize, height: usize, cell: usize, rng: &mut Stream) -> Self {
        let cols = width / cell + 2;
        let rows = height / cell + 2;
        let grid = (0..cols * rows).map(|_| rng.uniform()).collect();
        Self { cell, cols, grid }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let fx = smoothstep((x % self.cell) as f64 / self.cell as f64);
        let fy = smoothstep((y % self.cell) as f64 / self.cell as f64);
        let g = |i: usize, j: usize| self.grid[j * self.cols + i];
        let top = g(gx, gy) * (1.0 - fx) + g(gx + 1, gy) * fx;
        let bottom = g(gx, gy + 1) * (1.0 - fx) + g(gx + 1, gy + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Generates a `width`×`height` scene; identical streams give identical scenes.
pub fn aerial_scene(width: usize, height: usize, rng: &mut Stream) -> Image {
    let coarse = ValueNoise::new(width, height, 64, rng);
    let medium = ValueNoise::new(width, height, 16, rng);
    let fine = ValueNoise::new(width, height, 3, rng);

    let mut data = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            data[y * width + x] =
                0.2 + 0.45 * coarse.at(x, y) + 0.15 * medium.at(x, y);
        }
    }

    let parcels = (width * height / 3000).max(4);
    for _ in 0..parcels {
        let w = 8 + rng.below(64.min(width).max(9) - 8);
        let h = 8 + rng.below(64.min(height).max(9) - 8);
        let x0 = rng.below(width);
        let y0 = rng.below(height);
        let level = rng.range(0.08, 0.92);
        for y in y0..(y0 + h).min(height) {
            for x in x0..(x0 + w).min(width) {
                data[y * width + x] = level;
            }
        }
    }

    let roads = 2 + rng.below(4);
    for _ in 0..roads {
        let half_width = 1.0 + 2.0 * rng.uniform();
        let level = rng.range(0.65, 0.85);
        let angle = std::f64::consts::PI * rng.uniform();
        let (nx, ny) = (angle.cos(), angle.sin());
        let cx = width as f64 * rng.uniform();
        let cy = height as f64 * rng.uniform();
        for y in 0..height {
            for x in 0..width {
                let d = (x as f64 - cx) * nx + (y as f64 - cy) * ny;
                if d.abs() <= half_width {
                    data[y * width + x] = level;
                }
            }
        }
    }

    for y in 0..height {
        for x in 0..width {
            let v = &mut data[y * width + x];
            *v = (*v + 0.06 * (fine.at(x, y) - 0.5)).clamp(0.0, 1.0);
        }
    }
    Image::from_raw(width, height, data)
}
