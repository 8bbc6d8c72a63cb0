//! The nine pixel transforms. All are pure: same inputs, same output bytes.
//!
//! Every transform returns an image of the input's dimensions with channel
//! values clamped to [0, 255]. Floating-point work happens in f64 and is
//! rounded once at the end, so identity parameters reproduce the input
//! exactly.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::raster::Image;
use crate::rng::gaussian;

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Adds seeded Gaussian noise with standard deviation `sigma` to every
/// channel value, in data order (row-major, RGB interleaved), one
/// Box-Muller draw per byte.
pub fn gaussian_noise(img: &Image, sigma: f64, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img
        .data()
        .iter()
        .map(|&v| clamp_u8(v as f64 + sigma * gaussian(&mut rng)))
        .collect();
    Image::from_raw(img.width(), img.height(), data)
}

/// Separable Gaussian blur into an f64 plane per channel; edges replicate.
/// Kernel radius is ceil(3*sigma), so the kernel has 2*ceil(3*sigma)+1 taps.
fn blur_f64(img: &Image, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for w in &mut kernel {
        *w /= norm;
    }

    let (w, h) = (img.width() as i64, img.height() as i64);
    let src: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let mut horiz = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (ki, kw) in kernel.iter().enumerate() {
                    let sx = (x + ki as i64 - radius).clamp(0, w - 1);
                    acc += kw * src[((y * w + sx) * 3 + c) as usize];
                }
                horiz[((y * w + x) * 3 + c) as usize] = acc;
            }
        }
    }
    let mut out = vec![0.0f64; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for (ki, kw) in kernel.iter().enumerate() {
                    let sy = (y + ki as i64 - radius).clamp(0, h - 1);
                    acc += kw * horiz[((sy * w + x) * 3 + c) as usize];
                }
                out[((y * w + x) * 3 + c) as usize] = acc;
            }
        }
    }
    out
}

pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    let data = blur_f64(img, sigma).into_iter().map(clamp_u8).collect();
    Image::from_raw(img.width(), img.height(), data)
}

/// Mirrors the image left-right. Applying it twice restores the input.
pub fn flip_horizontal(img: &Image) -> Image {
    let (w, h) = (img.width(), img.height());
    let mut out = Image::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            out.set_pixel(x, y, img.pixel(w - 1 - x, y));
        }
    }
    out
}

/// Scales each channel's deviation from that channel's mean by `factor`.
pub fn contrast(img: &Image, factor: f64) -> Image {
    let n = (img.width() as f64) * (img.height() as f64);
    let mut means = [0.0f64; 3];
    for px in img.data().chunks_exact(3) {
        for c in 0..3 {
            means[c] += px[c] as f64;
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| {
            [0, 1, 2].map(|c| clamp_u8(means[c] + factor * (px[c] as f64 - means[c])))
        })
        .collect();
    Image::from_raw(img.width(), img.height(), data)
}

/// rgb in [0,1] -> (hue degrees in [0,360), saturation, value).
fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r1, g1, b1) = match hp as i64 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r1 + m, g1 + m, b1 + m)
}

/// Rotates every pixel's hue by `degrees` in HSV space; gray pixels
/// (saturation zero) are unchanged.
pub fn hue_shift(img: &Image, degrees: f64) -> Image {
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| {
            let (h, s, v) = rgb_to_hsv(
                px[0] as f64 / 255.0,
                px[1] as f64 / 255.0,
                px[2] as f64 / 255.0,
            );
            let (r, g, b) = hsv_to_rgb((h + degrees).rem_euclid(360.0), s, v);
            [clamp_u8(r * 255.0), clamp_u8(g * 255.0), clamp_u8(b * 255.0)]
        })
        .collect();
    Image::from_raw(img.width(), img.height(), data)
}

/// Adds a per-channel offset with saturating clamp. `add(&img, [0,0,0])`
/// returns the input exactly.
pub fn add(img: &Image, values: [i16; 3]) -> Image {
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| [0, 1, 2].map(|c| (px[c] as i16 + values[c]).clamp(0, 255) as u8))
        .collect();
    Image::from_raw(img.width(), img.height(), data)
}

/// Scales each channel by its factor. `multiply(&img, [1.0; 3])` returns
/// the input exactly.
pub fn multiply(img: &Image, factors: [f64; 3]) -> Image {
    let data = img
        .data()
        .chunks_exact(3)
        .flat_map(|px| [0, 1, 2].map(|c| clamp_u8(px[c] as f64 * factors[c])))
        .collect();
    Image::from_raw(img.width(), img.height(), data)
}

/// Unsharp mask with a fixed sigma-1 blur: out = v + amount * (v - blur(v)).
/// The blur stays in float until the final rounding.
pub fn sharp(img: &Image, amount: f64) -> Image {
    let blurred = blur_f64(img, 1.0);
    let data = img
        .data()
        .iter()
        .zip(&blurred)
        .map(|(&v, &b)| clamp_u8(v as f64 + amount * (v as f64 - b)))
        .collect();
    Image::from_raw(img.width(), img.height(), data)
}

/// Rotation + uniform scale + translation about the image center, canvas
/// size preserved. Output pixels map back through the inverse transform and
/// sample bilinearly; source coordinates outside the image replicate the
/// nearest edge pixel. Identity parameters (rotation 0, scale 1,
/// translation 0) reproduce the input exactly.
pub fn affine(img: &Image, rotation_deg: f64, scale: f64, translate_frac: [f64; 2]) -> Image {
    let (w, h) = (img.width(), img.height());
    let cx = w as f64 / 2.0;
    let cy = h as f64 / 2.0;
    let tx = translate_frac[0] * w as f64;
    let ty = translate_frac[1] * h as f64;
    let theta = rotation_deg.to_radians();
    let (sin, cos) = (theta.sin(), theta.cos());

    let mut out = Image::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            // Undo translation, rotation, then scale, all about the center.
            let u = (x as f64 + 0.5) - tx - cx;
            let v = (y as f64 + 0.5) - ty - cy;
            let ru = u * cos + v * sin;
            let rv = -u * sin + v * cos;
            let sx = ru / scale + cx - 0.5;
            let sy = rv / scale + cy - 0.5;
            out.set_pixel(x, y, sample_bilinear(img, sx, sy));
        }
    }
    out
}

fn sample_bilinear(img: &Image, sx: f64, sy: f64) -> [u8; 3] {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0f = sx.floor();
    let y0f = sy.floor();
    let dx = sx - x0f;
    let dy = sy - y0f;
    let cl = |v: i64, hi: i64| v.clamp(0, hi - 1) as u32;
    let x0 = cl(x0f as i64, w);
    let x1 = cl(x0f as i64 + 1, w);
    let y0 = cl(y0f as i64, h);
    let y1 = cl(y0f as i64 + 1, h);
    let p00 = img.pixel(x0, y0);
    let p10 = img.pixel(x1, y0);
    let p01 = img.pixel(x0, y1);
    let p11 = img.pixel(x1, y1);
    let mut px = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - dx) + p10[c] as f64 * dx;
        let bot = p01[c] as f64 * (1.0 - dx) + p11[c] as f64 * dx;
        px[c] = clamp_u8(top * (1.0 - dy) + bot * dy);
    }
    px
}
