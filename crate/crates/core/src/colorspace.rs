//! sRGB <-> CIE La*b* conversion and the normalization used at the network
//! boundary.
//!
//! Conversions use the D65 white point with standard sRGB companding and are
//! carried out in `f64`. Lab values are clamped to L in [0, 100] and
//! a*, b* in [-128, 127]; the inverse clamps in RGB before 8-bit quantization.
//!
//! The network sees `L / 100` and `(c + 128) / 255` for each chroma channel,
//! so every tensor entering or leaving it lies in [0, 1].

use crate::error::{Error, Result};

/// D65 reference white, Y normalized to 1.
const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

const XYZ_TO_RGB: [[f64; 3]; 3] = [
    [3.2404542, -1.5371385, -0.4985314],
    [-0.9692660, 1.8760108, 0.0415560],
    [0.0556434, -0.2040259, 1.0572252],
];

const DELTA: f64 = 6.0 / 29.0;

pub const L_MAX: f64 = 100.0;
pub const AB_MIN: f64 = -128.0;
pub const AB_MAX: f64 = 127.0;

/// 8-bit sRGB image, row-major `(r, g, b)` triples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("image must be non-empty, got {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn from_dynamic(img: &image::DynamicImage) -> Self {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let pixels = rgb.pixels().map(|p| p.0).collect();
        Self { width: w as usize, height: h as usize, pixels }
    }

    pub fn to_image(&self) -> image::RgbImage {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("pixel buffer length matches dimensions")
    }
}

/// Planar La*b* image. Values are clamped into range on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    width: usize,
    height: usize,
    l: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl LabImage {
    pub fn new(width: usize, height: usize, l: Vec<f64>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if n == 0 {
            return Err(Error::Shape(format!("image must be non-empty, got {width}x{height}")));
        }
        if l.len() != n || a.len() != n || b.len() != n {
            return Err(Error::Shape(format!(
                "{width}x{height} Lab image needs {n} values per plane, got {}/{}/{}",
                l.len(),
                a.len(),
                b.len()
            )));
        }
        let mut img = Self { width, height, l, a, b };
        img.l.iter_mut().for_each(|v| *v = v.clamp(0.0, L_MAX));
        img.a.iter_mut().for_each(|v| *v = v.clamp(AB_MIN, AB_MAX));
        img.b.iter_mut().for_each(|v| *v = v.clamp(AB_MIN, AB_MAX));
        Ok(img)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn l(&self) -> &[f64] {
        &self.l
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = y * self.width + x;
        [self.l[i], self.a[i], self.b[i]]
    }
}

/// Channel-major planes of equal size, `channels x height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Planes {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{channels}x{height}x{width} planes need {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Network-side view of a Lab image: `l_norm` is 1xHxW, `ab_norm` is 2xHxW,
/// all values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedPair {
    pub l_norm: Planes,
    pub ab_norm: Planes,
}

fn srgb_to_linear(c: u8) -> f64 {
    let c = f64::from(c) / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Converts one sRGB pixel to unclamped Lab.
pub fn srgb_pixel_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let xyz = mat_vec(&RGB_TO_XYZ, lin);
    let fx = lab_f(xyz[0] / WHITE[0]);
    let fy = lab_f(xyz[1] / WHITE[1]);
    let fz = lab_f(xyz[2] / WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Converts one Lab pixel to 8-bit sRGB, clamping out-of-gamut channels.
pub fn lab_pixel_to_srgb(lab: [f64; 3]) -> [u8; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let xyz = [WHITE[0] * lab_f_inv(fx), WHITE[1] * lab_f_inv(fy), WHITE[2] * lab_f_inv(fz)];
    mat_vec(&XYZ_TO_RGB, xyz).map(|c| {
        let v = linear_to_srgb(c.clamp(0.0, 1.0)) * 255.0;
        v.round().clamp(0.0, 255.0) as u8
    })
}

pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    let n = img.pixels.len();
    let (mut l, mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for &p in &img.pixels {
        let [pl, pa, pb] = srgb_pixel_to_lab(p);
        l.push(pl);
        a.push(pa);
        b.push(pb);
    }
    LabImage::new(img.width, img.height, l, a, b).expect("dimensions come from a valid RgbImage")
}

pub fn lab_to_rgb(img: &LabImage) -> RgbImage {
    let pixels = (0..img.l.len())
        .map(|i| lab_pixel_to_srgb([img.l[i], img.a[i], img.b[i]]))
        .collect();
    RgbImage { width: img.width, height: img.height, pixels }
}

pub fn normalize_l(l: f64) -> f64 {
    l / L_MAX
}

pub fn normalize_ab(c: f64) -> f64 {
    (c - AB_MIN) / (AB_MAX - AB_MIN)
}

pub fn denormalize_ab_value(y: f64) -> f64 {
    y * (AB_MAX - AB_MIN) + AB_MIN
}

pub fn normalize(img: &LabImage) -> NormalizedPair {
    let (h, w) = (img.height, img.width);
    let l_norm = img.l.iter().map(|&v| normalize_l(v)).collect();
    let ab_norm = img.a.iter().chain(img.b.iter()).map(|&v| normalize_ab(v)).collect();
    NormalizedPair {
        l_norm: Planes { channels: 1, height: h, width: w, data: l_norm },
        ab_norm: Planes { channels: 2, height: h, width: w, data: ab_norm },
    }
}

/// Maps network chroma output back to a* and b* planes.
pub fn denormalize_ab(ab_norm: &Planes) -> Result<(Vec<f64>, Vec<f64>)> {
    if ab_norm.channels != 2 {
        return Err(Error::Shape(format!("expected 2 chroma planes, got {}", ab_norm.channels)));
    }
    let a = ab_norm.plane(0).iter().map(|&y| denormalize_ab_value(y)).collect();
    let b = ab_norm.plane(1).iter().map(|&y| denormalize_ab_value(y)).collect();
    Ok((a, b))
}

/// Combines the original lightness plane (L in [0, 100]) with predicted
/// normalized chroma and renders the result as 8-bit sRGB.
pub fn assemble_output(l: &Planes, ab_norm: &Planes) -> Result<RgbImage> {
    if l.channels != 1 {
        return Err(Error::Shape(format!("expected 1 lightness plane, got {}", l.channels)));
    }
    if (l.height, l.width) != (ab_norm.height, ab_norm.width) {
        return Err(Error::Shape(format!(
            "lightness is {}x{} but chroma is {}x{}",
            l.height, l.width, ab_norm.height, ab_norm.width
        )));
    }
    let (a, b) = denormalize_ab(ab_norm)?;
    let lab = LabImage::new(l.width, l.height, l.data.clone(), a, b)?;
    Ok(lab_to_rgb(&lab))
}

/// Copies the single lightness plane into the three input channels the
/// encoder's first convolution expects.
pub fn replicate_l(l_norm: &Planes) -> Result<Planes> {
    if l_norm.channels != 1 {
        return Err(Error::Shape(format!("expected 1 lightness plane, got {}", l_norm.channels)));
    }
    let mut data = Vec::with_capacity(3 * l_norm.data.len());
    for _ in 0..3 {
        data.extend_from_slice(&l_norm.data);
    }
    Ok(Planes { channels: 3, height: l_norm.height, width: l_norm.width, data })
}
