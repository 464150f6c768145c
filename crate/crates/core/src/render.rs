//! Synthetic tactile camera: dark marker disks over a lit background with a
//! contact-shading bump under the indenter.

use std::io::{Read, Write};
use std::path::Path;

use magtac_nn::Tensor;
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::{ElastomerConfig, RenderConfig};
use crate::elastomer::Indentation;
use crate::error::{Error, Result};

/// Per-channel background tint (silver coating under white light).
const TINT: [f64; 3] = [1.0, 0.96, 0.9];

/// Shading bump width relative to the indenter radius.
const SHADING_WIDTH: f64 = 1.5;

/// Variance floor used when standardizing constant channels.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// `H x W x 3` image with interleaved RGB values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl TactileImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::Domain(format!(
                "image buffer of {} values does not match {height}x{width}x3",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Domain("image pixels must lie in [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn at(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.pixels[(row * self.width + col) * 3 + channel]
    }

    /// Bytes of one raw record: 8-byte header plus three f32 planes.
    pub fn raw_len(height: usize, width: usize) -> usize {
        8 + 3 * height * width * 4
    }

    /// Writes `H, W` as little-endian u32 followed by the R, G and B planes
    /// as little-endian f32.
    pub fn write_raw(&self, out: &mut impl Write) -> std::io::Result<()> {
        out.write_all(&(self.height as u32).to_le_bytes())?;
        out.write_all(&(self.width as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(3 * self.height * self.width * 4);
        for c in 0..3 {
            for px in self.pixels.chunks_exact(3) {
                buf.extend_from_slice(&px[c].to_le_bytes());
            }
        }
        out.write_all(&buf)
    }

    pub fn from_raw(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Domain("raw image shorter than its header".into()));
        }
        let h = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
        let w = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        if bytes.len() != Self::raw_len(h, w) {
            return Err(Error::Domain(format!(
                "raw {h}x{w} image needs {} bytes, got {}",
                Self::raw_len(h, w),
                bytes.len()
            )));
        }
        let plane = h * w;
        let mut pixels = vec![0.0f32; plane * 3];
        for (i, chunk) in bytes[8..].chunks_exact(4).enumerate() {
            let (c, p) = (i / plane, i % plane);
            pixels[p * 3 + c] = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
        Self::new(h, w, pixels)
    }

    pub fn read_raw(input: &mut impl Read) -> Result<Self> {
        let mut header = [0u8; 8];
        input
            .read_exact(&mut header)
            .map_err(|e| Error::Domain(format!("raw image header: {e}")))?;
        let h = u32::from_le_bytes(header[0..4].try_into().expect("4 bytes")) as usize;
        let w = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes")) as usize;
        let mut bytes = vec![0u8; Self::raw_len(h, w)];
        bytes[..8].copy_from_slice(&header);
        input
            .read_exact(&mut bytes[8..])
            .map_err(|e| Error::Domain(format!("raw image body: {e}")))?;
        Self::from_raw(&bytes)
    }

    /// 8-bit RGB PNG for eyeballing.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(Error::io(path))?;
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let data: Vec<u8> = self
            .pixels
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Domain(format!("png header: {e}")))?;
        writer
            .write_image_data(&data)
            .map_err(|e| Error::Domain(format!("png data: {e}")))?;
        Ok(())
    }
}

/// Maps surface millimetres to continuous pixel coordinates `(col, row)`.
pub fn project(render: &RenderConfig, elastomer: &ElastomerConfig, x_mm: f64, y_mm: f64) -> (f64, f64) {
    let half = elastomer.extent_mm / 2.0;
    (
        (x_mm + half) * render.width as f64 / elastomer.extent_mm,
        (y_mm + half) * render.height as f64 / elastomer.extent_mm,
    )
}

struct Disk {
    col: f64,
    row: f64,
    radius: f64,
    opacity: f64,
}

/// Renders displaced markers (mm) and the contact shading of `ind`.
pub fn render(
    render: &RenderConfig,
    elastomer: &ElastomerConfig,
    markers: &[Vector3<f64>],
    ind: &Indentation,
) -> TactileImage {
    let (h, w) = (render.height, render.width);
    let px_per_mm = w as f64 / elastomer.extent_mm;
    let disks: Vec<Disk> = markers
        .iter()
        .map(|m| {
            let travel = (m.z + elastomer.marker_depth_mm).abs();
            let (col, row) = project(render, elastomer, m.x, m.y);
            Disk {
                col,
                row,
                radius: render.marker_radius_px * (1.0 + render.depth_radius_per_mm * travel),
                opacity: (render.marker_darkness + render.depth_darkness_per_mm * travel).clamp(0.0, 1.0),
            }
        })
        .collect();
    let (bump_col, bump_row) = project(render, elastomer, ind.center.x, ind.center.y);
    let bump_sigma = (SHADING_WIDTH * ind.indenter_radius * px_per_mm).max(1e-9);
    let bump_amp = render.shading_gain * ind.force;

    let mut pixels = vec![0.0f32; h * w * 3];
    for row in 0..h {
        let py = row as f64 + 0.5;
        for col in 0..w {
            let px = col as f64 + 0.5;
            let d2 = (px - bump_col).powi(2) + (py - bump_row).powi(2);
            let bump = bump_amp * (-d2 / (2.0 * bump_sigma * bump_sigma)).exp();
            let transmit: f64 = disks
                .iter()
                .map(|d| {
                    let dist = ((px - d.col).powi(2) + (py - d.row).powi(2)).sqrt();
                    let coverage = (d.radius - dist + 0.5).clamp(0.0, 1.0);
                    1.0 - d.opacity * coverage
                })
                .product();
            for (c, tint) in TINT.iter().enumerate() {
                let v = (render.background_level * tint + bump) * transmit;
                pixels[(row * w + col) * 3 + c] = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    TactileImage {
        height: h,
        width: w,
        pixels,
    }
}

/// Camera readout of an ideal image: additive Gaussian read noise, clamping
/// and quantization to `bit_depth` bits per channel.
pub fn capture<R: Rng + ?Sized>(render: &RenderConfig, ideal: &TactileImage, rng: &mut R) -> TactileImage {
    let levels = ((1u32 << render.bit_depth) - 1) as f64;
    let noise = (render.read_noise > 0.0).then(|| Normal::new(0.0, render.read_noise).expect("validated sigma"));
    let pixels = ideal
        .pixels
        .iter()
        .map(|&p| {
            let v = p as f64 + noise.as_ref().map_or(0.0, |n| n.sample(rng));
            ((v.clamp(0.0, 1.0) * levels).round() / levels) as f32
        })
        .collect();
    TactileImage {
        height: ideal.height,
        width: ideal.width,
        pixels,
    }
}

/// Channel-first `3 x H x W` tensor, each channel standardized to zero mean
/// and unit variance (variance floored at [`VARIANCE_FLOOR`]).
pub fn preprocess(img: &TactileImage) -> Tensor<f64> {
    let plane = img.height * img.width;
    let mut data = vec![0.0f64; 3 * plane];
    for c in 0..3 {
        let chan = &mut data[c * plane..(c + 1) * plane];
        for (dst, px) in chan.iter_mut().zip(img.pixels.chunks_exact(3)) {
            *dst = px[c] as f64;
        }
        standardize(chan);
    }
    Tensor::from_vec(&[3, img.height, img.width], data).expect("3 planes")
}

pub(crate) fn standardize(values: &mut [f64]) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = 1.0 / var.max(VARIANCE_FLOOR).sqrt();
    values.iter_mut().for_each(|v| *v = (*v - mean) * inv);
}
