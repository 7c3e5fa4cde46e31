//! Slice extraction, windowing, fusion and PNG encoding.
//!
//! Image layout per orientation (row 0 is index 0 on the row axis):
//!
//! | orientation | fixed axis | rows | cols |
//! |-------------|------------|------|------|
//! | AXIAL       | z          | y    | x    |
//! | CORONAL     | y          | z    | x    |
//! | SAGITTAL    | x          | z    | y    |

use serde::{Deserialize, Serialize};

use crate::study::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Orientation {
    Axial,
    Coronal,
    Sagittal,
}

impl Orientation {
    pub const ALL: [Orientation; 3] = [Orientation::Axial, Orientation::Coronal, Orientation::Sagittal];

    /// Volume axis held fixed by this orientation.
    pub fn fixed_axis(self) -> usize {
        match self {
            Orientation::Axial => 2,
            Orientation::Coronal => 1,
            Orientation::Sagittal => 0,
        }
    }

    /// (row axis, column axis).
    pub fn image_axes(self) -> (usize, usize) {
        match self {
            Orientation::Axial => (1, 0),
            Orientation::Coronal => (2, 0),
            Orientation::Sagittal => (2, 1),
        }
    }

    pub fn extent(self, dims: [usize; 3]) -> usize {
        dims[self.fixed_axis()]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Orientation::Axial => "AXIAL",
            Orientation::Coronal => "CORONAL",
            Orientation::Sagittal => "SAGITTAL",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.as_str() == s)
    }
}

/// Raw intensities of one slice, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<i16>,
}

/// `index` must be below `orientation.extent(volume.dims())`.
pub fn extract_slice(volume: &Volume, orientation: Orientation, index: usize) -> Slice {
    let dims = volume.dims();
    let (ra, ca) = orientation.image_axes();
    let fixed = orientation.fixed_axis();
    assert!(index < dims[fixed], "slice index {index} out of range");
    let (rows, cols) = (dims[ra], dims[ca]);
    let mut values = Vec::with_capacity(rows * cols);
    let mut at = [0usize; 3];
    at[fixed] = index;
    for r in 0..rows {
        at[ra] = r;
        for c in 0..cols {
            at[ca] = c;
            values.push(volume.get(at));
        }
    }
    Slice { rows, cols, values }
}

/// Display value of one intensity under window `(center, width)`:
/// `round(255 * clamp((v - center + width/2) / width, 0, 1))`, ties away
/// from zero.
pub fn window_pixel(v: i16, center: f64, width: f64) -> u8 {
    let t = ((v as f64 - center + width / 2.0) / width).clamp(0.0, 1.0);
    (255.0 * t).round() as u8
}

pub fn blend_pixel(base: u8, overlay: u8, alpha: f64) -> u8 {
    ((1.0 - alpha) * base as f64 + alpha * overlay as f64).round() as u8
}

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

pub fn window_slice(slice: &Slice, center: f64, width: f64) -> GrayImage {
    GrayImage {
        width: slice.cols as u32,
        height: slice.rows as u32,
        pixels: slice.values.iter().map(|&v| window_pixel(v, center, width)).collect(),
    }
}

/// Blend two windowed images of equal shape.
pub fn fuse(base: &GrayImage, overlay: &GrayImage, alpha: f64) -> GrayImage {
    assert_eq!((base.width, base.height), (overlay.width, overlay.height));
    GrayImage {
        width: base.width,
        height: base.height,
        pixels: base
            .pixels
            .iter()
            .zip(&overlay.pixels)
            .map(|(&b, &o)| blend_pixel(b, o, alpha))
            .collect(),
    }
}

/// PNG with fixed encoder settings so equal pixels give equal bytes.
pub fn encode_png(image: &GrayImage) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width, image.height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Fast);
        enc.set_filter(png::Filter::NoFilter);
        let mut writer = enc.write_header().expect("in-memory png header");
        writer.write_image_data(&image.pixels).expect("in-memory png data");
    }
    out
}

pub fn decode_png(bytes: &[u8]) -> Result<GrayImage, png::DecodingError> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    Ok(GrayImage {
        width: info.width,
        height: info.height,
        pixels: buf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_law_examples() {
        assert_eq!(window_pixel(0, 40.0, 80.0), 0);
        assert_eq!(window_pixel(40, 40.0, 80.0), 128);
        assert_eq!(window_pixel(80, 40.0, 80.0), 255);
        assert_eq!(window_pixel(-1000, -600.0, 1500.0), 60);
        assert_eq!(window_pixel(7, 7.0, 3.0), 128);
    }

    #[test]
    fn blend_identity_and_rounding() {
        assert_eq!(blend_pixel(10, 250, 0.0), 10);
        assert_eq!(blend_pixel(10, 250, 1.0), 250);
        assert_eq!(blend_pixel(0, 1, 0.5), 1);
    }

    #[test]
    fn slice_axes() {
        let dims = [2, 3, 4];
        let vox: Vec<i16> = (0..24).collect();
        let v = Volume::new(dims, [1.0; 3], [0.0; 3], vox).unwrap();
        let ax = extract_slice(&v, Orientation::Axial, 1);
        assert_eq!((ax.rows, ax.cols), (3, 2));
        assert_eq!(ax.values, vec![6, 7, 8, 9, 10, 11]);
        let co = extract_slice(&v, Orientation::Coronal, 2);
        assert_eq!((co.rows, co.cols), (4, 2));
        assert_eq!(co.values, vec![4, 5, 10, 11, 16, 17, 22, 23]);
        let sa = extract_slice(&v, Orientation::Sagittal, 1);
        assert_eq!((sa.rows, sa.cols), (4, 3));
        assert_eq!(sa.values[..3], [1, 3, 5]);
    }

    #[test]
    fn png_round_trip() {
        let img = GrayImage {
            width: 3,
            height: 2,
            pixels: vec![0, 1, 2, 253, 254, 255],
        };
        let bytes = encode_png(&img);
        assert_eq!(decode_png(&bytes).unwrap(), img);
        assert_eq!(encode_png(&img), bytes);
    }
}
