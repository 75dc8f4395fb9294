//! Frames, binary masks and their PPM/PGM encodings.

use std::fs;
use std::path::Path;

use autograd::Tensor;

use crate::error::{Error, Result};

/// Image with values in `[0, 1]`, stored channel-first as `[C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameTensor(pub Tensor);

impl FrameTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.ndim() != 3 {
            return Err(Error::DimensionMismatch(format!("frame must be [C, H, W], got {:?}", t.shape())));
        }
        Ok(FrameTensor(t))
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        FrameTensor(Tensor::zeros([c, h, w]))
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    /// Quantizes to 8 bits, channel-first.
    pub fn to_u8(&self) -> Vec<u8> {
        self.0.data().iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_u8(c: usize, h: usize, w: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != c * h * w {
            return Err(Error::DimensionMismatch(format!("{} bytes for a {c}x{h}x{w} frame", bytes.len())));
        }
        Ok(FrameTensor(Tensor::new([c, h, w], bytes.iter().map(|&b| b as f64 / 255.0).collect())))
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        if self.channels() != 3 {
            return Err(Error::InvalidArgument(format!("PPM needs 3 channels, frame has {}", self.channels())));
        }
        let (h, w) = (self.height(), self.width());
        let q = self.to_u8();
        let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
        for i in 0..h * w {
            for c in 0..3 {
                out.push(q[c * h * w + i]);
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (w, h, body) = parse_pnm(&bytes, b"P6")?;
        if body.len() != 3 * w * h {
            return Err(Error::Truncated(format!("{}: PPM body has {} bytes", path.display(), body.len())));
        }
        let mut data = vec![0.0; 3 * h * w];
        for i in 0..h * w {
            for c in 0..3 {
                data[c * h * w + i] = body[3 * i + c] as f64 / 255.0;
            }
        }
        Ok(FrameTensor(Tensor::new([3, h, w], data)))
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn parse_pnm<'a>(bytes: &'a [u8], magic: &[u8]) -> Result<(usize, usize, &'a [u8])> {
    if !bytes.starts_with(magic) {
        return Err(Error::Format("unexpected PNM magic".into()));
    }
    let mut fields = Vec::new();
    let mut pos = 2;
    while fields.len() < 3 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("malformed PNM header".into()));
        }
        let s = std::str::from_utf8(&bytes[start..pos]).unwrap();
        fields.push(s.parse::<usize>().map_err(|_| Error::Format("bad PNM number".into()))?);
    }
    if fields[2] != 255 {
        return Err(Error::Format("only 8-bit PNM supported".into()));
    }
    Ok((fields[0], fields[1], &bytes[(pos + 1).min(bytes.len())..]))
}

/// Binary mask, row-major `H x W`; 1 keeps the source pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl MaskImage {
    pub fn filled(height: usize, width: usize, v: u8) -> Self {
        MaskImage { height, width, data: vec![v; height * width] }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, self.height, self.width], self.data.iter().map(|&v| v as f64).collect())
    }

    pub fn invert(&self) -> Self {
        MaskImage { height: self.height, width: self.width, data: self.data.iter().map(|&v| 1 - v).collect() }
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| v * 255));
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (w, h, body) = parse_pnm(&bytes, b"P5")?;
        if body.len() != w * h {
            return Err(Error::Truncated(format!("{}: PGM body has {} bytes", path.display(), body.len())));
        }
        Ok(MaskImage { height: h, width: w, data: body.iter().map(|&v| u8::from(v >= 128)).collect() })
    }
}

/// `M * I`, per pixel and channel.
pub fn apply_mask(frame: &FrameTensor, mask: &MaskImage) -> Result<FrameTensor> {
    if frame.height() != mask.height || frame.width() != mask.width {
        return Err(Error::DimensionMismatch(format!(
            "mask {}x{} vs frame {}x{}",
            mask.height,
            mask.width,
            frame.height(),
            frame.width()
        )));
    }
    let hw = mask.height * mask.width;
    let mut out = frame.0.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v *= mask.data[i % hw] as f64;
    }
    Ok(FrameTensor(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let bytes: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 7 % 256) as u8).collect();
        let f = FrameTensor::from_u8(3, 4, 5, &bytes).unwrap();
        let p = dir.path().join("a.ppm");
        f.write_ppm(&p).unwrap();
        let back = FrameTensor::read_ppm(&p).unwrap();
        assert_eq!(back.to_u8(), bytes);
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = MaskImage { height: 2, width: 3, data: vec![1, 0, 1, 1, 1, 0] };
        let p = dir.path().join("m.pgm");
        m.write_pgm(&p).unwrap();
        assert_eq!(MaskImage::read_pgm(&p).unwrap(), m);
    }
}
