use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

use super::raster::{FragBuffer, Fragment};

/// Planar `[channels, height, width]` float image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> Vec<f32> {
        let plane = self.n_pixels();
        (0..self.channels).map(|c| self.data[c * plane + y * self.width + x]).collect()
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }
}

/// Binary foreground mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn from_frag(frag: &FragBuffer) -> Self {
        Self {
            width: frag.width,
            height: frag.height,
            data: frag.mask(),
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn as_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
    }
}

fn to_u8(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8
}

/// 8-bit RGB PNG of a 3-channel image with values in `[-1, 1]`.
pub fn save_rgb_png(path: &Path, img: &Image) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::InvalidArgument(format!("rgb png needs 3 channels, got {}", img.channels)));
    }
    let plane = img.n_pixels();
    let buf = ImageBuffer::<Rgb<u8>, _>::from_fn(img.width as u32, img.height as u32, |x, y| {
        let i = y as usize * img.width + x as usize;
        Rgb([0, 1, 2].map(|c| to_u8(img.data[c * plane + i])))
    });
    buf.save(path)?;
    Ok(())
}

/// Any PNG as RGB in `[-1, 1]`.
pub fn load_rgb_png(path: &Path) -> Result<Image> {
    let rgb = image::open(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut img = Image::zeros(w, h, 3);
    for (i, p) in rgb.pixels().enumerate() {
        for c in 0..3 {
            img.data[c * w * h + i] = p.0[c] as f32 / 255.0 * 2.0 - 1.0;
        }
    }
    Ok(img)
}

pub fn save_mask_png(path: &Path, mask: &Mask) -> Result<()> {
    let buf = ImageBuffer::<Luma<u8>, _>::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        Luma([if mask.get(x as usize, y as usize) { 255 } else { 0 }])
    });
    buf.save(path)?;
    Ok(())
}

/// Foreground where the luminance is above half.
pub fn load_mask_png(path: &Path) -> Result<Mask> {
    let l = image::open(path)?.to_luma16();
    Ok(Mask {
        width: l.width() as usize,
        height: l.height() as usize,
        data: l.pixels().map(|p| p.0[0] >= 0x8000).collect(),
    })
}

/// 16-bit RGB PNG of a NOC image with values in `[0, 1]`.
pub fn save_noc_png(path: &Path, noc: &Image) -> Result<()> {
    if noc.channels != 3 {
        return Err(Error::InvalidArgument(format!("noc png needs 3 channels, got {}", noc.channels)));
    }
    let plane = noc.n_pixels();
    let buf = ImageBuffer::<Rgb<u16>, _>::from_fn(noc.width as u32, noc.height as u32, |x, y| {
        let i = y as usize * noc.width + x as usize;
        Rgb([0, 1, 2].map(|c| (noc.data[c * plane + i].clamp(0.0, 1.0) * 65535.0).round() as u16))
    });
    buf.save(path)?;
    Ok(())
}

/// 8- or 16-bit PNG as NOCs in `[0, 1]`.
pub fn load_noc_png(path: &Path) -> Result<Image> {
    let rgb = image::open(path)?.to_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut img = Image::zeros(w, h, 3);
    for (i, p) in rgb.pixels().enumerate() {
        for c in 0..3 {
            img.data[c * w * h + i] = p.0[c] as f32 / 65535.0;
        }
    }
    Ok(img)
}

pub const FRAG_MAGIC: &[u8; 4] = b"FRG1";

/// `FRG1`, u32 width, u32 height, then per pixel: i32 face (-1 for
/// background), u8 half, 3 x f32 barycentric weights. Little-endian.
pub fn write_frag<W: Write>(w: &mut W, frag: &FragBuffer) -> Result<()> {
    w.write_all(FRAG_MAGIC)?;
    w.write_all(&(frag.width as u32).to_le_bytes())?;
    w.write_all(&(frag.height as u32).to_le_bytes())?;
    for f in &frag.fragments {
        let face = if f.is_foreground() { f.face as i32 } else { -1 };
        w.write_all(&face.to_le_bytes())?;
        w.write_all(&[f.half])?;
        for b in f.bary {
            w.write_all(&b.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Inverse of [`write_frag`]; depth is not stored and reads back as infinity.
pub fn read_frag<R: Read>(r: &mut R) -> Result<FragBuffer> {
    let fmt = |msg: String| Error::Format { kind: "FRG1", msg };
    let mut head = [0u8; 12];
    r.read_exact(&mut head).map_err(|_| fmt("truncated header".into()))?;
    if &head[..4] != FRAG_MAGIC {
        return Err(fmt("bad magic".into()));
    }
    let width = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as usize;
    let height = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
    let mut fragments = Vec::with_capacity(width * height);
    let mut rec = [0u8; 17];
    for _ in 0..width * height {
        r.read_exact(&mut rec).map_err(|_| fmt("truncated pixel data".into()))?;
        let face = i32::from_le_bytes(rec[0..4].try_into().expect("4 bytes"));
        let f32_at = |o: usize| f32::from_le_bytes(rec[o..o + 4].try_into().expect("4 bytes"));
        fragments.push(if face < 0 {
            Fragment::EMPTY
        } else {
            Fragment {
                face: face as u32,
                half: rec[4],
                bary: [f32_at(5), f32_at(9), f32_at(13)],
                depth: f32::INFINITY,
            }
        });
    }
    Ok(FragBuffer {
        width,
        height,
        fragments,
    })
}

pub fn save_frag(path: &Path, frag: &FragBuffer) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_frag(&mut w, frag)?;
    w.flush()?;
    Ok(())
}

pub fn load_frag(path: &Path) -> Result<FragBuffer> {
    read_frag(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_png_round_trip_is_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let mut img = Image::zeros(5, 4, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i as f32 / 30.0) - 1.0;
        }
        save_rgb_png(&path, &img).unwrap();
        let back = load_rgb_png(&path).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn noc_png_is_sixteen_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.png");
        let mut img = Image::zeros(3, 3, 3);
        img.data[4] = 0.123_456;
        save_noc_png(&path, &img).unwrap();
        assert_eq!(image::open(&path).unwrap().color(), image::ColorType::Rgb16);
        let back = load_noc_png(&path).unwrap();
        assert!((back.data[4] - 0.123_456).abs() < 1.0 / 65535.0);
    }

    #[test]
    fn frag_round_trip() {
        let mut fb = FragBuffer::empty(2, 1);
        fb.fragments[1] = Fragment {
            face: 7,
            half: 1,
            bary: [0.25, 0.5, 0.25],
            depth: 1.0,
        };
        let mut bytes = Vec::new();
        write_frag(&mut bytes, &fb).unwrap();
        assert_eq!(bytes.len(), 12 + 2 * 17);
        let back = read_frag(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.fragments[0], Fragment::EMPTY);
        assert_eq!(back.fragments[1].face, 7);
        assert_eq!(back.fragments[1].bary, [0.25, 0.5, 0.25]);
        assert!(read_frag(&mut &bytes[..20]).is_err());
    }
}
