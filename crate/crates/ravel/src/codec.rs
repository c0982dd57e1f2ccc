//! 8-bit grayscale PNG and binary PGM (P5, maxval 255). Nothing else is
//! accepted: color, alpha, palettes and other bit depths are format errors.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use ravel_core::RangeImage;

use crate::{Error, Result};

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Pgm,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "png" => Some(Self::Png),
            "pgm" => Some(Self::Pgm),
            _ => None,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            Self::Png => "png",
            Self::Pgm => "pgm",
        }
    }
}

/// Loads an image, sniffing the format from its first bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<RangeImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}

/// Saves an image in the format named by the file extension.
pub fn save_image(image: &RangeImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = ImageFormat::from_path(path).ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        reason: "extension must be .png or .pgm".into(),
    })?;
    let bytes = encode(image, format);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn decode(bytes: &[u8]) -> Result<RangeImage, String> {
    if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else {
        Err("not a PNG or binary PGM file".into())
    }
}

pub fn encode(image: &RangeImage, format: ImageFormat) -> Vec<u8> {
    match format {
        ImageFormat::Png => encode_png(image),
        ImageFormat::Pgm => encode_pgm(image),
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<RangeImage, String> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale {
        return Err(format!("color type {:?}, expected 8-bit grayscale", info.color_type));
    }
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format!("bit depth {:?}, expected 8", info.bit_depth));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size().ok_or("image too large")?];
    let frame = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    buf.truncate(frame.buffer_size());
    RangeImage::new(w, h, buf).map_err(|e| e.to_string())
}

pub fn encode_png(image: &RangeImage) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        // writing to a Vec cannot fail for a well-formed image
        let mut writer = enc.write_header().expect("png header");
        writer.write_image_data(image.pixels()).expect("png data");
    }
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<RangeImage, String> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments before each header number
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("malformed PGM header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("PGM header number out of range")?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(format!("maxval {maxval}, expected 255 (8-bit)"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed PGM header".into());
    }
    let data = &bytes[pos + 1..];
    let n = w.checked_mul(h).ok_or("PGM dimensions overflow")?;
    if data.len() != n {
        return Err(format!("expected {n} pixel bytes, found {}", data.len()));
    }
    RangeImage::new(w, h, data.to_vec()).map_err(|e| e.to_string())
}

pub fn encode_pgm(image: &RangeImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.pixels());
    out
}
