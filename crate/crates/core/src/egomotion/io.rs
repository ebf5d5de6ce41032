//! Depth-map (`DMAP`) and color-frame (binary PPM) files.
//!
//! DMAP layout: magic `b"DMAP"`, little-endian `u32` width and height, then
//! `width × height` little-endian `f32` depths in meters, row-major, with
//! NaN marking invalid pixels.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};

use super::{DepthMap, EgoError, RgbFrame};

const MAGIC: &[u8; 4] = b"DMAP";

pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 4 * depth.depth.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&depth.width.to_le_bytes());
    buf.extend_from_slice(&depth.height.to_le_bytes());
    for d in &depth.depth {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap, EgoError> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(EgoError::Format("missing DMAP header".into()));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let n = width as usize * height as usize;
    let body = &bytes[12..];
    if body.len() != 4 * n {
        return Err(EgoError::Format(format!(
            "expected {} depth bytes for {width}x{height}, found {}",
            4 * n,
            body.len()
        )));
    }
    let depth = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DepthMap {
        width,
        height,
        depth,
    })
}

pub fn read_depth(path: &Path) -> Result<DepthMap, EgoError> {
    let bytes = fs::read(path).map_err(|e| EgoError::io(path, e))?;
    decode_depth(&bytes).map_err(|e| EgoError::Format(format!("{}: {e}", path.display())))
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<(), EgoError> {
    write_atomic(path, &encode_depth(depth))
}

pub fn encode_ppm(frame: &RgbFrame) -> Result<Vec<u8>, EgoError> {
    let mut buf = Vec::new();
    PnmEncoder::new(&mut buf)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(
            &frame.data,
            frame.width,
            frame.height,
            ExtendedColorType::Rgb8,
        )
        .map_err(|e| EgoError::Format(e.to_string()))?;
    Ok(buf)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbFrame, EgoError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Pnm)
        .map_err(|e| EgoError::Format(e.to_string()))?
        .to_rgb8();
    Ok(RgbFrame {
        width: img.width(),
        height: img.height(),
        data: img.into_raw(),
    })
}

pub fn read_ppm(path: &Path) -> Result<RgbFrame, EgoError> {
    let bytes = fs::read(path).map_err(|e| EgoError::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| EgoError::Format(format!("{}: {e}", path.display())))
}

pub fn write_ppm(path: &Path, frame: &RgbFrame) -> Result<(), EgoError> {
    write_atomic(path, &encode_ppm(frame)?)
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), EgoError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| EgoError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| EgoError::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| EgoError::io(path, e))?;
    tmp.persist(path).map_err(|e| EgoError::io(path, e.error))?;
    Ok(())
}

/// `<clip>_<frame:06>.<ext>`
pub fn frame_file_name(clip: &str, frame: u64, ext: &str) -> String {
    format!("{clip}_{frame:06}.{ext}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_layout_is_exact() {
        let d = DepthMap {
            width: 2,
            height: 1,
            depth: vec![1.5, f32::NAN],
        };
        let bytes = encode_depth(&d);
        assert_eq!(&bytes[..4], b"DMAP");
        assert_eq!(&bytes[4..12], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1.5f32.to_le_bytes());
        let back = decode_depth(&bytes).unwrap();
        assert_eq!(back.depth[0], 1.5);
        assert!(back.depth[1].is_nan());
        assert!(decode_depth(&bytes[..14]).is_err());
        assert!(decode_depth(b"XMAP00000000").is_err());
    }

    #[test]
    fn ppm_is_binary_p6() {
        let f = RgbFrame {
            width: 2,
            height: 2,
            data: vec![255, 0, 0, 0, 255, 0, 0, 0, 255, 9, 9, 9],
        };
        let bytes = encode_ppm(&f).unwrap();
        assert_eq!(&bytes[..2], b"P6");
        assert_eq!(decode_ppm(&bytes).unwrap(), f);
        assert_eq!(frame_file_name("clipA", 42, "dmap"), "clipA_000042.dmap");
    }
}
