//! Cameras, projection, silhouette rasterization, contour distance
//! transforms and rim-vertex extraction, plus their on-disk formats.

mod boundary;
mod camera;
mod dt;
mod raster;

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder};
use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};

pub use boundary::{boundary_vertices, boundary_vertices_with, BoundaryVertex, EdgeTopology, CONTOUR_TOLERANCE, VISIBILITY_TOLERANCE};
pub use camera::{
    cameras_from_json, cameras_to_json, projection_matrix, Camera, CameraRecord, Intrinsics,
    MIN_DEPTH,
};
pub use dt::{contour, distance_transform, squared_edt, Cell, SilhouetteObservation};
pub use raster::{rasterize_depth, rasterize_mask, DepthBuffer, Mask};

/// Perspective projection of a world point to pixel coordinates.
pub fn project(camera: &Camera, x: &Vector3<f64>) -> Result<Vector2<f64>> {
    camera.project(x)
}

/// Encodes a mask as binary PGM (P5) with values 0/255.
pub fn pgm_bytes(mask: &Mask) -> Vec<u8> {
    let data: Vec<u8> = mask.pixels.iter().map(|&p| if p { 255 } else { 0 }).collect();
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&data, mask.width as u32, mask.height as u32, ExtendedColorType::L8)
        .expect("in-memory PGM encoding");
    out
}

pub fn write_pgm(path: &Path, mask: &Mask) -> Result<()> {
    std::fs::write(path, pgm_bytes(mask)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Mask> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::malformed(format!("PGM {}", path.display()), e.to_string()))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Ok(Mask {
        width: w as usize,
        height: h as usize,
        pixels: img.into_raw().into_iter().map(|v| v >= 128).collect(),
    })
}

/// Magic bytes of the distance-image format: 8 bytes of magic, then width
/// and height as little-endian u32, then `width * height` little-endian f32
/// values in row-major order.
pub const DT_MAGIC: &[u8; 8] = b"SILDT\0\x01\0";

pub fn dt_bytes(width: usize, height: usize, dt: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + dt.len() * 4);
    out.extend_from_slice(DT_MAGIC);
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    for &v in dt {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn parse_dt(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    if bytes.len() < 16 || &bytes[..8] != DT_MAGIC {
        return Err(Error::malformed("distance image", "bad header"));
    }
    let w = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != w * h * 4 {
        return Err(Error::malformed(
            "distance image",
            format!("expected {} bytes of data, found {}", w * h * 4, body.len()),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Ok((w, h, values))
}

pub fn write_dt(path: &Path, obs: &SilhouetteObservation) -> Result<()> {
    std::fs::write(path, dt_bytes(obs.width(), obs.height(), &obs.dt))
        .map_err(|e| Error::io(path, e))
}

/// Loads a mask and its stored distance image.
pub fn read_silhouette(mask_path: &Path, dt_path: &Path) -> Result<SilhouetteObservation> {
    let mask = read_pgm(mask_path)?;
    let bytes = std::fs::read(dt_path).map_err(|e| Error::io(dt_path, e))?;
    let (w, h, dt) = parse_dt(&bytes)?;
    if (w, h) != (mask.width, mask.height) {
        return Err(Error::malformed(
            "distance image",
            format!("size {w}x{h} does not match mask {}x{}", mask.width, mask.height),
        ));
    }
    SilhouetteObservation::from_parts(mask, dt)
}
