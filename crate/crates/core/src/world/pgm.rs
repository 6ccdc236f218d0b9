//! Map persistence: binary portable graymap plus a metadata sidecar.
//!
//! Pixel values: 0 = occupied, 255 = free, 128 = unknown. The first image row
//! is the top of the map (largest y). The sidecar `<prefix>.yaml` holds
//! `image`, `resolution` and `origin: [x, y, theta]`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{CellIndex, OccupancyGrid, Pose2D, L_MAX, L_MIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    pub image: String,
    pub resolution: f64,
    pub origin: [f64; 3],
}

pub fn pixel_value(log_odds: f32) -> u8 {
    if log_odds > 0.0 {
        0
    } else if log_odds < 0.0 {
        255
    } else {
        128
    }
}

fn log_odds_of(pixel: u8) -> f32 {
    match pixel {
        0..=63 => L_MAX,
        192..=255 => L_MIN,
        _ => 0.0,
    }
}

/// PGM bytes for a grid.
pub fn encode_pgm(grid: &OccupancyGrid) -> Vec<u8> {
    let (w, h) = (grid.width(), grid.height());
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h);
    for iy in (0..h).rev() {
        for ix in 0..w {
            out.push(pixel_value(grid.log_odds(CellIndex::new(ix, iy))));
        }
    }
    out
}

fn meta_path(prefix: &Path) -> PathBuf {
    prefix.with_extension("yaml")
}

fn pgm_path(prefix: &Path) -> PathBuf {
    prefix.with_extension("pgm")
}

/// Writes `<prefix>.pgm` and `<prefix>.yaml`.
pub fn save_map(grid: &OccupancyGrid, prefix: &Path) -> Result<()> {
    let pgm = pgm_path(prefix);
    fs::write(&pgm, encode_pgm(grid)).map_err(|e| Error::io(&pgm, e))?;
    let o = grid.origin();
    let meta = MapMetadata {
        image: pgm
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        resolution: grid.resolution(),
        origin: [o.x, o.y, o.theta],
    };
    let text = serde_yaml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    let mp = meta_path(prefix);
    fs::write(&mp, text).map_err(|e| Error::io(&mp, e))
}

/// Reads a map saved by [`save_map`]. `path` may be the prefix, the `.yaml`
/// sidecar or the `.pgm` image.
pub fn load_map(path: &Path) -> Result<OccupancyGrid> {
    let mp = meta_path(path);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: MapMetadata = serde_yaml::from_str(&text).map_err(|e| Error::MapFormat {
        path: mp.clone(),
        reason: e.to_string(),
    })?;
    if !(meta.resolution > 0.0) || meta.origin[2] != 0.0 {
        return Err(Error::MapFormat {
            path: mp,
            reason: "resolution must be positive and origin unrotated".into(),
        });
    }
    let img = mp.with_file_name(&meta.image);
    let bytes = fs::read(&img).map_err(|e| Error::io(&img, e))?;
    decode_pgm(&bytes, meta.resolution, Pose2D::new(meta.origin[0], meta.origin[1], 0.0))
        .map_err(|reason| Error::MapFormat { path: img, reason })
}

pub fn decode_pgm(
    bytes: &[u8],
    resolution: f64,
    origin: Pose2D,
) -> std::result::Result<OccupancyGrid, String> {
    let mut pos = 0usize;
    let mut header = Vec::with_capacity(4);
    while header.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if header[0] != "P5" {
        return Err(format!("expected P5 magic, found {}", header[0]));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header field `{s}`"));
    let (w, h, maxval) = (parse(&header[1])?, parse(&header[2])?, parse(&header[3])?);
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    pos += 1; // single whitespace byte after maxval
    let data = bytes.get(pos..pos + w * h).ok_or("truncated pixel data")?;
    let mut grid = OccupancyGrid::new(resolution, origin, w, h);
    for (row, chunk) in data.chunks(w).enumerate() {
        let iy = h - 1 - row;
        for (ix, px) in chunk.iter().enumerate() {
            grid.set_log_odds(CellIndex::new(ix, iy), log_odds_of(*px));
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_preserves_classification() {
        let mut g = OccupancyGrid::new(0.05, Pose2D::new(-1.0, 2.0, 0.0), 7, 5);
        g.set_log_odds(CellIndex::new(0, 0), 2.0);
        g.set_log_odds(CellIndex::new(6, 4), -1.0);
        g.set_log_odds(CellIndex::new(3, 1), 0.85);
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("map");
        save_map(&g, &prefix).unwrap();
        let bytes = std::fs::read(prefix.with_extension("pgm")).unwrap();
        assert!(bytes.starts_with(b"P5\n7 5\n255\n"));
        // top-left pixel is cell (0, 4): unknown
        assert_eq!(bytes[11], 128);
        let back = load_map(&prefix).unwrap();
        assert_eq!(back.width(), 7);
        assert_eq!(back.origin(), g.origin());
        for iy in 0..5 {
            for ix in 0..7 {
                let c = CellIndex::new(ix, iy);
                assert_eq!(pixel_value(back.log_odds(c)), pixel_value(g.log_odds(c)));
            }
        }
    }

    #[test]
    fn bad_magic() {
        assert!(decode_pgm(b"P2\n1 1\n255\n\x00", 0.05, Pose2D::identity()).is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00", 0.05, Pose2D::identity()).is_err());
    }
}
