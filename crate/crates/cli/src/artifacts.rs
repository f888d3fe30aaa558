//! File artifacts: 16-bit PGM images, marching-squares contour CSVs, and the
//! per-run manifest.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use gwnet_core::{Error, Result};

/// Head-contour levels rendered for every exported head field.
pub const CONTOUR_LEVELS: [f64; 5] = [0.9, 0.92, 0.94, 0.96, 0.98];

/// Write a grayscale 16-bit binary PGM. Values are mapped linearly from
/// [0, 1] to [0, 65535] (clamped), most significant byte first.
pub fn write_pgm16(path: &Path, height: usize, width: usize, values: &[f32]) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::shape(
            "pgm export",
            format!("{} pixels", height * width),
            format!("{}", values.len()),
        ));
    }
    let mut bytes = Vec::with_capacity(32 + 2 * values.len());
    bytes.extend_from_slice(format!("P5\n{width} {height}\n65535\n").as_bytes());
    for &v in values {
        let q = (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Marching-squares line segments of `field` (row-major, `height`×`width`)
/// at one iso-level. Coordinates are in cell units: x along columns, y along
/// rows, with linear interpolation between cell centers.
pub fn contour_segments(
    field: &[f32],
    height: usize,
    width: usize,
    level: f64,
) -> Vec<[f64; 4]> {
    let at = |r: usize, c: usize| field[r * width + c] as f64;
    let mut segments = Vec::new();
    if height < 2 || width < 2 {
        return segments;
    }
    // Interpolated crossing on the edge from value a (at t=0) to b (t=1).
    let lerp = |a: f64, b: f64| {
        if (b - a).abs() < 1e-300 {
            0.5
        } else {
            ((level - a) / (b - a)).clamp(0.0, 1.0)
        }
    };
    for r in 0..height - 1 {
        for c in 0..width - 1 {
            let tl = at(r, c);
            let tr = at(r, c + 1);
            let br = at(r + 1, c + 1);
            let bl = at(r + 1, c);
            let mut case = 0usize;
            if tl >= level {
                case |= 1;
            }
            if tr >= level {
                case |= 2;
            }
            if br >= level {
                case |= 4;
            }
            if bl >= level {
                case |= 8;
            }
            if case == 0 || case == 15 {
                continue;
            }
            let x = c as f64;
            let y = r as f64;
            // Edge midpoints with interpolation: top, right, bottom, left.
            let top = [x + lerp(tl, tr), y];
            let right = [x + 1.0, y + lerp(tr, br)];
            let bottom = [x + lerp(bl, br), y + 1.0];
            let left = [x, y + lerp(tl, bl)];
            let mut push = |a: [f64; 2], b: [f64; 2]| {
                segments.push([a[0], a[1], b[0], b[1]]);
            };
            match case {
                1 | 14 => push(left, top),
                2 | 13 => push(top, right),
                4 | 11 => push(right, bottom),
                8 | 7 => push(bottom, left),
                3 | 12 => push(left, right),
                6 | 9 => push(top, bottom),
                5 | 10 => {
                    // Saddle: disambiguate with the cell-center average.
                    let center = (tl + tr + br + bl) / 4.0;
                    let high_center = center >= level;
                    if (case == 5) == high_center {
                        push(left, top);
                        push(right, bottom);
                    } else {
                        push(left, bottom);
                        push(top, right);
                    }
                }
                _ => unreachable!(),
            }
        }
    }
    segments
}

/// CSV of contour segments at all of [`CONTOUR_LEVELS`]:
/// `level,x0,y0,x1,y1` per line.
pub fn write_contours_csv(
    path: &Path,
    field: &[f32],
    height: usize,
    width: usize,
) -> Result<()> {
    let mut out = String::from("level,x0,y0,x1,y1\n");
    for &level in &CONTOUR_LEVELS {
        for seg in contour_segments(field, height, width, level) {
            writeln!(
                out,
                "{level},{:.6},{:.6},{:.6},{:.6}",
                seg[0], seg[1], seg[2], seg[3]
            )
            .expect("string write");
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write `<out_dir>/run.manifest` capturing the fully resolved run:
/// the command, every effective setting, and all seeds.
pub fn write_run_manifest(
    out_dir: &Path,
    command: &str,
    entries: &[(&str, String)],
) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "command = {command}").expect("string write");
    for (k, v) in entries {
        writeln!(text, "{k} = {v}").expect("string write");
    }
    fs::write(out_dir.join("run.manifest"), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_byte_order() {
        let dir = std::env::temp_dir().join(format!("pgm_test_{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("x.pgm");
        write_pgm16(&path, 1, 3, &[0.0, 0.5, 1.0]).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n3 1\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let px = &bytes[header.len()..];
        assert_eq!(px.len(), 6);
        assert_eq!(u16::from_be_bytes([px[0], px[1]]), 0);
        assert_eq!(u16::from_be_bytes([px[2], px[3]]), 32768);
        assert_eq!(u16::from_be_bytes([px[4], px[5]]), 65535);
        assert!(write_pgm16(&path, 2, 2, &[0.0; 3]).is_err());
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn contours_cross_a_simple_gradient() {
        // Linear ramp along x: field(x) = x/3 on a 2×4 grid; level 0.5
        // crosses between columns 1 and 2 at x = 1.5.
        let field: Vec<f32> = (0..8).map(|i| (i % 4) as f32 / 3.0).collect();
        let segs = contour_segments(&field, 2, 4, 0.5);
        assert!(!segs.is_empty());
        for seg in &segs {
            assert!((seg[0] - 1.5).abs() < 1e-6 && (seg[2] - 1.5).abs() < 1e-6);
        }
        // Constant field: no contours at any level.
        let flat = vec![0.3f32; 8];
        assert!(contour_segments(&flat, 2, 4, 0.5).is_empty());
    }

    #[test]
    fn contour_segments_have_endpoints_on_the_level() {
        // Radial bump: check every endpoint interpolates to ≈ the level.
        let (h, w) = (9, 9);
        let field: Vec<f32> = (0..h * w)
            .map(|i| {
                let r = (i / w) as f64 - 4.0;
                let c = (i % w) as f64 - 4.0;
                (1.0 - (r * r + c * c) / 32.0).max(0.0) as f32
            })
            .collect();
        let at = |x: f64, y: f64| {
            // Bilinear sample of the field at fractional coordinates.
            let c0 = x.floor() as usize;
            let r0 = y.floor() as usize;
            let fx = x - c0 as f64;
            let fy = y - r0 as f64;
            let c1 = (c0 + 1).min(w - 1);
            let r1 = (r0 + 1).min(h - 1);
            let v00 = field[r0 * w + c0] as f64;
            let v01 = field[r0 * w + c1] as f64;
            let v10 = field[r1 * w + c0] as f64;
            let v11 = field[r1 * w + c1] as f64;
            v00 * (1.0 - fx) * (1.0 - fy)
                + v01 * fx * (1.0 - fy)
                + v10 * (1.0 - fx) * fy
                + v11 * fx * fy
        };
        let segs = contour_segments(&field, h, w, 0.5);
        assert!(segs.len() > 4);
        for seg in &segs {
            assert!((at(seg[0], seg[1]) - 0.5).abs() < 1e-6);
            assert!((at(seg[2], seg[3]) - 0.5).abs() < 1e-6);
        }
    }
}
