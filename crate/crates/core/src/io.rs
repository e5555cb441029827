//! File formats: matrix CSV, 8-bit PGM images, masks, solve reports and
//! frame directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::densemat::DenseMatrix;
use crate::error::{Error, Result};
use crate::solvers::IterateRecord;
use crate::synthetic;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::parse(path.display().to_string(), msg)
}

/// Reads a comma-separated matrix, one row per line.
///
/// An optional first line `# rows cols` declares the shape, which must then
/// match the data. Blank lines are ignored.
pub fn read_matrix_csv(path: &Path) -> Result<DenseMatrix> {
    let text = read_text(path)?;
    parse_matrix_csv(&text, path)
}

fn parse_matrix_csv(text: &str, path: &Path) -> Result<DenseMatrix> {
    let mut declared: Option<(usize, usize)> = None;
    let mut data = Vec::new();
    let mut cols: Option<usize> = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            if rows > 0 || declared.is_some() {
                return Err(parse_err(
                    path,
                    format!("line {}: header must come first", lineno + 1),
                ));
            }
            let dims: Vec<usize> = header
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| {
                    parse_err(
                        path,
                        format!("line {}: malformed header `{line}`", lineno + 1),
                    )
                })?;
            match dims[..] {
                [r, c] => declared = Some((r, c)),
                _ => {
                    return Err(parse_err(
                        path,
                        format!("line {}: header needs `# rows cols`", lineno + 1),
                    ))
                }
            }
            continue;
        }
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                parse_err(
                    path,
                    format!("line {}: `{}` is not a number", lineno + 1, field.trim()),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    path,
                    format!("line {}: non-finite value", lineno + 1),
                ));
            }
            data.push(v);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(parse_err(
                    path,
                    format!(
                        "line {}: ragged row with {width} values, expected {c}",
                        lineno + 1
                    ),
                ))
            }
            Some(_) => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_err(path, "no data rows"))?;
    if let Some((r, c)) = declared {
        if (r, c) != (rows, cols) {
            return Err(parse_err(
                path,
                format!("header declares {r}x{c} but data is {rows}x{cols}"),
            ));
        }
    }
    DenseMatrix::new(rows, cols, data)
}

pub fn format_matrix_csv(m: &DenseMatrix) -> String {
    let mut out = format!("# {} {}\n", m.rows(), m.cols());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: &DenseMatrix) -> Result<()> {
    fs::write(path, format_matrix_csv(m)).map_err(|e| Error::io(path, e))
}

/// Reads a binary 0/1 mask of the expected shape.
pub fn read_mask_csv(path: &Path, shape: (usize, usize)) -> Result<DenseMatrix> {
    let mask = read_matrix_csv(path)?;
    if mask.shape() != shape {
        return Err(Error::Shape {
            op: "mask",
            lhs: shape,
            rhs: mask.shape(),
        });
    }
    if mask.as_slice().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(parse_err(path, "mask entries must be 0 or 1"));
    }
    Ok(mask)
}

/// Random mask dropping each entry with probability `drop_frac`.
pub fn generated_mask(shape: (usize, usize), drop_frac: f64, seed: u64) -> Result<DenseMatrix> {
    if !(0.0..=1.0).contains(&drop_frac) {
        return Err(Error::contract(format!(
            "drop fraction must lie in [0, 1], got {drop_frac}"
        )));
    }
    Ok(synthetic::bernoulli_mask(
        shape.0,
        shape.1,
        1.0 - drop_frac,
        seed,
    ))
}

/// Loads an 8-bit PGM (P2 or P5) as a height×width matrix in `[0, 1]`.
pub fn read_pgm(path: &Path) -> Result<DenseMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|msg| parse_err(path, msg))
}

fn decode_pgm(bytes: &[u8]) -> std::result::Result<DenseMatrix, String> {
    let mut pos = 0;
    let mut header = Vec::with_capacity(4);
    while header.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        header.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    let binary = match header[0].as_str() {
        "P2" => false,
        "P5" => true,
        other => return Err(format!("unsupported magic `{other}` (expected P2 or P5)")),
    };
    let dim = |s: &str, what: &str| -> std::result::Result<usize, String> {
        s.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| format!("invalid {what} `{s}`"))
    };
    let width = dim(&header[1], "width")?;
    let height = dim(&header[2], "height")?;
    if header[3] != "255" {
        return Err(format!("maxval must be 255, got {}", header[3]));
    }
    let count = width * height;
    let pixels: Vec<f64> = if binary {
        // exactly one whitespace byte separates the header from the raster
        let raster = bytes.get(pos + 1..).unwrap_or(&[]);
        if raster.len() < count {
            return Err(format!("expected {count} pixels, found {}", raster.len()));
        }
        raster[..count].iter().map(|&b| b as f64 / 255.0).collect()
    } else {
        let text = String::from_utf8_lossy(&bytes[pos..]);
        let values: Vec<f64> = text
            .split_whitespace()
            .map(|t| match t.parse::<u8>() {
                Ok(v) => Ok(v as f64 / 255.0),
                Err(_) => Err(format!("invalid pixel `{t}`")),
            })
            .collect::<std::result::Result<_, _>>()?;
        if values.len() != count {
            return Err(format!("expected {count} pixels, found {}", values.len()));
        }
        values
    };
    DenseMatrix::new(height, width, pixels).map_err(|e| e.to_string())
}

/// Clamps to `[0, 1]` and rounds to the nearest of 256 levels.
pub fn quantize(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(image: &DenseMatrix) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.cols(), image.rows()).into_bytes();
    out.extend(image.as_slice().iter().map(|&v| quantize(v)));
    out
}

/// Writes a binary PGM after clamping and quantizing.
pub fn write_pgm(path: &Path, image: &DenseMatrix) -> Result<()> {
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

/// ASCII variant of [`write_pgm`].
pub fn write_pgm_ascii(path: &Path, image: &DenseMatrix) -> Result<()> {
    let mut out = format!("P2\n{} {}\n255\n", image.cols(), image.rows());
    for i in 0..image.rows() {
        let row: Vec<String> = image
            .row(i)
            .iter()
            .map(|&v| quantize(v).to_string())
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// `10 log₁₀(1 / MSE)` for images on the `[0, 1]` scale.
pub fn psnr(estimate: &DenseMatrix, truth: &DenseMatrix) -> Result<f64> {
    let mse = estimate.sub(truth)?.frobenius_sq() / truth.as_slice().len() as f64;
    Ok(10.0 * (1.0 / mse).log10())
}

pub fn write_report_csv(path: &Path, records: &[IterateRecord]) -> Result<()> {
    crate::sweep::write_rows(path, records)
}

pub fn read_report_csv(path: &Path) -> Result<Vec<IterateRecord>> {
    crate::sweep::read_rows(path)
}

/// PGM files of `dir` in lexicographic order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|ext| ext.eq_ignore_ascii_case("pgm"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Frames of equal size stacked as columns of a pixels×frames matrix.
pub fn read_frames(dir: &Path) -> Result<(DenseMatrix, (usize, usize), Vec<PathBuf>)> {
    let paths = list_frames(dir)?;
    if paths.is_empty() {
        return Err(parse_err(dir, "no .pgm frames found"));
    }
    let images = paths
        .iter()
        .map(|p| read_pgm(p))
        .collect::<Result<Vec<_>>>()?;
    let shape = images[0].shape();
    for (img, path) in images.iter().zip(&paths) {
        if img.shape() != shape {
            return Err(parse_err(
                path,
                format!(
                    "frame is {:?}, expected {:?} like the first frame",
                    img.shape(),
                    shape
                ),
            ));
        }
    }
    let pixels = shape.0 * shape.1;
    let stacked = DenseMatrix::from_fn(pixels, images.len(), |i, t| images[t].as_slice()[i]);
    Ok((stacked, shape, paths))
}

/// Writes column `t` of `frames` as `dir/<name t>`.
pub fn write_frames(
    dir: &Path,
    frames: &DenseMatrix,
    shape: (usize, usize),
    names: &[String],
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (t, name) in names.iter().enumerate().take(frames.cols()) {
        let image = DenseMatrix::new(shape.0, shape.1, frames.col(t))?;
        write_pgm(&dir.join(name), &image)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn matrix_csv_round_trip() {
        let dir = tmp();
        let path = dir.path().join("m.csv");
        let m = DenseMatrix::from_rows(&[[1.0, -2.5, 1e-17], [0.1, 3.0, 4.0]]);
        write_matrix_csv(&path, &m).unwrap();
        assert_eq!(read_matrix_csv(&path).unwrap(), m);
    }

    #[test]
    fn matrix_csv_without_header() {
        let m = parse_matrix_csv("1, 2\n3,4\n\n", Path::new("x")).unwrap();
        assert_eq!(m, DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]));
    }

    #[test]
    fn matrix_csv_rejects_bad_input() {
        let p = Path::new("x.csv");
        assert!(parse_matrix_csv("1,2\n3\n", p).is_err());
        assert!(parse_matrix_csv("# 3 2\n1,2\n3,4\n", p).is_err());
        assert!(parse_matrix_csv("1,a\n", p).is_err());
        assert!(parse_matrix_csv("", p).is_err());
        assert!(parse_matrix_csv("# 2\n1,2\n", p).is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = read_matrix_csv(Path::new("/nonexistent/m.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/m.csv"));
    }

    #[test]
    fn pgm_round_trip_is_idempotent() {
        let dir = tmp();
        let img = DenseMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 / 11.0);
        for ascii in [false, true] {
            let path = dir.path().join(if ascii { "a.pgm" } else { "b.pgm" });
            if ascii {
                write_pgm_ascii(&path, &img).unwrap();
            } else {
                write_pgm(&path, &img).unwrap();
            }
            let once = read_pgm(&path).unwrap();
            write_pgm(&path, &once).unwrap();
            let twice = read_pgm(&path).unwrap();
            assert_eq!(once, twice);
            assert!(once.sub(&img).unwrap().max_abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn pgm_header_comments_and_errors() {
        let m = decode_pgm(b"P2\n# comment\n2 1\n255\n0 255\n").unwrap();
        assert_eq!(m, DenseMatrix::from_rows(&[[0.0, 1.0]]));
        assert!(decode_pgm(b"P2\n2 1\n15\n0 15\n").is_err());
        assert!(decode_pgm(b"P3\n2 1\n255\n0 0\n").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\x00").is_err());
        assert!(decode_pgm(b"P2\n0 1\n255\n").is_err());
    }

    #[test]
    fn quantize_clamps() {
        assert_eq!(quantize(-0.3), 0);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(0.5), 128);
    }

    #[test]
    fn psnr_of_uniform_error() {
        let a = DenseMatrix::filled(2, 2, 0.5);
        let b = DenseMatrix::filled(2, 2, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn mask_validation() {
        let dir = tmp();
        let path = dir.path().join("mask.csv");
        fs::write(&path, "1,0\n0,1\n").unwrap();
        assert!(read_mask_csv(&path, (2, 2)).is_ok());
        assert!(matches!(
            read_mask_csv(&path, (2, 3)),
            Err(Error::Shape { .. })
        ));
        fs::write(&path, "1,0.5\n0,1\n").unwrap();
        assert!(read_mask_csv(&path, (2, 2)).is_err());
        assert!(generated_mask((2, 2), 1.5, 0).is_err());
    }

    #[test]
    fn report_round_trip() {
        let dir = tmp();
        let path = dir.path().join("r.csv");
        let records = vec![
            IterateRecord {
                iteration: 0,
                data_loss: 1.0,
                reg_loss: 2.0,
                total: 3.0,
            },
            IterateRecord {
                iteration: 5,
                data_loss: 0.5,
                reg_loss: 1.25,
                total: 1.75,
            },
        ];
        write_report_csv(&path, &records).unwrap();
        assert_eq!(read_report_csv(&path).unwrap(), records);
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("iteration,data_loss,reg_loss,total\n"));
    }

    #[test]
    fn frames_round_trip() {
        let dir = tmp();
        let frames = DenseMatrix::from_fn(6, 3, |i, t| ((i + t) % 5) as f64 / 4.0);
        let names: Vec<String> = (0..3).map(|t| format!("f{t:03}.pgm")).collect();
        write_frames(dir.path(), &frames, (2, 3), &names).unwrap();
        let (back, shape, paths) = read_frames(dir.path()).unwrap();
        assert_eq!(shape, (2, 3));
        assert_eq!(paths.len(), 3);
        assert!(back.sub(&frames).unwrap().max_abs() <= 0.5 / 255.0 + 1e-12);
    }

    #[test]
    fn frames_must_share_a_size() {
        let dir = tmp();
        write_pgm(&dir.path().join("a.pgm"), &DenseMatrix::zeros(2, 2)).unwrap();
        write_pgm(&dir.path().join("b.pgm"), &DenseMatrix::zeros(3, 2)).unwrap();
        assert!(read_frames(dir.path()).is_err());
    }
}
