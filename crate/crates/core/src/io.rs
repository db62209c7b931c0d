//! File formats: pattern text files, PGM images, PSF banks, prior matrices
//! and `key=value` imaging configs.

use std::fs;
use std::path::{Path, PathBuf};

use crate::depth::{DepthMap, KernelBank};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::pattern::AperturePattern;
use crate::prior::NaturalImagePrior;
use crate::psf::{BlurScale, Psf};
use crate::radiometry::ImagingConfig;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pattern(path: &Path) -> Result<AperturePattern> {
    AperturePattern::parse(&read_text(path)?).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_pattern(path: &Path, pattern: &AperturePattern) -> Result<()> {
    write_bytes(path, pattern.to_text().as_bytes())
}

/// Raw PGM raster: width, height, maxval and integer samples.
type PgmRaster = (usize, usize, usize, Vec<usize>);

/// Decodes a binary (P5) or ASCII (P2) PGM with maxval up to 65535.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let (width, height, maxval, raw) = decode_pgm_raw(bytes)?;
    let scale = maxval as f64;
    Image::new(width, height, raw.into_iter().map(|v| v as f64 / scale).collect()).map_err(|e| e.to_string())
}

fn decode_pgm_raw(bytes: &[u8]) -> std::result::Result<PgmRaster, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let number = |t: String, what: &str| t.parse::<usize>().map_err(|_| format!("bad {what} '{t}'"));
    let width = number(token()?, "width")?;
    let height = number(token()?, "height")?;
    let maxval = number(token()?, "maxval")?;
    if width == 0 || height == 0 {
        return Err("zero image dimension".into());
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("maxval {maxval} outside 1..=65535"));
    }
    let count = width * height;
    let raw: Vec<usize> = match magic.as_str() {
        "P5" => {
            // exactly one whitespace byte separates the header from the raster
            let start = pos + 1;
            let bpp = if maxval > 255 { 2 } else { 1 };
            let end = start + count * bpp;
            if bytes.len() < end {
                return Err(format!("raster truncated: need {} bytes", count * bpp));
            }
            let data = &bytes[start..end];
            if bpp == 1 {
                data.iter().map(|&b| b as usize).collect()
            } else {
                data.chunks(2).map(|c| (c[0] as usize) << 8 | c[1] as usize).collect()
            }
        }
        "P2" => {
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                v.push(number(token()?, "sample")?);
            }
            v
        }
        other => return Err(format!("unsupported magic '{other}'")),
    };
    if let Some(v) = raw.iter().find(|&&v| v > maxval) {
        return Err(format!("sample {v} exceeds maxval {maxval}"));
    }
    Ok((width, height, maxval, raw))
}

/// 16-bit binary PGM.
pub fn encode_pgm16(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|msg| Error::parse(path, msg))
}

pub fn write_pgm(path: &Path, img: &Image) -> Result<()> {
    write_bytes(path, &encode_pgm16(img))
}

/// Label image as a 16-bit PGM whose samples are the raw label indices.
pub fn write_label_pgm(path: &Path, width: usize, height: usize, labels: &[usize]) -> Result<()> {
    let maxval = labels.iter().copied().max().unwrap_or(0).clamp(1, 65535);
    let mut out = format!("P5\n{width} {height}\n{maxval}\n").into_bytes();
    for &l in labels {
        let v = l.min(65535) as u16;
        if maxval > 255 {
            out.extend_from_slice(&v.to_be_bytes());
        } else {
            out.push(v as u8);
        }
    }
    write_bytes(path, &out)
}

/// Reads back the raw label indices of [`write_label_pgm`].
pub fn read_label_pgm(path: &Path) -> Result<(usize, usize, Vec<usize>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (w, h, _, raw) = decode_pgm_raw(&bytes).map_err(|m| Error::parse(path, m))?;
    Ok((w, h, raw))
}

/// Parses `<h> <w>` followed by `h` rows of `w` reals.
fn parse_matrix(text: &str) -> std::result::Result<(usize, usize, Vec<f64>), String> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or("missing '<h> <w>' header")?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| format!("bad dimension '{t}'")))
        .collect::<std::result::Result<_, _>>()?;
    let [h, w] = dims[..] else {
        return Err(format!("header '{header}' is not '<h> <w>'"));
    };
    if h == 0 || w == 0 {
        return Err("zero dimension".into());
    }
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        let line = lines.next().ok_or_else(|| format!("expected {h} rows, found {r}"))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| format!("bad number '{t}' in row {}", r + 1))
            })
            .collect::<std::result::Result<_, _>>()?;
        if row.len() != w {
            return Err(format!("row {} has {} values, expected {w}", r + 1, row.len()));
        }
        data.extend(row);
    }
    if lines.next().is_some() {
        return Err(format!("more than {h} rows"));
    }
    Ok((h, w, data))
}

fn format_matrix(h: usize, w: usize, data: &[f64]) -> String {
    let mut s = format!("{h} {w}\n");
    for row in data.chunks(w) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    s
}

pub fn read_psf(path: &Path, scale: BlurScale) -> Result<Psf> {
    let (h, w, data) = parse_matrix(&read_text(path)?).map_err(|m| Error::parse(path, m))?;
    Psf::from_rect(w, h, data, scale).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_psf(path: &Path, psf: &Psf) -> Result<()> {
    write_bytes(path, format_matrix(psf.side(), psf.side(), psf.kernel()).as_bytes())
}

fn bank_file_name(scale: i32) -> String {
    format!("psf_{scale}.txt")
}

/// Loads every `psf_<s>.txt` in `dir`.
pub fn read_bank_dir(dir: &Path) -> Result<KernelBank> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut psfs = Vec::new();
    for entry in entries {
        let path: PathBuf = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(scale) = name.strip_prefix("psf_").and_then(|n| n.strip_suffix(".txt")) else {
            continue;
        };
        let s: i32 = scale
            .parse()
            .map_err(|_| Error::parse(&path, format!("scale '{scale}' is not an integer")))?;
        let s = BlurScale::new(s).map_err(|e| Error::parse(&path, e.to_string()))?;
        psfs.push(read_psf(&path, s)?);
    }
    KernelBank::new(psfs).map_err(|e| Error::parse(dir, e.to_string()))
}

pub fn write_bank_dir(dir: &Path, bank: &KernelBank) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for psf in bank.entries() {
        write_psf(&dir.join(bank_file_name(psf.scale().get())), psf)?;
    }
    Ok(())
}

pub fn read_prior(path: &Path) -> Result<NaturalImagePrior> {
    let (h, w, data) = parse_matrix(&read_text(path)?).map_err(|m| Error::parse(path, m))?;
    NaturalImagePrior::new(w, h, data).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn write_prior(path: &Path, prior: &NaturalImagePrior) -> Result<()> {
    write_bytes(
        path,
        format_matrix(prior.height(), prior.width(), prior.values()).as_bytes(),
    )
}

/// Parses `key=value` lines; missing keys keep their defaults.
/// Signed scale per pixel in the matrix format, one integer per cell.
pub fn write_scale_map(path: &Path, map: &DepthMap) -> Result<()> {
    let (w, h) = map.dims();
    let mut s = format!("{h} {w}\n");
    for row in map.labels().chunks(w) {
        let cells: Vec<String> = row.iter().map(|&l| map.legend()[l].to_string()).collect();
        s.push_str(&cells.join(" "));
        s.push('\n');
    }
    write_bytes(path, s.as_bytes())
}

/// Reads a scale map; the legend is the sorted set of scales present.
pub fn read_scale_map(path: &Path) -> Result<DepthMap> {
    let (h, w, data) = parse_matrix(&read_text(path)?).map_err(|m| Error::parse(path, m))?;
    let mut scales = Vec::with_capacity(data.len());
    for v in data {
        if v.fract() != 0.0 || v == 0.0 || v.abs() > i32::MAX as f64 {
            return Err(Error::parse(path, format!("'{v}' is not a nonzero integer scale")));
        }
        scales.push(v as i32);
    }
    let mut legend = scales.clone();
    legend.sort_unstable();
    legend.dedup();
    let labels = scales
        .iter()
        .map(|s| legend.binary_search(s).expect("present"))
        .collect();
    DepthMap::new(w, h, labels, legend)
}

pub fn parse_config(text: &str) -> std::result::Result<ImagingConfig, String> {
    let mut cfg = ImagingConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key=value", i + 1))?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| format!("line {}: '{}' is not a number", i + 1, value.trim()))?;
        let slot = match key.trim() {
            "q" => &mut cfg.quantum_efficiency,
            "reflectivity" => &mut cfg.reflectivity,
            "exposure_s" => &mut cfg.exposure_s,
            "pixel_um" => &mut cfg.pixel_um,
            "f_number" => &mut cfg.f_number,
            "lux" => &mut cfg.lux,
            "read_noise_e" => &mut cfg.read_noise_e,
            other => return Err(format!("line {}: unknown key '{other}'", i + 1)),
        };
        *slot = value;
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

pub fn format_config(cfg: &ImagingConfig) -> String {
    format!(
        "q={}\nreflectivity={}\nexposure_s={}\npixel_um={}\nf_number={}\nlux={}\nread_noise_e={}\n",
        cfg.quantum_efficiency, cfg.reflectivity, cfg.exposure_s, cfg.pixel_um, cfg.f_number, cfg.lux, cfg.read_noise_e
    )
}

pub fn read_config(path: &Path) -> Result<ImagingConfig> {
    parse_config(&read_text(path)?).map_err(|m| Error::parse(path, m))
}

pub fn write_config(path: &Path, cfg: &ImagingConfig) -> Result<()> {
    write_bytes(path, format_config(cfg).as_bytes())
}
