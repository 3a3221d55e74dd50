//! Binary PGM (P5) grayscale images and dataset directories.
//!
//! Images are written at maxval 65535 with big-endian samples. Reading also
//! accepts 8-bit files (maxval < 256).

use std::path::Path;

use unetpp_core::data::{Dataset, Sample, Split};
use unetpp_core::Tensor;

use crate::error::{Error, Result};
use crate::fsutil;

pub const MAXVAL: u16 = 65535;

/// A decoded PGM: row-major samples with their maxval.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl Pgm {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, self.maxval).into_bytes();
        for &s in &self.samples {
            if self.maxval < 256 {
                out.push(s as u8);
            } else {
                out.extend_from_slice(&s.to_be_bytes());
            }
        }
        out
    }

    pub fn decode(path: &Path, bytes: &[u8]) -> Result<Pgm> {
        let mut pos = 0;
        if bytes.get(..2) != Some(b"P5") {
            return Err(Error::at_byte(path, 0, "not a binary PGM (expected `P5`)"));
        }
        pos += 2;
        let mut header = [0usize; 3];
        for (k, what) in ["width", "height", "maxval"].iter().enumerate() {
            // whitespace and `#` comments between tokens
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
            let token = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
            header[k] = token
                .parse()
                .ok()
                .filter(|&v| v >= 1)
                .ok_or_else(|| Error::at_byte(path, start, format!("expected a positive {what}")))?;
        }
        let [width, height, maxval] = header;
        if maxval > MAXVAL as usize {
            return Err(Error::at_byte(path, pos, format!("maxval {maxval} exceeds 65535")));
        }
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(Error::at_byte(path, pos, "expected one whitespace byte after the header"));
        }
        pos += 1;
        let wide = maxval > 255;
        let n = width * height;
        let need = n * if wide { 2 } else { 1 };
        let body = &bytes[pos..];
        if body.len() != need {
            return Err(Error::at_byte(
                path,
                pos + body.len().min(need),
                format!("expected {need} sample bytes, found {}", body.len()),
            ));
        }
        let samples: Vec<u16> = if wide {
            body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
        } else {
            body.iter().map(|&b| b as u16).collect()
        };
        if let Some(k) = samples.iter().position(|&s| s as usize > maxval) {
            return Err(Error::at_byte(
                path,
                pos + k * if wide { 2 } else { 1 },
                format!("sample {} exceeds maxval {maxval}", samples[k]),
            ));
        }
        Ok(Pgm {
            width,
            height,
            maxval: maxval as u16,
            samples,
        })
    }

    /// Samples scaled to [0, 1] as `v / maxval`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64 / self.maxval as f64).collect()
    }

    /// Quantizes values in [0, 1] (clamped) to 16 bits.
    pub fn from_unit(width: usize, height: usize, values: &[f64]) -> Pgm {
        Pgm {
            width,
            height,
            maxval: MAXVAL,
            samples: values
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * MAXVAL as f64).round() as u16)
                .collect(),
        }
    }
}


pub fn read_pgm(path: &Path) -> Result<Pgm> {
    Pgm::decode(path, &fsutil::read(path)?)
}

pub fn write_pgm(path: &Path, pgm: &Pgm) -> Result<()> {
    fsutil::write_atomic(path, &pgm.encode())
}

const MANIFEST: &str = "manifest.tsv";
const HEADER: &str = "id\timage_path\tmask_path\tsplit\tsize_bucket";

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['/', '\\', '\t', '\n', ',']) || id.starts_with('.') {
        return Err(Error::Config(format!("sample id `{id}` cannot be used as a file name")));
    }
    Ok(())
}

/// Writes `images/<id>.pgm`, one `masks/<id>_c<k>.pgm` per class and `manifest.tsv`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    let mut manifest = String::from(HEADER);
    manifest.push('\n');
    for s in &ds.samples {
        check_id(&s.id)?;
        let (h, w) = (s.height(), s.width());
        let image_rel = format!("images/{}.pgm", s.id);
        write_pgm(&dir.join(&image_rel), &Pgm::from_unit(w, h, s.image.data()))?;
        let mut masks = Vec::new();
        for (k, plane) in s.mask.data().chunks(h * w).enumerate() {
            let rel = format!("masks/{}_c{k}.pgm", s.id);
            write_pgm(&dir.join(&rel), &Pgm::from_unit(w, h, plane))?;
            masks.push(rel);
        }
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            s.id,
            image_rel,
            masks.join(","),
            s.split,
            s.size_bucket
        ));
    }
    fsutil::write_atomic(&dir.join(MANIFEST), manifest.as_bytes())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST);
    let text = fsutil::read_text(&mpath)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == HEADER => {}
        _ => return Err(Error::at_line(&mpath, 1, format!("header must be `{HEADER}`"))),
    }
    let mut samples = Vec::new();
    for (n, line) in lines {
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(Error::at_line(&mpath, lineno, format!("expected 5 columns, found {}", cols.len())));
        }
        let split: Split = cols[3]
            .parse()
            .map_err(|_| Error::at_line(&mpath, lineno, format!("unknown split `{}`", cols[3])))?;
        let size_bucket: u8 = cols[4]
            .parse()
            .ok()
            .filter(|&b| b < unetpp_core::data::SIZE_BUCKETS)
            .ok_or_else(|| Error::at_line(&mpath, lineno, format!("invalid size bucket `{}`", cols[4])))?;
        let image = read_pgm(&dir.join(cols[1]))?;
        let (h, w) = (image.height, image.width);
        let mut mask = Vec::new();
        let mut classes = 0;
        for rel in cols[2].split(',') {
            let p = dir.join(rel);
            let m = read_pgm(&p)?;
            if (m.height, m.width) != (h, w) {
                return Err(Error::at_line(&mpath, lineno, format!("mask {rel} is {}x{}, image is {h}x{w}", m.height, m.width)));
            }
            if let Some(k) = m.samples.iter().position(|&v| v != 0 && v != m.maxval) {
                return Err(Error::at_byte(&p, k, "mask samples must be 0 or maxval"));
            }
            mask.extend(m.samples.iter().map(|&v| if v == 0 { 0.0 } else { 1.0 }));
            classes += 1;
        }
        samples.push(Sample {
            id: cols[0].to_string(),
            image: Tensor::from_vec(&[1, h, w], image.to_unit())?,
            mask: Tensor::from_vec(&[classes, h, w], mask)?,
            split,
            size_bucket,
            origin: None,
        });
    }
    Dataset::new(samples).map_err(|e| Error::at_line(&mpath, 1, e.to_string()))
}
