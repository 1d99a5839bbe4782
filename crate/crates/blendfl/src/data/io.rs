//! Line-oriented text format for datasets.
//!
//! One sample per line, four `;`-separated fields:
//!
//! ```text
//! id;label;a1,a2,...;b1,b2,...
//! ```
//!
//! A lone `-` marks an absent modality. Values are printed with Rust's
//! shortest round-trip float formatting, so write followed by read restores
//! every bit.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::MultimodalSample;
use crate::error::{Error, Result};

pub fn write_samples<W: Write>(w: &mut W, samples: &[MultimodalSample]) -> Result<()> {
    let mut line = String::new();
    for s in samples {
        line.clear();
        write!(line, "{};{};", s.id, s.label).expect("writing to string");
        push_features(&mut line, s.features_a.as_deref());
        line.push(';');
        push_features(&mut line, s.features_b.as_deref());
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    Ok(())
}

fn push_features(line: &mut String, features: Option<&[f64]>) {
    match features {
        None => line.push('-'),
        Some(values) => {
            for (i, v) in values.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                write!(line, "{v}").expect("writing to string");
            }
        }
    }
}

pub fn read_samples<R: Read>(r: R) -> Result<Vec<MultimodalSample>> {
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(';').collect();
        if fields.len() != 4 {
            return Err(Error::Data(format!(
                "line {lineno}: expected 4 fields separated by ';', found {}",
                fields.len()
            )));
        }
        let id: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("line {lineno}: bad sample id '{}'", fields[0])))?;
        let label: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("line {lineno}: bad label '{}'", fields[1])))?;
        let features_a = parse_features(fields[2], lineno)?;
        let features_b = parse_features(fields[3], lineno)?;
        samples.push(
            MultimodalSample::new(id, features_a, features_b, label).map_err(|e| {
                Error::Data(format!("line {lineno}: {e}"))
            })?,
        );
    }
    Ok(samples)
}

fn parse_features(field: &str, lineno: usize) -> Result<Option<Vec<f64>>> {
    let field = field.trim();
    if field == "-" {
        return Ok(None);
    }
    if field.is_empty() {
        return Err(Error::Data(format!(
            "line {lineno}: empty feature field; use '-' for an absent modality"
        )));
    }
    field
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Data(format!("line {lineno}: bad feature value '{v}'")))
        })
        .collect::<Result<Vec<f64>>>()
        .map(Some)
}

pub fn save_samples(path: &Path, samples: &[MultimodalSample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_samples(&mut w, samples)?;
    w.flush()?;
    Ok(())
}

pub fn load_samples(path: &Path) -> Result<Vec<MultimodalSample>> {
    read_samples(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};

    #[test]
    fn round_trip_is_bit_exact() {
        let mut samples = generate_synthetic(&SyntheticSpec {
            n_samples: 30,
            n_classes: 3,
            dim_a: 4,
            dim_b: 2,
            class_separation: 2.0,
            noise_std: 1.0,
            seed: 14,
        })
        .unwrap();
        samples[3].features_a = None;
        samples[7].features_b = None;
        let mut buf = Vec::new();
        write_samples(&mut buf, &samples).unwrap();
        let back = read_samples(buf.as_slice()).unwrap();
        assert_eq!(samples.len(), back.len());
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.label, b.label);
            for (x, y) in [(&a.features_a, &b.features_a), (&a.features_b, &b.features_b)] {
                match (x, y) {
                    (None, None) => {}
                    (Some(xs), Some(ys)) => {
                        assert_eq!(xs.len(), ys.len());
                        for (p, q) in xs.iter().zip(ys) {
                            assert_eq!(p.to_bits(), q.to_bits());
                        }
                    }
                    _ => panic!("modality presence changed in round trip"),
                }
            }
        }
    }

    #[test]
    fn malformed_lines_name_the_line() {
        let text = "0;1;1.0,2.0;3.0\n1;0;oops;4.0\n";
        let err = read_samples(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let text = "0;1;1.0;2.0;3.0\n";
        let err = read_samples(text.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("4 fields"), "{err}");
        let text = "0;1;-;-\n";
        assert!(read_samples(text.as_bytes()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.txt");
        let samples = vec![
            MultimodalSample::new(5, Some(vec![0.5, -1.25]), None, 1).unwrap(),
            MultimodalSample::new(6, None, Some(vec![f64::MIN_POSITIVE, 1e300]), 0).unwrap(),
        ];
        save_samples(&path, &samples).unwrap();
        let back = load_samples(&path).unwrap();
        assert_eq!(samples, back);
    }
}
