//! Plain-text match exchange format:
//!
//! ```text
//! matches v1 <query_w> <query_h> <ref_w> <ref_h> <count>
//! uq vq ur vr confidence
//! ...
//! ```
//!
//! Pixels are bounded by `[0, w-1] x [0, h-1]` of their image.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector2;

use super::{FeatureError, FeatureMatch};

#[derive(Debug, Clone, PartialEq)]
pub struct MatchFile {
    /// `[query_w, query_h, ref_w, ref_h]`.
    pub dims: [usize; 4],
    pub matches: Vec<FeatureMatch>,
}

pub fn format_matches(file: &MatchFile) -> String {
    let [qw, qh, rw, rh] = file.dims;
    let mut s = format!("matches v1 {qw} {qh} {rw} {rh} {}\n", file.matches.len());
    for m in &file.matches {
        let _ = writeln!(
            s,
            "{:.5} {:.5} {:.5} {:.5} {:.5}",
            m.pixel_query.x, m.pixel_query.y, m.pixel_ref.x, m.pixel_ref.y, m.confidence
        );
    }
    s
}

fn parse_err(line: usize, message: impl Into<String>) -> FeatureError {
    FeatureError::Parse {
        line,
        message: message.into(),
    }
}

fn bounds_err(line: usize, message: impl Into<String>) -> FeatureError {
    FeatureError::Bounds {
        line,
        message: message.into(),
    }
}

pub fn parse_matches(text: &str) -> Result<MatchFile, FeatureError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (hl, header) = lines
        .by_ref()
        .find(|(_, l)| !l.is_empty())
        .ok_or_else(|| parse_err(1, "empty file"))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 7 || tokens[0] != "matches" || tokens[1] != "v1" {
        return Err(parse_err(
            hl,
            "expected header `matches v1 <query_w> <query_h> <ref_w> <ref_h> <count>`",
        ));
    }
    let nums: Vec<usize> = tokens[2..]
        .iter()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| parse_err(hl, format!("invalid integer `{t}`")))
        })
        .collect::<Result<_, _>>()?;
    let dims = [nums[0], nums[1], nums[2], nums[3]];
    if dims.contains(&0) {
        return Err(parse_err(hl, "image dimensions must be positive"));
    }
    let count = nums[4];

    let (qmax, rmax) = (
        Vector2::new((dims[0] - 1) as f64, (dims[1] - 1) as f64),
        Vector2::new((dims[2] - 1) as f64, (dims[3] - 1) as f64),
    );
    let inside = |p: &Vector2<f64>, max: &Vector2<f64>| p.x >= 0.0 && p.y >= 0.0 && p.x <= max.x && p.y <= max.y;

    let mut matches = Vec::with_capacity(count);
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(ln, format!("invalid number `{t}`")))
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != 5 {
            return Err(parse_err(ln, format!("expected 5 fields, found {}", vals.len())));
        }
        let m = FeatureMatch {
            pixel_query: Vector2::new(vals[0], vals[1]),
            pixel_ref: Vector2::new(vals[2], vals[3]),
            confidence: vals[4],
        };
        if !inside(&m.pixel_query, &qmax) {
            return Err(bounds_err(
                ln,
                format!("query pixel ({}, {}) outside the image", vals[0], vals[1]),
            ));
        }
        if !inside(&m.pixel_ref, &rmax) {
            return Err(bounds_err(
                ln,
                format!("reference pixel ({}, {}) outside the image", vals[2], vals[3]),
            ));
        }
        if !(0.0..=1.0).contains(&m.confidence) {
            return Err(bounds_err(ln, format!("confidence {} outside [0, 1]", vals[4])));
        }
        matches.push(m);
    }
    if matches.len() != count {
        return Err(parse_err(
            text.lines().count().max(1),
            format!("header declares {count} matches, found {}", matches.len()),
        ));
    }
    Ok(MatchFile { dims, matches })
}

pub fn load_external_matches(path: &Path) -> Result<MatchFile, FeatureError> {
    let text = std::fs::read_to_string(path).map_err(|source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_matches(&text)
}

pub fn save_external_matches(file: &MatchFile, path: &Path) -> Result<(), FeatureError> {
    std::fs::write(path, format_matches(file)).map_err(|source| FeatureError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_line_file() {
        let f = parse_matches("matches v1 320 240 320 240 1\n10.5 20.0 11.0 19.5 0.95\n").unwrap();
        assert_eq!(f.dims, [320, 240, 320, 240]);
        assert_eq!(
            f.matches,
            vec![FeatureMatch {
                pixel_query: Vector2::new(10.5, 20.0),
                pixel_ref: Vector2::new(11.0, 19.5),
                confidence: 0.95,
            }]
        );
    }

    #[test]
    fn round_trip_through_disk() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let matches: Vec<_> = (0..500)
            .map(|_| FeatureMatch {
                pixel_query: Vector2::new(rng.random_range(0.0..319.0), rng.random_range(0.0..239.0)),
                pixel_ref: Vector2::new(rng.random_range(0.0..639.0), rng.random_range(0.0..479.0)),
                confidence: rng.random_range(0.0..=1.0),
            })
            .collect();
        let file = MatchFile {
            dims: [320, 240, 640, 480],
            matches,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("000001_iter1.matches");
        save_external_matches(&file, &path).unwrap();
        let back = load_external_matches(&path).unwrap();
        assert_eq!(back.dims, file.dims);
        for (a, b) in file.matches.iter().zip(&back.matches) {
            assert!((a.pixel_query - b.pixel_query).amax() < 1e-5 + 1e-9);
            assert!((a.pixel_ref - b.pixel_ref).amax() < 1e-5 + 1e-9);
            assert!((a.confidence - b.confidence).abs() < 1e-5 + 1e-9);
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad_conf = "matches v1 320 240 320 240 2\n1 1 1 1 0.5\n10.5 20.0 11.0 19.5 1.2\n";
        match parse_matches(bad_conf) {
            Err(FeatureError::Bounds { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("confidence"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_matches("matches v1 320 240 320 240 1\n400 1 1 1 0.5\n"),
            Err(FeatureError::Bounds { line: 2, .. })
        ));
        assert!(matches!(
            parse_matches("matches v1 320 240 320 240 1\n1 1 x 1 0.5\n"),
            Err(FeatureError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_matches("matches v2 1 1 1 1 0\n"),
            Err(FeatureError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_matches("matches v1 320 240 320 240 3\n1 1 1 1 0.5\n"),
            Err(FeatureError::Parse { .. })
        ));
    }
}
