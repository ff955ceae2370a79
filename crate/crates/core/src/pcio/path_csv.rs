//! Path CSV: header `x,y,z,rx,ry,rz`, one pose per row, 9 significant digits.
//! Rotation is the axis × angle vector of the frame (o, m, n).

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use super::{atomic_write, format_significant};
use crate::error::{Error, Result};
use crate::path::PathPoint;

const HEADER: &str = "x,y,z,rx,ry,rz";

pub fn path_csv_string(path: &[PathPoint]) -> Result<String> {
    if path.is_empty() {
        return Err(Error::EmptyInput("cannot write an empty path".into()));
    }
    let mut s = String::with_capacity(80 * path.len() + 16);
    s.push_str(HEADER);
    s.push('\n');
    let f = |v: f64| format_significant(v, 9);
    for p in path {
        let r = p.rotation_vector();
        let _ =
            writeln!(s, "{},{},{},{},{},{}", f(p.position.x), f(p.position.y), f(p.position.z), f(r.x), f(r.y), f(r.z));
    }
    Ok(s)
}

pub fn write_path_csv(path: &[PathPoint], file: &Path) -> Result<()> {
    atomic_write(file, path_csv_string(path)?.as_bytes())
}

pub fn parse_path_csv(text: &str) -> Result<Vec<PathPoint>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, h)) if h.replace(' ', "") == HEADER => {}
        _ => return Err(Error::Parse { line: 1, msg: format!("expected header '{HEADER}'") }),
    }
    let mut out = Vec::new();
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: ln, msg: e.to_string() })?;
        if vals.len() != 6 {
            return Err(Error::Parse { line: ln, msg: format!("expected 6 columns, found {}", vals.len()) });
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("line {ln}: non-finite value")));
        }
        out.push(PathPoint::from_rotation_vector(
            Point3::new(vals[0], vals[1], vals[2]),
            Vector3::new(vals[3], vals[4], vals[5]),
        ));
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("path file has no rows".into()));
    }
    Ok(out)
}

pub fn read_path_csv(file: &Path) -> Result<Vec<PathPoint>> {
    let text = std::fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
    parse_path_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_row() {
        let p = PathPoint::from_rotation_vector(Point3::origin(), Vector3::zeros());
        assert_eq!(path_csv_string(&[p]).unwrap(), "x,y,z,rx,ry,rz\n0,0,0,0,0,0\n");
    }

    #[test]
    fn empty_path_rejected() {
        assert!(matches!(path_csv_string(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn round_trip_is_stable() {
        let path: Vec<PathPoint> = (0..20)
            .map(|i| {
                let t = i as f64 * 0.1;
                PathPoint::from_rotation_vector(
                    Point3::new(t.cos() * 0.05, t.sin() * 0.05, 0.01 * t),
                    Vector3::new(0.3 * t, -0.2, 1.0 + 0.1 * t),
                )
            })
            .collect();
        let s = path_csv_string(&path).unwrap();
        let back = parse_path_csv(&s).unwrap();
        assert_eq!(back.len(), path.len());
        assert_eq!(path_csv_string(&back).unwrap(), s);
        for (a, b) in path.iter().zip(&back) {
            assert!((a.position - b.position).norm() < 1e-9);
            assert!(a.quaternion().angle_to(&b.quaternion()) < 1e-8);
        }
    }

    #[test]
    fn malformed_rows() {
        assert!(matches!(parse_path_csv("x,y\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_path_csv("x,y,z,rx,ry,rz\n1,2,3\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_path_csv("x,y,z,rx,ry,rz\n1,2,3,a,0,0\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_path_csv("x,y,z,rx,ry,rz\n"), Err(Error::EmptyInput(_))));
    }
}
