//! ASCII PLY: `element vertex N` with float x, y, z and optional nx, ny, nz.
//!
//! Coordinates are written as 32-bit floats with 9 significant digits, which
//! round-trips every f32 exactly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use super::{atomic_write, format_significant};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub fn read_ply(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text)
}

pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    atomic_write(path, ply_string(cloud).as_bytes())
}

pub fn ply_string(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(64 * cloud.len() + 200);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    let names: &[&str] = if cloud.has_normals() { &["x", "y", "z", "nx", "ny", "nz"] } else { &["x", "y", "z"] };
    for name in names {
        let _ = writeln!(s, "property float {name}");
    }
    s.push_str("end_header\n");
    let f = |v: f64| format_significant(v as f32 as f64, 9);
    for (i, p) in cloud.points().iter().enumerate() {
        let _ = write!(s, "{} {} {}", f(p.x), f(p.y), f(p.z));
        if let Some(n) = cloud.normals() {
            let _ = write!(s, " {} {} {}", f(n[i].x), f(n[i].y), f(n[i].z));
        }
        s.push('\n');
    }
    s
}

#[derive(Clone, Copy, PartialEq)]
enum Scalar {
    F32,
    F64,
    Int,
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

pub fn parse_ply(text: &str) -> Result<PointCloud> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(1, "missing 'ply' magic")),
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    let mut header_done = false;
    for (ln, line) in lines.by_ref() {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                match tok.next() {
                    Some("ascii") => {}
                    Some(other) => return Err(parse_err(ln, format!("unsupported format '{other}'"))),
                    None => return Err(parse_err(ln, "format line without a format")),
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| parse_err(ln, "element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(ln, "element count is not a non-negative integer"))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| parse_err(ln, "property before any element"))?;
                let ty = tok.next().ok_or_else(|| parse_err(ln, "property without type"))?;
                if ty == "list" {
                    if el.name == "vertex" {
                        return Err(parse_err(ln, "list properties on vertices are not supported"));
                    }
                    el.props.push(("list".into(), Scalar::Int));
                    continue;
                }
                let scalar = match ty {
                    "float" | "float32" => Scalar::F32,
                    "double" | "float64" => Scalar::F64,
                    "char" | "uchar" | "short" | "ushort" | "int" | "uint" | "int8" | "uint8" | "int16" | "uint16"
                    | "int32" | "uint32" => Scalar::Int,
                    other => return Err(parse_err(ln, format!("unknown property type '{other}'"))),
                };
                let name = tok.next().ok_or_else(|| parse_err(ln, "property without name"))?;
                el.props.push((name.to_string(), scalar));
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            Some(other) => return Err(parse_err(ln, format!("unexpected header keyword '{other}'"))),
        }
    }
    if !header_done {
        return Err(parse_err(text.lines().count().max(1), "missing end_header"));
    }
    if !saw_format {
        return Err(parse_err(2, "missing format line"));
    }
    let vi = elements.iter().position(|e| e.name == "vertex").ok_or_else(|| parse_err(1, "no vertex element"))?;
    let vertex = &elements[vi];
    let col = |name: &str| vertex.props.iter().position(|(n, _)| n == name);
    let (x, y, z) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(parse_err(1, "vertex element lacks x, y or z")),
    };
    let normal_cols = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        (None, None, None) => None,
        _ => return Err(parse_err(1, "incomplete normal properties")),
    };

    // lines belonging to elements before the vertex block
    let skip: usize = elements[..vi].iter().map(|e| e.count).sum();
    let mut data = lines.filter(|(_, l)| !l.is_empty());
    for _ in 0..skip {
        if data.next().is_none() {
            return Err(parse_err(text.lines().count(), "file ends inside element data"));
        }
    }
    let mut points = Vec::with_capacity(vertex.count);
    let mut normals = normal_cols.map(|_| Vec::with_capacity(vertex.count));
    let mut values = vec![0.0f64; vertex.props.len()];
    for k in 0..vertex.count {
        let (ln, line) = data
            .next()
            .ok_or_else(|| parse_err(text.lines().count(), format!("expected {} vertices, found {k}", vertex.count)))?;
        let mut n = 0;
        for (j, t) in line.split_whitespace().enumerate() {
            if j >= values.len() {
                return Err(parse_err(ln, format!("expected {} values", values.len())));
            }
            values[j] = match vertex.props[j].1 {
                Scalar::F32 => t.parse::<f32>().map(f64::from).ok(),
                Scalar::F64 => t.parse::<f64>().ok(),
                Scalar::Int => t.parse::<i64>().ok().map(|v| v as f64),
            }
            .ok_or_else(|| parse_err(ln, format!("cannot parse '{t}'")))?;
            n += 1;
        }
        if n != values.len() {
            return Err(parse_err(ln, format!("expected {} values, found {n}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("line {ln}: non-finite value")));
        }
        points.push(Point3::new(values[x], values[y], values[z]));
        if let (Some(cols), Some(ns)) = (normal_cols, normals.as_mut()) {
            let v = Vector3::new(values[cols[0]], values[cols[1]], values[cols[2]]);
            let len = v.norm();
            if len == 0.0 {
                return Err(Error::Data(format!("line {ln}: zero-length normal")));
            }
            ns.push(if (len - 1.0).abs() > 1e-6 { v / len } else { v });
        }
    }
    match normals {
        Some(ns) => PointCloud::with_normals(points, ns),
        None => PointCloud::new(points),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud3() -> PointCloud {
        PointCloud::with_normals(
            vec![Point3::new(0.5, -1.25, 3.0), Point3::new(1e-3, 2.0, 0.0), Point3::new(-7.0, 0.125, 1e6)],
            vec![Vector3::z(), Vector3::x(), -Vector3::y()],
        )
        .unwrap()
    }

    #[test]
    fn three_point_round_trip() {
        let c = cloud3();
        let back = parse_ply(&ply_string(&c)).unwrap();
        let q = |v: f64| v as f32 as f64;
        for (a, b) in c.points().iter().zip(back.points()) {
            assert_eq!([q(a.x), q(a.y), q(a.z)], [b.x, b.y, b.z]);
        }
        assert_eq!(back.normals(), c.normals());
        assert_eq!(ply_string(&back), ply_string(&c));
    }

    #[test]
    fn header_shape() {
        let s = ply_string(&cloud3().without_normals());
        assert!(s.starts_with(
            "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0.5 -1.25 3\n"
        ));
    }

    #[test]
    fn missing_end_header() {
        let s = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n";
        assert!(matches!(parse_ply(s), Err(Error::Parse { .. })));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let s = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 1\n";
        match parse_ply(s) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 9),
            other => panic!("{other:?}"),
        }
        let bad_kw = "ply\nformat ascii 1.0\nbogus\n";
        assert!(matches!(parse_ply(bad_kw), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn non_finite_is_data_error() {
        let s = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\nnan 0 0\n";
        assert!(matches!(parse_ply(s), Err(Error::Data(_))));
    }

    #[test]
    fn skips_other_elements_and_reads_doubles() {
        let s = "ply\nformat ascii 1.0\ncomment made elsewhere\nelement camera 1\nproperty float f\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nproperty uchar red\nelement face 0\nproperty list uchar int vertex_indices\nend_header\n5\n0.1 0.2 0.3 255\n";
        let c = parse_ply(s).unwrap();
        assert_eq!(c.points(), &[Point3::new(0.1, 0.2, 0.3)]);
    }

    #[test]
    fn binary_rejected() {
        let s = "ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n";
        assert!(matches!(parse_ply(s), Err(Error::Parse { line: 2, .. })));
    }
}
