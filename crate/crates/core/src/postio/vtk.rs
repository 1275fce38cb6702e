//! Legacy ASCII VTK unstructured grids: a writer for volume and surface
//! meshes with attached data and a reader for checking written files.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! read-back reproduces every value exactly.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::Mesh;

const HEX_CELL: u8 = 12;
const QUAD_CELL: u8 = 9;

/// A named array attached to points or cells.
#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Scalars(String, Vec<f64>),
    Vectors(String, Vec<Vector3<f64>>),
}

impl Field {
    pub fn scalars(name: &str, v: Vec<f64>) -> Self {
        Self::Scalars(name.to_string(), v)
    }

    pub fn vectors(name: &str, v: Vec<Vector3<f64>>) -> Self {
        Self::Vectors(name.to_string(), v)
    }

    /// Nodal displacement from an interleaved xyz vector.
    pub fn displacement(d: &[f64]) -> Self {
        Self::vectors("displacement", d.chunks_exact(3).map(|c| Vector3::new(c[0], c[1], c[2])).collect())
    }

    fn len(&self) -> usize {
        match self {
            Self::Scalars(_, v) => v.len(),
            Self::Vectors(_, v) => v.len(),
        }
    }

    fn write(&self, out: &mut String) {
        match self {
            Self::Scalars(name, v) => {
                let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
                for x in v {
                    let _ = writeln!(out, "{x:?}");
                }
            }
            Self::Vectors(name, v) => {
                let _ = writeln!(out, "VECTORS {name} double");
                for x in v {
                    let _ = writeln!(out, "{:?} {:?} {:?}", x.x, x.y, x.z);
                }
            }
        }
    }
}

fn data_block(out: &mut String, kind: &str, n: usize, fields: &[Field]) -> Result<()> {
    if fields.is_empty() {
        return Ok(());
    }
    let _ = writeln!(out, "{kind} {n}");
    for f in fields {
        if f.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: f.len() });
        }
        f.write(out);
    }
    Ok(())
}

fn grid(
    title: &str,
    points: &[Vector3<f64>],
    cells: &[&[usize]],
    cell_type: u8,
    point_data: &[Field],
    cell_data: &[Field],
) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(out, "POINTS {} double", points.len());
    for p in points {
        let _ = writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z);
    }
    let size: usize = cells.iter().map(|c| c.len() + 1).sum();
    let _ = writeln!(out, "CELLS {} {size}", cells.len());
    for c in cells {
        let _ = write!(out, "{}", c.len());
        for i in c.iter() {
            let _ = write!(out, " {i}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "CELL_TYPES {}", cells.len());
    for _ in cells {
        let _ = writeln!(out, "{cell_type}");
    }
    data_block(&mut out, "POINT_DATA", points.len(), point_data)?;
    data_block(&mut out, "CELL_DATA", cells.len(), cell_data)?;
    Ok(out)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn title(config_hash: &str) -> String {
    format!("cardioem config {config_hash}")
}

/// Writes the hexahedral volume mesh in its reference position.
pub fn write_volume(path: &Path, mesh: &Mesh, config_hash: &str, point_data: &[Field], cell_data: &[Field]) -> Result<()> {
    let cells: Vec<&[usize]> = mesh.elements.iter().map(|e| e.as_slice()).collect();
    let text = grid(&title(config_hash), &mesh.nodes, &cells, HEX_CELL, point_data, cell_data)?;
    write_file(path, &text)
}

/// Writes the boundary quadrilaterals with their tag codes as cell data.
pub fn write_surface(path: &Path, mesh: &Mesh, config_hash: &str) -> Result<()> {
    let cells: Vec<&[usize]> = mesh.faces.iter().map(|f| f.nodes.as_slice()).collect();
    let tags = Field::scalars("boundary_tag", mesh.faces.iter().map(|f| f.tag.code() as f64).collect());
    let text = grid(&title(config_hash), &mesh.nodes, &cells, QUAD_CELL, &[], &[tags])?;
    write_file(path, &text)
}

/// Contents of a legacy ASCII unstructured grid.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VtkData {
    pub title: String,
    pub points: Vec<Vector3<f64>>,
    pub cells: Vec<Vec<usize>>,
    pub cell_types: Vec<u8>,
    /// (name, components, flat values)
    pub point_data: Vec<(String, usize, Vec<f64>)>,
    pub cell_data: Vec<(String, usize, Vec<f64>)>,
}

impl VtkData {
    pub fn point_field(&self, name: &str) -> Option<&[f64]> {
        self.point_data.iter().find(|f| f.0 == name).map(|f| f.2.as_slice())
    }

    pub fn cell_field(&self, name: &str) -> Option<&[f64]> {
        self.cell_data.iter().find(|f| f.0 == name).map(|f| f.2.as_slice())
    }
}

struct Tokens<'a> {
    it: std::str::SplitWhitespace<'a>,
    path: PathBuf,
}

impl<'a> Tokens<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.clone(),
            message: message.into(),
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        self.it.next().ok_or_else(|| self.err("unexpected end of file"))
    }

    fn parse<T: std::str::FromStr>(&mut self) -> Result<T> {
        let t = self.next()?;
        t.parse().map_err(|_| self.err(format!("cannot parse `{t}`")))
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let t = self.next()?;
        if t == word {
            Ok(())
        } else {
            Err(self.err(format!("expected `{word}`, found `{t}`")))
        }
    }
}

/// Reads a file produced by [`write_volume`] or [`write_surface`].
pub fn read(path: &Path) -> Result<VtkData> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.splitn(4, '\n');
    let format_err = |m: &str| Error::Format {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    if !lines.next().is_some_and(|l| l.starts_with("# vtk DataFile")) {
        return Err(format_err("missing VTK header"));
    }
    let title = lines.next().ok_or_else(|| format_err("missing title"))?.to_string();
    if lines.next().map(str::trim) != Some("ASCII") {
        return Err(format_err("only ASCII files are supported"));
    }
    let mut tok = Tokens {
        it: lines.next().unwrap_or("").split_whitespace(),
        path: path.to_path_buf(),
    };
    tok.expect("DATASET")?;
    tok.expect("UNSTRUCTURED_GRID")?;
    let mut data = VtkData {
        title,
        ..Default::default()
    };
    tok.expect("POINTS")?;
    let n: usize = tok.parse()?;
    tok.next()?;
    for _ in 0..n {
        data.points.push(Vector3::new(tok.parse()?, tok.parse()?, tok.parse()?));
    }
    tok.expect("CELLS")?;
    let nc: usize = tok.parse()?;
    let _size: usize = tok.parse()?;
    for _ in 0..nc {
        let k: usize = tok.parse()?;
        data.cells.push((0..k).map(|_| tok.parse()).collect::<Result<_>>()?);
    }
    tok.expect("CELL_TYPES")?;
    tok.parse::<usize>()?;
    for _ in 0..nc {
        data.cell_types.push(tok.parse()?);
    }

    let mut current: Option<(bool, usize)> = None;
    while let Some(word) = tok.it.next() {
        match word {
            "POINT_DATA" => current = Some((true, tok.parse()?)),
            "CELL_DATA" => current = Some((false, tok.parse()?)),
            "SCALARS" | "VECTORS" => {
                let (is_point, count) = current.ok_or_else(|| tok.err("data array outside a data block"))?;
                let name = tok.next()?.to_string();
                tok.next()?;
                let comps = if word == "VECTORS" {
                    3
                } else {
                    let c: usize = tok.parse()?;
                    tok.expect("LOOKUP_TABLE")?;
                    tok.next()?;
                    c
                };
                let values = (0..count * comps).map(|_| tok.parse()).collect::<Result<Vec<f64>>>()?;
                let target = if is_point { &mut data.point_data } else { &mut data.cell_data };
                target.push((name, comps, values));
            }
            other => return Err(tok.err(format!("unexpected keyword `{other}`"))),
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_geometry, GeometrySpec};

    #[test]
    fn displacement_round_trip_is_bit_exact() {
        let mesh = build_geometry(&GeometrySpec::tiny_biventricle()).unwrap();
        let d: Vec<f64> = (0..3 * mesh.num_nodes()).map(|i| ((i as f64) * 0.7310585786).sin() * 1e-3 / 3.0).collect();
        let act = (0..mesh.num_nodes()).map(|i| if i % 7 == 0 { f64::NAN } else { i as f64 / 3.0 }).collect();
        let j = vec![1.0 + 1e-17; mesh.num_elements()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.vtk");
        write_volume(
            &path,
            &mesh,
            "abc",
            &[Field::displacement(&d), Field::scalars("activation_ms", act)],
            &[Field::scalars("J", j)],
        )
        .unwrap();
        let back = read(&path).unwrap();
        assert_eq!(back.title, "cardioem config abc");
        assert_eq!(back.points, mesh.nodes);
        assert!(back.cell_types.iter().all(|&t| t == HEX_CELL));
        let got = back.point_field("displacement").unwrap();
        assert!(got.iter().zip(&d).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(back.point_field("activation_ms").unwrap()[0].is_nan());
        assert_eq!(back.cell_field("J").unwrap().len(), mesh.num_elements());
    }

    #[test]
    fn surface_carries_tags() {
        let mesh = build_geometry(&GeometrySpec::tiny_biventricle()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("surface.vtk");
        write_surface(&path, &mesh, "h").unwrap();
        let back = read(&path).unwrap();
        assert_eq!(back.cells.len(), mesh.faces.len());
        let tags = back.cell_field("boundary_tag").unwrap();
        assert!(tags.iter().all(|t| (1.0..=4.0).contains(t)));
    }

    #[test]
    fn length_mismatch_rejected() {
        let mesh = build_geometry(&GeometrySpec::tiny_biventricle()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let r = write_volume(&dir.path().join("x.vtk"), &mesh, "h", &[Field::scalars("u", vec![0.0])], &[]);
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }
}
