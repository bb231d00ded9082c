//! Triangle meshes: ASCII OBJ I/O and area-weighted surface sampling.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::DegenerateMesh("no triangles".into()));
        }
        for (i, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= vertices.len()) {
                return Err(Error::DegenerateMesh(format!(
                    "triangle {i} references vertex {bad} of {}",
                    vertices.len()
                )));
            }
        }
        Ok(Self {
            vertices,
            triangles,
        })
    }

    /// Axis-aligned box centered at the origin.
    pub fn cuboid(size: Vector3<f64>) -> Self {
        let h = size / 2.0;
        let vertices = (0..8)
            .map(|i| {
                Vector3::new(
                    if i & 1 == 0 { -h.x } else { h.x },
                    if i & 2 == 0 { -h.y } else { h.y },
                    if i & 4 == 0 { -h.z } else { h.z },
                )
            })
            .collect();
        // Outward-facing, counter-clockwise seen from outside.
        let triangles = vec![
            [0, 2, 3],
            [0, 3, 1], // -z
            [4, 5, 7],
            [4, 7, 6], // +z
            [0, 1, 5],
            [0, 5, 4], // -y
            [2, 6, 7],
            [2, 7, 3], // +y
            [0, 4, 6],
            [0, 6, 2], // -x
            [1, 3, 7],
            [1, 7, 5], // +x
        ];
        Self {
            vertices,
            triangles,
        }
    }

    pub fn corners(&self, tri: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.triangles[tri];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.corners(tri);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Area-weighted centroid of the surface.
    pub fn surface_centroid(&self) -> Result<Vector3<f64>> {
        let mut total = 0.0;
        let mut acc = Vector3::zeros();
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.corners(t);
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            total += area;
            acc += area * (a + b + c) / 3.0;
        }
        if total <= 0.0 {
            return Err(Error::DegenerateMesh("zero total area".into()));
        }
        Ok(acc / total)
    }

    pub fn translated(&self, offset: &Vector3<f64>) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| v + offset).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Draws `n` points uniformly over the surface area.
    pub fn sample_surface<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vector3<f64>>> {
        let areas: Vec<f64> = (0..self.triangles.len())
            .map(|t| self.triangle_area(t))
            .collect();
        let picker = WeightedIndex::new(&areas)
            .map_err(|_| Error::DegenerateMesh("zero total area".into()))?;
        Ok((0..n)
            .map(|_| {
                let [a, b, c] = self.corners(picker.sample(rng));
                let s = rng.random::<f64>().sqrt();
                let r2 = rng.random::<f64>();
                a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
            })
            .collect())
    }

    pub fn parse_obj(text: &str, origin: &Path) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: lineno + 1,
                msg,
            };
            let mut fields = line.split_whitespace();
            match fields.next() {
                Some("v") => {
                    let coords: Vec<f64> = fields
                        .take(3)
                        .map(|f| f.parse::<f64>().map_err(|e| err(format!("bad vertex: {e}"))))
                        .collect::<Result<_>>()?;
                    if coords.len() != 3 {
                        return Err(err("vertex needs 3 coordinates".into()));
                    }
                    vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    // `f 1/2/3 ...` forms keep only the position index.
                    let idx: Vec<usize> = fields
                        .map(|f| {
                            let pos = f.split('/').next().unwrap_or_default();
                            match pos.parse::<usize>() {
                                Ok(i) if i >= 1 => Ok(i - 1),
                                _ => Err(err(format!("bad face index `{f}`"))),
                            }
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() != 3 {
                        return Err(err(format!("face has {} vertices, expected 3", idx.len())));
                    }
                    triangles.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
        let mesh = Self::new(vertices, triangles).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        Ok(mesh)
    }

    pub fn read_obj(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_obj(&text, path)
    }

    pub fn to_obj(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        out
    }
}
