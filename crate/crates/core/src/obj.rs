//! Minimal Wavefront OBJ reading and writing (positions and faces only).

use crate::error::{NpsError, Result};
use crate::geom::Vec3;

pub struct ParsedObj {
    pub vertices: Vec<Vec3>,
    /// Polygons fan-triangulated.
    pub triangles: Vec<[usize; 3]>,
    /// Source polygon index for every triangle.
    pub triangle_source: Vec<usize>,
    pub polygon_count: usize,
    /// Group name per triangle (`g` records), if any were present.
    pub groups: Vec<Option<String>>,
}

fn parse_index(token: &str, nverts: usize, lineno: usize) -> Result<usize> {
    let head = token.split('/').next().unwrap_or("");
    let i: i64 = head
        .parse()
        .map_err(|_| NpsError::Parse(format!("obj line {lineno}: bad index {token:?}")))?;
    let idx = if i < 0 { nverts as i64 + i } else { i - 1 };
    if idx < 0 || idx as usize >= nverts {
        return Err(NpsError::Parse(format!("obj line {lineno}: index {i} out of range")));
    }
    Ok(idx as usize)
}

pub fn parse_obj(text: &str) -> Result<ParsedObj> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut triangle_source = Vec::new();
    let mut groups = Vec::new();
    let mut group: Option<String> = None;
    let mut polygon_count = 0;
    for (n, line) in text.lines().enumerate() {
        let lineno = n + 1;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for c in &mut p {
                    *c = it
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| NpsError::Parse(format!("obj line {lineno}: bad vertex")))?;
                }
                vertices.push(p);
            }
            Some("f") => {
                let idx = it
                    .map(|t| parse_index(t, vertices.len(), lineno))
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(NpsError::Parse(format!("obj line {lineno}: face with < 3 vertices")));
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                    triangle_source.push(polygon_count);
                    groups.push(group.clone());
                }
                polygon_count += 1;
            }
            Some("g") => group = it.next().map(str::to_string),
            _ => {}
        }
    }
    Ok(ParsedObj {
        vertices,
        triangles,
        triangle_source,
        polygon_count,
        groups,
    })
}
