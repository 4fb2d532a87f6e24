//! Plain-text mesh files.
//!
//! ```text
//! $Nodes
//! <n_v>
//! <id> <x> <y> <marker>        ids 1..n_v in order; marker 0=interior,1=outer,2=inner
//! $Elements
//! <n_t>
//! <id> <v1> <v2> <v3>          1-based node ids, CCW
//! $BoundaryEdges
//! <n_b>
//! <id> <v1> <v2> <marker>      marker 1=outer,2=inner
//! $End
//! ```
//!
//! Coordinates are written with 17 significant digits so a save/load round
//! trip reproduces every node bit-exactly.

use std::fs;
use std::path::Path;

use super::{BoundaryEdge, EdgeMarker, MeshError, NodeMarker, TriMesh};
use crate::geom::Vec2;
use crate::scalar::Real;

pub fn save_mesh<S: Real>(mesh: &TriMesh<S>, path: &Path) -> Result<(), MeshError> {
    let mut out = String::new();
    out.push_str("$Nodes\n");
    out.push_str(&format!("{}\n", mesh.n_nodes()));
    for (i, p) in mesh.nodes().iter().enumerate() {
        let marker = match mesh.node_markers()[i] {
            NodeMarker::Interior => 0,
            NodeMarker::OuterFixed => 1,
            NodeMarker::InnerFree => 2,
        };
        out.push_str(&format!("{} {:.16e} {:.16e} {}\n", i + 1, p.x, p.y, marker));
    }
    out.push_str("$Elements\n");
    out.push_str(&format!("{}\n", mesh.n_triangles()));
    for (t, tri) in mesh.triangles().iter().enumerate() {
        out.push_str(&format!(
            "{} {} {} {}\n",
            t + 1,
            tri[0] + 1,
            tri[1] + 1,
            tri[2] + 1
        ));
    }
    out.push_str("$BoundaryEdges\n");
    out.push_str(&format!("{}\n", mesh.boundary_edges().len()));
    for (k, e) in mesh.boundary_edges().iter().enumerate() {
        let marker = match e.marker {
            EdgeMarker::OuterFixed => 1,
            EdgeMarker::InnerFree => 2,
        };
        out.push_str(&format!("{} {} {} {}\n", k + 1, e.a + 1, e.b + 1, marker));
    }
    out.push_str("$End\n");
    fs::write(path, out)?;
    Ok(())
}

struct LineReader<'a> {
    lines: std::str::Lines<'a>,
    line_no: usize,
}

impl<'a> LineReader<'a> {
    fn next_line(&mut self) -> Result<&'a str, MeshError> {
        loop {
            match self.lines.next() {
                None => {
                    return Err(MeshError::Parse {
                        line: self.line_no + 1,
                        msg: "unexpected end of file".into(),
                    })
                }
                Some(raw) => {
                    self.line_no += 1;
                    let trimmed = raw.trim_end_matches('\r').trim();
                    if !trimmed.is_empty() {
                        return Ok(trimmed);
                    }
                }
            }
        }
    }

    fn expect(&mut self, tag: &str) -> Result<(), MeshError> {
        let line = self.next_line()?;
        if line != tag {
            return Err(MeshError::Parse {
                line: self.line_no,
                msg: format!("expected `{tag}`, found `{line}`"),
            });
        }
        Ok(())
    }

    fn parse_count(&mut self) -> Result<usize, MeshError> {
        let line = self.next_line()?;
        line.parse().map_err(|_| MeshError::Parse {
            line: self.line_no,
            msg: format!("expected a count, found `{line}`"),
        })
    }

    fn fields(&mut self, n: usize) -> Result<Vec<&'a str>, MeshError> {
        let line = self.next_line()?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != n {
            return Err(MeshError::Parse {
                line: self.line_no,
                msg: format!("expected {n} fields, found {}", fields.len()),
            });
        }
        Ok(fields)
    }

    fn err(&self, msg: String) -> MeshError {
        MeshError::Parse {
            line: self.line_no,
            msg,
        }
    }
}

pub fn load_mesh<S: Real>(path: &Path) -> Result<TriMesh<S>, MeshError> {
    let text = fs::read_to_string(path)?;
    let mut r = LineReader {
        lines: text.lines(),
        line_no: 0,
    };

    r.expect("$Nodes")?;
    let n_v = r.parse_count()?;
    let mut nodes = Vec::with_capacity(n_v);
    let mut markers = Vec::with_capacity(n_v);
    for want in 1..=n_v {
        let f = r.fields(4)?;
        let id: usize = f[0]
            .parse()
            .map_err(|_| r.err(format!("bad node id `{}`", f[0])))?;
        if id != want {
            return Err(r.err(format!("node ids must be 1..n in order, found {id}")));
        }
        let x: f64 = f[1]
            .parse()
            .map_err(|_| r.err(format!("bad x coordinate `{}`", f[1])))?;
        let y: f64 = f[2]
            .parse()
            .map_err(|_| r.err(format!("bad y coordinate `{}`", f[2])))?;
        let marker = match f[3] {
            "0" => NodeMarker::Interior,
            "1" => NodeMarker::OuterFixed,
            "2" => NodeMarker::InnerFree,
            other => return Err(r.err(format!("bad node marker `{other}`"))),
        };
        nodes.push(Vec2::new(S::of(x), S::of(y)));
        markers.push(marker);
    }

    r.expect("$Elements")?;
    let n_t = r.parse_count()?;
    let mut triangles = Vec::with_capacity(n_t);
    for want in 1..=n_t {
        let f = r.fields(4)?;
        let id: usize = f[0]
            .parse()
            .map_err(|_| r.err(format!("bad element id `{}`", f[0])))?;
        if id != want {
            return Err(r.err(format!("element ids must be 1..n in order, found {id}")));
        }
        let mut tri = [0usize; 3];
        for k in 0..3 {
            let v: usize = f[k + 1]
                .parse()
                .map_err(|_| r.err(format!("bad node id `{}`", f[k + 1])))?;
            if v == 0 || v > n_v {
                return Err(r.err(format!("node id {v} out of range 1..{n_v}")));
            }
            tri[k] = v - 1;
        }
        triangles.push(tri);
    }

    r.expect("$BoundaryEdges")?;
    let n_b = r.parse_count()?;
    let mut edges = Vec::with_capacity(n_b);
    for want in 1..=n_b {
        let f = r.fields(4)?;
        let id: usize = f[0]
            .parse()
            .map_err(|_| r.err(format!("bad edge id `{}`", f[0])))?;
        if id != want {
            return Err(r.err(format!("edge ids must be 1..n in order, found {id}")));
        }
        let a: usize = f[1]
            .parse()
            .map_err(|_| r.err(format!("bad node id `{}`", f[1])))?;
        let b: usize = f[2]
            .parse()
            .map_err(|_| r.err(format!("bad node id `{}`", f[2])))?;
        if a == 0 || a > n_v || b == 0 || b > n_v {
            return Err(r.err("edge node id out of range".into()));
        }
        let marker = match f[3] {
            "1" => EdgeMarker::OuterFixed,
            "2" => EdgeMarker::InnerFree,
            other => return Err(r.err(format!("bad edge marker `{other}`"))),
        };
        edges.push(BoundaryEdge {
            a: a - 1,
            b: b - 1,
            marker,
        });
    }

    r.expect("$End")?;

    let mesh = TriMesh::new(nodes, triangles, edges, markers)?;
    mesh.validate_annular()?;
    Ok(mesh)
}
