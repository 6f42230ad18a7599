//! Newest-vertex bisection on triangle meshes.
//!
//! Each triangle is stored as `(v0, v1, v2)` where `(v0, v1)` is its
//! refinement edge and `v2` the newest vertex. Bisection inserts the midpoint
//! `m` of `(v0, v1)` and produces children `(v2, v0, m)` and `(v1, v2, m)`,
//! so each child's refinement edge is the edge opposite `m`. Starting from a
//! structured grid whose refinement edges are the cell diagonals, the scheme
//! stays conforming and produces only right isosceles triangles.

use crate::error::{Error, Result};
use std::collections::HashMap;

pub(crate) struct Refiner {
    pub vertices: Vec<[f64; 2]>,
    tris: Vec<[usize; 3]>,
    dead: Vec<bool>,
    edge_mid: HashMap<(usize, usize), usize>,
    vertex_cap: usize,
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Refiner {
    pub fn new(vertices: Vec<[f64; 2]>, tris: Vec<[usize; 3]>, vertex_cap: usize) -> Refiner {
        let n = tris.len();
        Refiner {
            vertices,
            tris,
            dead: vec![false; n],
            edge_mid: HashMap::new(),
            vertex_cap,
        }
    }

    pub fn coords(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.tris[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    fn midpoint(&mut self, a: usize, b: usize) -> Result<usize> {
        let key = edge_key(a, b);
        if let Some(&m) = self.edge_mid.get(&key) {
            return Ok(m);
        }
        if self.vertices.len() >= self.vertex_cap {
            return Err(Error::Capacity(format!(
                "refinement exceeded the vertex cap of {}",
                self.vertex_cap
            )));
        }
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        let m = self.vertices.len();
        self.vertices.push([(pa[0] + pb[0]) / 2.0, (pa[1] + pb[1]) / 2.0]);
        self.edge_mid.insert(key, m);
        Ok(m)
    }

    fn bisect(&mut self, t: usize) -> Result<()> {
        debug_assert!(!self.dead[t]);
        let [v0, v1, v2] = self.tris[t];
        let m = self.midpoint(v0, v1)?;
        self.dead[t] = true;
        self.tris.push([v2, v0, m]);
        self.tris.push([v1, v2, m]);
        self.dead.push(false);
        self.dead.push(false);
        Ok(())
    }

    fn has_hanging_edge(&self, t: usize) -> bool {
        let [v0, v1, v2] = self.tris[t];
        self.edge_mid.contains_key(&edge_key(v0, v1))
            || self.edge_mid.contains_key(&edge_key(v1, v2))
            || self.edge_mid.contains_key(&edge_key(v2, v0))
    }

    /// Bisects every live triangle whose edge already carries a midpoint,
    /// repeating until the mesh is conforming again.
    fn restore_conformity(&mut self) -> Result<()> {
        loop {
            let pending: Vec<usize> = (0..self.tris.len())
                .filter(|&t| !self.dead[t] && self.has_hanging_edge(t))
                .collect();
            if pending.is_empty() {
                return Ok(());
            }
            for t in pending {
                if !self.dead[t] {
                    self.bisect(t)?;
                }
            }
        }
    }

    /// Repeatedly bisects live triangles selected by `needs_refinement`
    /// (given the triangle's coordinates), restoring conformity after each
    /// sweep, until no triangle is selected.
    pub fn refine_where(
        &mut self,
        mut needs_refinement: impl FnMut(&[[f64; 2]; 3]) -> bool,
    ) -> Result<()> {
        loop {
            let marked: Vec<usize> = (0..self.tris.len())
                .filter(|&t| !self.dead[t] && needs_refinement(&self.coords(t)))
                .collect();
            if marked.is_empty() {
                return Ok(());
            }
            for t in marked {
                if !self.dead[t] {
                    self.bisect(t)?;
                }
            }
            self.restore_conformity()?;
        }
    }

    /// Live triangles in creation order.
    pub fn into_parts(self) -> (Vec<[f64; 2]>, Vec<[usize; 3]>) {
        let tris = self
            .tris
            .into_iter()
            .zip(self.dead)
            .filter(|(_, dead)| !dead)
            .map(|(t, _)| t)
            .collect();
        (self.vertices, tris)
    }
}

pub(crate) fn triangle_diameter_sq(tri: &[[f64; 2]; 3]) -> f64 {
    let edge = |a: [f64; 2], b: [f64; 2]| {
        let dx = a[0] - b[0];
        let dy = a[1] - b[1];
        dx * dx + dy * dy
    };
    edge(tri[0], tri[1])
        .max(edge(tri[1], tri[2]))
        .max(edge(tri[2], tri[0]))
}
