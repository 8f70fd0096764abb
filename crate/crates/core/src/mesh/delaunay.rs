//! Incremental Bowyer-Watson Delaunay triangulation of point sets in the
//! closed unit square, with edge recovery by segment splitting.
//!
//! The triangulation is seeded with the four square corners (which must be
//! part of the input), so no far-away super vertices exist and every
//! circumcircle test involves real points only. Points exactly on a
//! circumcircle count as outside the cavity, which keeps the construction
//! consistent for cocircular inputs such as equidistant interface samples;
//! points landing exactly on an existing edge are handled by dropping the
//! degenerate fan sliver.
//!
//! Scales here are small (hundreds to a few thousand points, built once per
//! run), so the cavity search is a plain scan over live triangles.

use alloc::vec::Vec;

use crate::error::Error;
use crate::geom::Vec2;

struct Tri {
    v: [usize; 3],
    alive: bool,
}

pub struct Triangulation {
    points: Vec<Vec2>,
    tris: Vec<Tri>,
    n_input: usize,
}

/// Relative tolerance for the in-circle determinant.
const INCIRCLE_REL_TOL: f64 = 1e-12;
/// Relative tolerance below which a fan triangle is considered degenerate
/// (the inserted point lies on the cavity boundary edge).
const DEGENERATE_REL_TOL: f64 = 1e-13;

const CORNERS: [Vec2; 4] = [
    Vec2 { x: 0.0, y: 0.0 },
    Vec2 { x: 1.0, y: 0.0 },
    Vec2 { x: 1.0, y: 1.0 },
    Vec2 { x: 0.0, y: 1.0 },
];

fn corner_id(p: Vec2) -> Option<usize> {
    CORNERS
        .iter()
        .position(|&c| (p - c).norm() <= 1e-14)
}

/// Positive if `p` lies strictly inside the circumcircle of CCW (a,b,c).
/// Returns the determinant together with a magnitude scale for tolerance.
fn incircle(a: Vec2, b: Vec2, c: Vec2, p: Vec2) -> (f64, f64) {
    let ax = a.x - p.x;
    let ay = a.y - p.y;
    let bx = b.x - p.x;
    let by = b.y - p.y;
    let cx = c.x - p.x;
    let cy = c.y - p.y;
    let a2 = ax * ax + ay * ay;
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let det = ax * (by * c2 - b2 * cy) - ay * (bx * c2 - b2 * cx) + a2 * (bx * cy - by * cx);
    let scale = ax.abs() * (by.abs() * c2 + b2 * cy.abs())
        + ay.abs() * (bx.abs() * c2 + b2 * cx.abs())
        + a2 * (bx.abs() * cy.abs() + by.abs() * cx.abs())
        + 1e-300;
    (det, scale)
}

impl Triangulation {
    /// Triangulates `points`, which must lie in the closed unit square and
    /// include its four corners.
    pub fn new(points: &[Vec2]) -> Result<Self, Error> {
        let n = points.len();
        let mut pts = points.to_vec();
        // Seed corners appended internally; input corners are aliased onto
        // them as they are encountered.
        pts.extend(CORNERS);
        let mut t = Triangulation {
            points: pts,
            tris: Vec::new(),
            n_input: n,
        };
        t.tris.push(Tri {
            v: [n, n + 1, n + 2],
            alive: true,
        });
        t.tris.push(Tri {
            v: [n, n + 2, n + 3],
            alive: true,
        });
        let mut alias = [usize::MAX; 4];
        for i in 0..n {
            match corner_id(t.points[i]) {
                Some(c) => {
                    if alias[c] != usize::MAX {
                        return Err(Error::InvalidMesh(alloc::format!(
                            "duplicate corner point ({},{})",
                            t.points[i].x,
                            t.points[i].y
                        )));
                    }
                    t.relabel(n + c, i);
                    alias[c] = i;
                }
                None => t.insert(i)?,
            }
        }
        if alias.contains(&usize::MAX) {
            return Err(Error::InvalidMesh(alloc::string::String::from(
                "triangulation input must contain the four unit-square corners",
            )));
        }
        Ok(t)
    }

    fn relabel(&mut self, old: usize, new: usize) {
        for tri in &mut self.tris {
            for v in &mut tri.v {
                if *v == old {
                    *v = new;
                }
            }
        }
    }

    fn point(&self, i: usize) -> Vec2 {
        self.points[i]
    }

    fn insert(&mut self, pi: usize) -> Result<(), Error> {
        let p = self.point(pi);
        // Cavity: triangles whose open circumdisc contains p.
        let mut bad: Vec<usize> = Vec::new();
        for (k, tri) in self.tris.iter().enumerate() {
            if !tri.alive {
                continue;
            }
            let (det, scale) = incircle(
                self.point(tri.v[0]),
                self.point(tri.v[1]),
                self.point(tri.v[2]),
                p,
            );
            if det > INCIRCLE_REL_TOL * scale {
                bad.push(k);
            }
        }
        if bad.is_empty() {
            return Err(Error::InvalidMesh(alloc::format!(
                "triangulation: point ({},{}) fell outside every circumcircle (outside the square or duplicate)",
                p.x,
                p.y
            )));
        }
        // Directed boundary edges of the cavity: edges of bad triangles whose
        // reverse is not an edge of the cavity.
        let mut cavity_edges: alloc::collections::BTreeSet<(usize, usize)> = Default::default();
        for &k in &bad {
            let v = self.tris[k].v;
            for e in 0..3 {
                cavity_edges.insert((v[e], v[(e + 1) % 3]));
            }
        }
        let boundary: Vec<(usize, usize)> = cavity_edges
            .iter()
            .copied()
            .filter(|&(a, b)| !cavity_edges.contains(&(b, a)))
            .collect();
        for &k in &bad {
            self.tris[k].alive = false;
        }
        // Fan from p. The cavity boundary is CCW as seen from inside, so
        // (a, b, p) is CCW; an exactly-on-edge insertion produces a
        // degenerate sliver that is skipped (the rest of the fan still tiles
        // the cavity).
        for (a, b) in boundary {
            let pa = self.point(a);
            let pb = self.point(b);
            let area2 = (pb - pa).cross(p - pa);
            let scale = (pb - pa).norm() * ((p - pa).norm() + (p - pb).norm()) + 1e-300;
            if area2.abs() <= DEGENERATE_REL_TOL * scale {
                continue;
            }
            if area2 < 0.0 {
                return Err(Error::InvalidMesh(alloc::format!(
                    "triangulation: inverted cavity fan at ({},{})",
                    p.x,
                    p.y
                )));
            }
            self.tris.push(Tri {
                v: [a, b, pi],
                alive: true,
            });
        }
        Ok(())
    }

    fn edge_present(&self, a: usize, b: usize) -> bool {
        for tri in self.tris.iter().filter(|t| t.alive) {
            for e in 0..3 {
                let u = tri.v[e];
                let v = tri.v[(e + 1) % 3];
                if (u == a && v == b) || (u == b && v == a) {
                    return true;
                }
            }
        }
        false
    }

    /// Forces the segments (pairs of point indices) to appear as edges by
    /// recursively splitting missing segments at their midpoint, or at an
    /// existing vertex when one sits exactly on the segment. Returns the
    /// final segment set (splits included).
    pub fn recover_edges(
        &mut self,
        segments: &[(usize, usize)],
    ) -> Result<Vec<(usize, usize)>, Error> {
        const MAX_SPLIT_DEPTH: usize = 8;
        let mut queue: Vec<(usize, usize, usize)> =
            segments.iter().map(|&(a, b)| (a, b, 0)).collect();
        let mut recovered = Vec::new();
        while let Some((a, b, depth)) = queue.pop() {
            if self.edge_present(a, b) {
                recovered.push((a, b));
                continue;
            }
            let pa = self.point(a);
            let pb = self.point(b);
            if depth >= MAX_SPLIT_DEPTH {
                return Err(Error::EdgeRecovery {
                    x0: pa.x,
                    y0: pa.y,
                    x1: pb.x,
                    y1: pb.y,
                    splits: depth,
                });
            }
            let mid = (pa + pb) * 0.5;
            // A vertex exactly at the midpoint is the blocker; split there.
            let existing = (0..self.n_input).find(|&i| (self.point(i) - mid).norm() <= 1e-12);
            let mi = match existing {
                Some(i) => i,
                None => {
                    let mi = self.n_input;
                    // Seed corners stay at the end of the point list.
                    self.points.insert(mi, mid);
                    for tri in &mut self.tris {
                        for v in &mut tri.v {
                            if *v >= mi {
                                *v += 1;
                            }
                        }
                    }
                    self.n_input += 1;
                    self.insert(mi)?;
                    mi
                }
            };
            queue.push((a, mi, depth + 1));
            queue.push((mi, b, depth + 1));
        }
        Ok(recovered)
    }

    /// Points (input order preserved, recovery midpoints appended) and CCW
    /// triangles.
    pub fn into_parts(self) -> (Vec<Vec2>, Vec<[u32; 3]>) {
        let n = self.n_input;
        let mut triangles = Vec::new();
        for tri in self.tris.iter().filter(|t| t.alive) {
            debug_assert!(tri.v.iter().all(|&v| v < n));
            triangles.push([tri.v[0] as u32, tri.v[1] as u32, tri.v[2] as u32]);
        }
        let mut points = self.points;
        points.truncate(n);
        (points, triangles)
    }
}
