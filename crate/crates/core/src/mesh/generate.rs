//! Body-fitted mesh generation: samples the boundary of a union of discs as
//! closed polylines, triangulates those together with a jittered background
//! grid, recovers the polyline segments, and labels elements by phase.

use alloc::vec::Vec;

use super::delaunay::Triangulation;
use super::{Disc, Label, ShapeSpec, TriMesh};
use crate::error::Error;
use crate::geom::Vec2;
use crate::math;

const TWO_PI: f64 = 2.0 * core::f64::consts::PI;

/// Deterministic jitter hash (splitmix64).
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn jitter_unit(ix: usize, iy: usize, component: u64) -> f64 {
    let h = splitmix64((ix as u64) << 32 ^ (iy as u64) ^ (component << 17) ^ 0x5eed);
    // map to [-1, 1)
    (h >> 11) as f64 / (1u64 << 52) as f64 * 2.0 - 1.0
}

/// One angular interval blocked on a circle, with the exact intersection
/// points at its two ends (shared with the blocking circle).
struct Blocked {
    lo: f64,
    hi: f64,
    p_lo: Vec2,
    p_hi: Vec2,
}

fn normalize_angle(a: f64) -> f64 {
    let mut a = a % TWO_PI;
    if a < 0.0 {
        a += TWO_PI;
    }
    a
}

/// Intersection points of two properly intersecting circles, in a fixed
/// deterministic order.
fn circle_intersections(a: &Disc, b: &Disc) -> Option<(Vec2, Vec2)> {
    let delta = b.center - a.center;
    let d = delta.norm();
    if d <= 1e-14 || d >= a.radius + b.radius || d <= (a.radius - b.radius).abs() {
        return None;
    }
    let along = (d * d + a.radius * a.radius - b.radius * b.radius) / (2.0 * d);
    let h2 = a.radius * a.radius - along * along;
    if h2 <= 0.0 {
        return None;
    }
    let h = math::sqrt(h2);
    let m = a.center + delta * (along / d);
    let perp = Vec2::new(-delta.y, delta.x) * (h / d);
    Some((m + perp, m - perp))
}

/// An open arc of the union boundary, sampled as a point chain. The first and
/// last points are exact circle-circle intersection points.
struct Arc {
    pts: Vec<Vec2>,
}

/// Samples the boundary of the union of discs with target spacing
/// `2*pi*r / n_interface` per disc. Returns closed point loops in CCW order.
pub fn union_boundary_polylines(shape: &ShapeSpec, n_interface: usize) -> Vec<Vec<Vec2>> {
    let discs = &shape.discs;
    let mut loops: Vec<Vec<Vec2>> = Vec::new();
    let mut open_arcs: Vec<Arc> = Vec::new();

    for (i, di) in discs.iter().enumerate() {
        // A disc contained in another contributes nothing.
        let swallowed = discs.iter().enumerate().any(|(j, dj)| {
            j != i && {
                let d = (dj.center - di.center).norm();
                d + di.radius <= dj.radius + 1e-14 && !(j > i && d <= 1e-14 && di.radius == dj.radius)
            }
        });
        if swallowed {
            continue;
        }
        let mut blocked: Vec<Blocked> = Vec::new();
        for (j, dj) in discs.iter().enumerate() {
            if j == i {
                continue;
            }
            if let Some((p1, p2)) = circle_intersections(di, dj) {
                let d = (dj.center - di.center).norm();
                let theta = math::atan2(dj.center.y - di.center.y, dj.center.x - di.center.x);
                let cos_alpha = ((d * d + di.radius * di.radius - dj.radius * dj.radius)
                    / (2.0 * d * di.radius))
                    .clamp(-1.0, 1.0);
                let alpha = math::acos(cos_alpha);
                let lo = theta - alpha;
                let hi = theta + alpha;
                // Snap interval ends to the exact intersection points.
                let at = |ang: f64| di.center + Vec2::new(math::cos(ang), math::sin(ang)) * di.radius;
                let (p_lo, p_hi) = if (at(lo) - p1).norm_sq() < (at(lo) - p2).norm_sq() {
                    (p1, p2)
                } else {
                    (p2, p1)
                };
                blocked.push(Blocked {
                    lo: normalize_angle(lo),
                    hi: normalize_angle(lo) + (hi - lo),
                    p_lo,
                    p_hi,
                });
            }
        }
        let spacing = TWO_PI / n_interface as f64;
        if blocked.is_empty() {
            // Full circle: n_interface equidistant vertices.
            let mut pts = Vec::with_capacity(n_interface);
            for k in 0..n_interface {
                let th = TWO_PI * k as f64 / n_interface as f64;
                pts.push(di.center + Vec2::new(math::cos(th), math::sin(th)) * di.radius);
            }
            loops.push(pts);
            continue;
        }
        // Merge blocked intervals on the circle (unrolled once past 2*pi).
        blocked.sort_by(|a, b| a.lo.partial_cmp(&b.lo).unwrap());
        let mut merged: Vec<Blocked> = Vec::new();
        for b in blocked {
            match merged.last_mut() {
                Some(last) if b.lo <= last.hi + 1e-13 => {
                    if b.hi > last.hi {
                        last.hi = b.hi;
                        last.p_hi = b.p_hi;
                    }
                }
                _ => merged.push(b),
            }
        }
        // Wrap-around: the last interval may swallow the first ones.
        while merged.len() > 1 {
            let last_hi = merged.last().unwrap().hi;
            if last_hi - TWO_PI >= merged[0].lo - 1e-13 {
                let first = merged.remove(0);
                let last = merged.last_mut().unwrap();
                if first.hi + TWO_PI > last.hi {
                    last.hi = first.hi + TWO_PI;
                    last.p_hi = first.p_hi;
                }
            } else {
                break;
            }
        }
        if merged.len() == 1 && merged[0].hi - merged[0].lo >= TWO_PI - 1e-12 {
            continue; // fully covered
        }
        // Free arcs between consecutive blocked intervals.
        for k in 0..merged.len() {
            let a_start = merged[k].hi;
            let next = &merged[(k + 1) % merged.len()];
            let mut a_end = next.lo;
            while a_end <= a_start + 1e-13 {
                a_end += TWO_PI;
            }
            let p_start = merged[k].p_hi;
            let p_end = next.p_lo;
            let n_sub = math::ceil((a_end - a_start) / spacing).max(1.0) as usize;
            let mut pts = Vec::with_capacity(n_sub + 1);
            pts.push(p_start);
            for m in 1..n_sub {
                let th = a_start + (a_end - a_start) * m as f64 / n_sub as f64;
                pts.push(di.center + Vec2::new(math::cos(th), math::sin(th)) * di.radius);
            }
            pts.push(p_end);
            open_arcs.push(Arc { pts });
        }
    }

    // Stitch open arcs into closed loops; shared intersection points are
    // bitwise-equal by construction, matched here with a small tolerance.
    let mut used = alloc::vec![false; open_arcs.len()];
    for start in 0..open_arcs.len() {
        if used[start] {
            continue;
        }
        used[start] = true;
        let mut chain: Vec<Vec2> = open_arcs[start].pts.clone();
        loop {
            let tail = *chain.last().unwrap();
            if (tail - chain[0]).norm() < 1e-12 {
                chain.pop();
                break;
            }
            let next = (0..open_arcs.len())
                .find(|&i| !used[i] && (open_arcs[i].pts[0] - tail).norm() < 1e-12);
            match next {
                Some(i) => {
                    used[i] = true;
                    chain.extend_from_slice(&open_arcs[i].pts[1..]);
                }
                None => break, // should not happen for generic shapes
            }
        }
        loops.push(chain);
    }
    loops
}

fn dist_point_segment(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(ab) / ab.norm_sq()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

fn dist_to_polylines(p: Vec2, loops: &[Vec<Vec2>]) -> f64 {
    let mut best = f64::INFINITY;
    for lp in loops {
        for k in 0..lp.len() {
            let a = lp[k];
            let b = lp[(k + 1) % lp.len()];
            best = best.min(dist_point_segment(p, a, b));
        }
    }
    best
}

/// Offset point rings that grade the mesh between the fine interface spacing
/// and the coarse background grid: one ring per side at the geometric-mean
/// distance, tangentially decimated to the same scale.
fn grading_rings(loops: &[Vec<Vec2>], spacing: f64) -> (Vec<Vec2>, f64) {
    let mut ring = Vec::new();
    let mut max_offset = 0.0f64;
    for lp in loops {
        let len = lp.len();
        if len < 3 {
            continue;
        }
        let perimeter: f64 = (0..len)
            .map(|k| (lp[(k + 1) % len] - lp[k]).norm())
            .sum();
        let ds = perimeter / len as f64;
        if ds >= 0.6 * spacing {
            continue; // interface already as coarse as the grid
        }
        let offset = math::sqrt(ds * spacing);
        max_offset = max_offset.max(offset);
        let step = math::ceil(1.25 * offset / ds) as usize;
        let step = step.max(1);
        let mut k = 0;
        while k < len {
            let prev = lp[(k + len - 1) % len];
            let next = lp[(k + 1) % len];
            let tangent = next - prev;
            if tangent.norm() > 0.0 {
                let normal = tangent.perp_right().normalized();
                for side in [1.0, -1.0] {
                    let p = lp[k] + normal * (side * offset);
                    let margin = 0.3 * spacing;
                    if p.x < margin || p.x > 1.0 - margin || p.y < margin || p.y > 1.0 - margin {
                        continue;
                    }
                    if dist_to_polylines(p, loops) < 0.7 * offset {
                        continue;
                    }
                    if ring.iter().any(|&q: &Vec2| (p - q).norm() < 0.6 * offset) {
                        continue;
                    }
                    ring.push(p);
                }
            }
            k += step;
        }
    }
    (ring, max_offset)
}

/// Generates a body-fitted constrained Delaunay triangulation of D whose edge
/// set contains the interface polylines of `shape`, with elements labeled
/// PLUS iff their centroid lies in the union of discs.
pub fn generate_mesh(
    shape: &ShapeSpec,
    n_interface: usize,
    grid_res: usize,
) -> Result<TriMesh, Error> {
    if n_interface < 8 {
        return Err(Error::Config(alloc::format!(
            "n_interface must be at least 8, got {n_interface}"
        )));
    }
    if grid_res < 4 {
        return Err(Error::Config(alloc::format!(
            "grid_res must be at least 4, got {grid_res}"
        )));
    }
    shape.validate()?;

    let loops = union_boundary_polylines(shape, n_interface);
    let spacing = 1.0 / (grid_res - 1) as f64;
    let (ring, ring_offset) = grading_rings(&loops, spacing);
    let clear_dist = (0.5 * spacing).max(ring_offset + 0.4 * spacing);

    let mut points: Vec<Vec2> = Vec::new();
    let mut boundary: Vec<bool> = Vec::new();
    for iy in 0..grid_res {
        for ix in 0..grid_res {
            let on_bnd = ix == 0 || ix == grid_res - 1 || iy == 0 || iy == grid_res - 1;
            let base = Vec2::new(
                if ix == grid_res - 1 { 1.0 } else { ix as f64 * spacing },
                if iy == grid_res - 1 { 1.0 } else { iy as f64 * spacing },
            );
            if on_bnd {
                points.push(base);
                boundary.push(true);
                continue;
            }
            // Jitter interior points to break grid degeneracies.
            let p = base
                + Vec2::new(jitter_unit(ix, iy, 0), jitter_unit(ix, iy, 1)) * (0.25 * spacing);
            if dist_to_polylines(p, &loops) < clear_dist {
                continue;
            }
            if ring.iter().any(|&q| (p - q).norm() < 0.45 * spacing) {
                continue;
            }
            points.push(p);
            boundary.push(false);
        }
    }
    for &p in &ring {
        points.push(p);
        boundary.push(false);
    }

    let mut segments: Vec<(usize, usize)> = Vec::new();
    for lp in &loops {
        let offset = points.len();
        for &p in lp {
            points.push(p);
            boundary.push(false);
        }
        for k in 0..lp.len() {
            segments.push((offset + k, offset + (k + 1) % lp.len()));
        }
    }

    let mut tri = Triangulation::new(&points)?;
    tri.recover_edges(&segments)?;
    let (all_points, triangles) = tri.into_parts();
    // Midpoints appended by edge recovery are interior points.
    let mut boundary = boundary;
    boundary.resize(all_points.len(), false);

    let labels: Vec<Label> = triangles
        .iter()
        .map(|t| {
            let c = (all_points[t[0] as usize]
                + all_points[t[1] as usize]
                + all_points[t[2] as usize])
                * (1.0 / 3.0);
            if shape.contains(c) {
                Label::Plus
            } else {
                Label::Minus
            }
        })
        .collect();

    TriMesh::from_parts(all_points, triangles, labels, boundary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{interface_edges, interface_polylines, validate, QualityFloors};

    fn disc(x: f64, y: f64, r: f64) -> Disc {
        Disc {
            center: Vec2::new(x, y),
            radius: r,
        }
    }

    /// Area of a union of two discs by inclusion-exclusion with the circular
    /// segment (lens) formula. Test-side oracle.
    fn two_disc_union_area(a: &Disc, b: &Disc) -> f64 {
        let pi = core::f64::consts::PI;
        let d = (b.center - a.center).norm();
        let (r1, r2) = (a.radius, b.radius);
        if d >= r1 + r2 {
            return pi * (r1 * r1 + r2 * r2);
        }
        if d <= (r1 - r2).abs() {
            return pi * r1.max(r2) * r1.max(r2);
        }
        let lens = r1 * r1 * math::acos((d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1))
            + r2 * r2 * math::acos((d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2))
            - 0.5
                * math::sqrt(
                    (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2),
                );
        pi * (r1 * r1 + r2 * r2) - lens
    }

    #[test]
    fn rejects_disc_touching_boundary() {
        let shape = ShapeSpec::new(alloc::vec![disc(0.1, 0.5, 0.2)]);
        assert!(matches!(
            generate_mesh(&shape, 32, 8),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn empty_shape_has_no_interface() {
        let mesh = generate_mesh(&ShapeSpec::empty(), 100, 8).unwrap();
        assert!(interface_edges(&mesh).is_empty());
        assert!(mesh.labels().iter().all(|&l| l == Label::Minus));
        assert!(validate(&mesh, &QualityFloors::default()).valid);
    }

    #[test]
    fn paper_initial_disc_mesh() {
        let shape = ShapeSpec::new(alloc::vec![disc(0.15, 0.15, 0.1)]);
        let mesh = generate_mesh(&shape, 100, 21).unwrap();
        assert!(validate(&mesh, &QualityFloors::default()).valid);
        assert!(
            mesh.n_triangles() >= 800 && mesh.n_triangles() <= 1100,
            "element count {} outside [800, 1100]",
            mesh.n_triangles()
        );
        let loops = interface_polylines(&mesh);
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].len(), 100);
        // Inscribed 100-gon perimeter.
        let r = 0.1;
        let n = 100.0;
        let expected = 2.0 * n * r * math::sin(core::f64::consts::PI / n);
        let total: f64 = interface_edges(&mesh).iter().map(|e| e.length).sum();
        assert!((total - expected).abs() < 1e-10);
        assert!((total - 2.0 * core::f64::consts::PI * r).abs() / (2.0 * core::f64::consts::PI * r) < 1e-3);
    }

    #[test]
    fn overlapping_discs_form_one_loop_with_union_area() {
        let a = disc(0.65, 0.35, 0.2);
        let b = disc(0.7, 0.5, 0.1);
        let shape = ShapeSpec::new(alloc::vec![a, b]);
        let mesh = generate_mesh(&shape, 100, 21).unwrap();
        assert!(validate(&mesh, &QualityFloors::default()).valid);
        let loops = interface_polylines(&mesh);
        assert_eq!(loops.len(), 1, "expected one loop around the union");
        // Every interface vertex is shared by exactly two interface edges.
        let edges = interface_edges(&mesh);
        let mut degree: alloc::collections::BTreeMap<u32, usize> = Default::default();
        for e in &edges {
            for &v in &e.endpoints {
                *degree.entry(v).or_default() += 1;
            }
        }
        assert!(degree.values().all(|&d| d == 2));
        let plus = mesh.area_of_label(Label::Plus);
        let exact = two_disc_union_area(&a, &b);
        assert!(
            (plus - exact).abs() / exact < 0.02,
            "plus area {plus} vs union {exact}"
        );
    }

    #[test]
    fn plus_area_converges_first_order() {
        let shape = ShapeSpec::new(alloc::vec![disc(0.5, 0.5, 0.25)]);
        let exact = core::f64::consts::PI * 0.25 * 0.25;
        let mut errs = alloc::vec::Vec::new();
        for (ni, gr) in [(24usize, 9usize), (48, 17), (96, 33)] {
            let mesh = generate_mesh(&shape, ni, gr).unwrap();
            errs.push((mesh.area_of_label(Label::Plus) - exact).abs());
        }
        assert!(errs[2] < errs[0], "errors {errs:?} do not shrink");
        assert!(errs[2] / exact < 5e-3);
    }

    #[test]
    fn deformed_generated_mesh_can_invert() {
        use crate::field::VectorFieldP1;
        use crate::mesh::deform;
        use rand::{Rng, SeedableRng};
        let shape = ShapeSpec::new(alloc::vec![disc(0.5, 0.5, 0.2)]);
        let mesh = generate_mesh(&shape, 32, 9).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let dir = VectorFieldP1::from_values(
            &mesh,
            (0..mesh.n_vertices())
                .map(|_| Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect(),
        );
        // Scale t up until validity breaks.
        let mut t = 1e-3;
        let mut inverted = false;
        for _ in 0..30 {
            let moved = deform(&mesh, &dir, t).unwrap();
            if !validate(&moved, &QualityFloors::default()).valid {
                inverted = true;
                break;
            }
            t *= 2.0;
        }
        assert!(inverted, "random deformation never inverted an element");
    }
}
