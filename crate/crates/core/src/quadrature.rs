//! Composite degree-5 quadrature on triangles.
//!
//! The base rule is the symmetric 7-point rule exact for polynomials of
//! degree 5. A rule of `level` L applies it on each of the `4^L` congruent
//! sub-triangles obtained by repeated midpoint subdivision.

use std::sync::OnceLock;

/// Deepest level kept in the cache.
pub const MAX_LEVEL: usize = 7;

/// Points in barycentric coordinates, weights normalised to sum to one.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub level: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

fn base_rule() -> ([[f64; 3]; 7], [f64; 7]) {
    let s15 = 15f64.sqrt();
    let a1 = (6.0 - s15) / 21.0;
    let a2 = (6.0 + s15) / 21.0;
    let w0 = 9.0 / 40.0;
    let w1 = (155.0 - s15) / 1200.0;
    let w2 = (155.0 + s15) / 1200.0;
    let b1 = 1.0 - 2.0 * a1;
    let b2 = 1.0 - 2.0 * a2;
    let third = 1.0 / 3.0;
    (
        [
            [third, third, third],
            [a1, a1, b1],
            [a1, b1, a1],
            [b1, a1, a1],
            [a2, a2, b2],
            [a2, b2, a2],
            [b2, a2, a2],
        ],
        [w0, w1, w1, w1, w2, w2, w2],
    )
}

fn subdivide(tri: [[f64; 3]; 3]) -> [[[f64; 3]; 3]; 4] {
    let mid = |a: [f64; 3], b: [f64; 3]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])];
    let [p, q, r] = tri;
    let (pq, qr, rp) = (mid(p, q), mid(q, r), mid(r, p));
    [[p, pq, rp], [pq, q, qr], [rp, qr, r], [qr, rp, pq]]
}

fn build(level: usize) -> TriangleRule {
    let mut tris = vec![[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]];
    for _ in 0..level {
        tris = tris.into_iter().flat_map(subdivide).collect();
    }
    let (pts, wts) = base_rule();
    let scale = 1.0 / tris.len() as f64;
    let mut points = Vec::with_capacity(7 * tris.len());
    let mut weights = Vec::with_capacity(7 * tris.len());
    for t in &tris {
        for (p, w) in pts.iter().zip(wts) {
            let mut bary = [0.0; 3];
            for (c, b) in bary.iter_mut().enumerate() {
                *b = p[0] * t[0][c] + p[1] * t[1][c] + p[2] * t[2][c];
            }
            points.push(bary);
            weights.push(w * scale);
        }
    }
    TriangleRule {
        level,
        points,
        weights,
    }
}

/// Cached composite rule. Panics for `level > MAX_LEVEL`.
pub fn quad_rule(level: usize) -> &'static TriangleRule {
    static RULES: OnceLock<Vec<TriangleRule>> = OnceLock::new();
    assert!(level <= MAX_LEVEL, "quadrature level {level} exceeds {MAX_LEVEL}");
    &RULES.get_or_init(|| (0..=MAX_LEVEL).map(build).collect())[level]
}

impl TriangleRule {
    /// Physical point for barycentric index `q` on a triangle.
    #[inline]
    pub fn point(&self, q: usize, v: &[[f64; 2]; 3]) -> [f64; 2] {
        let l = self.points[q];
        [
            l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0],
            l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1],
        ]
    }

    pub fn integrate<F: FnMut([f64; 2]) -> f64>(&self, v: &[[f64; 2]; 3], mut f: F) -> f64 {
        let area = 0.5
            * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[1][1] - v[0][1]) * (v[2][0] - v[0][0]))
                .abs();
        let mut sum = 0.0;
        for (q, w) in self.weights.iter().enumerate() {
            sum += w * f(self.point(q, v));
        }
        area * sum
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}
