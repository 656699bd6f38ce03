//! Convex polytope state space `{y : V y >= b}`.
//!
//! Rows of `V` are kept at unit Euclidean norm so that `v_k . y - b_k` is the
//! signed Euclidean distance to the k-th boundary hyperplane. Construction
//! verifies non-emptiness with an LP, so a `Polytope` value is always a
//! certificate of a non-empty feasible set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, lstsq, lu_solve, norm2, Mat};
use crate::lp::{self, LpOutcome};

/// Tolerance for a point to count as lying on a hyperplane.
const ON_BOUNDARY_TOL: f64 = 1e-9;

/// Convex polytope `{y in R^d : V y >= b}` with unit-norm rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "PolytopeRaw", into = "PolytopeRaw")]
pub struct Polytope {
    v: Mat,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolytopeRaw {
    #[serde(rename = "V")]
    v: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl TryFrom<PolytopeRaw> for Polytope {
    type Error = Error;
    fn try_from(raw: PolytopeRaw) -> Result<Self> {
        Polytope::new(Mat::from_rows(&raw.v), raw.b)
    }
}

impl From<Polytope> for PolytopeRaw {
    fn from(p: Polytope) -> Self {
        PolytopeRaw {
            v: (0..p.v.nrows()).map(|i| p.v.row(i).to_vec()).collect(),
            b: p.b,
        }
    }
}

/// Vertices of a bounded polytope, in lexicographic order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VertexSet {
    pub vertices: Vec<Vec<f64>>,
}

/// One rho*-interior anchor point per constraint (Algorithm: boundary
/// midpoint pushed inward along the constraint normal as far as the shrunken
/// polytope allows).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InteriorPointSet {
    pub rho_star: f64,
    pub zeta: Vec<Vec<f64>>,
}

impl Polytope {
    /// Build a polytope from raw constraint rows, rescaling each row (and its
    /// offset) to unit norm and verifying feasibility by LP.
    pub fn new(v_raw: Mat, b_raw: Vec<f64>) -> Result<Self> {
        assert_eq!(v_raw.nrows(), b_raw.len(), "V/b row count mismatch");
        let mut v = v_raw;
        let mut b = b_raw;
        for i in 0..v.nrows() {
            let norm = norm2(v.row(i));
            if norm < 1e-14 {
                return Err(Error::ZeroRow { row: i, norm });
            }
            for x in v.row_mut(i) {
                *x /= norm;
            }
            b[i] /= norm;
        }
        if lp::feasible_point(&v, &b)?.is_none() {
            return Err(Error::EmptyPolytope);
        }
        Ok(Self { v, b })
    }

    pub fn dim(&self) -> usize {
        self.v.ncols()
    }

    pub fn n_constraints(&self) -> usize {
        self.v.nrows()
    }

    pub fn normals(&self) -> &Mat {
        &self.v
    }

    pub fn normal(&self, k: usize) -> &[f64] {
        self.v.row(k)
    }

    pub fn offsets(&self) -> &[f64] {
        &self.b
    }

    /// Signed Euclidean distance `rho_k(y) = v_k . y - b_k` to boundary `k`
    /// (negative outside).
    pub fn distance(&self, y: &[f64], k: usize) -> Result<f64> {
        if k >= self.v.nrows() {
            return Err(Error::IndexOutOfRange {
                index: k,
                nrows: self.v.nrows(),
            });
        }
        Ok(dot(self.v.row(k), y) - self.b[k])
    }

    /// All signed boundary distances at `y`.
    pub fn distances(&self, y: &[f64]) -> Vec<f64> {
        (0..self.v.nrows())
            .map(|k| dot(self.v.row(k), y) - self.b[k])
            .collect()
    }

    pub fn min_distance(&self, y: &[f64]) -> f64 {
        self.distances(y).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, y: &[f64], tol: f64) -> bool {
        debug_assert!(tol >= 0.0);
        self.min_distance(y) >= -tol
    }

    /// A point satisfying every constraint (recomputed by LP).
    pub fn feasible_point(&self) -> Result<Vec<f64>> {
        lp::feasible_point(&self.v, &self.b)?.ok_or(Error::EmptyPolytope)
    }

    /// Remove constraints that cannot be binding: row `k` is dropped iff
    /// maximizing `b_k - v_k . y` over the remaining rows yields an optimum
    /// `<= 0`, i.e. the rest of the system already implies it.
    pub fn eliminate_redundant(&self) -> Result<Polytope> {
        let r = self.v.nrows();
        let mut kept: Vec<usize> = (0..r).collect();
        let mut k_idx = 0;
        while k_idx < kept.len() {
            let k = kept[k_idx];
            if kept.len() == 1 {
                break;
            }
            let others: Vec<usize> = kept.iter().copied().filter(|&i| i != k).collect();
            let sub_v = Mat::from_rows(
                &others
                    .iter()
                    .map(|&i| self.v.row(i).to_vec())
                    .collect::<Vec<_>>(),
            );
            let sub_b: Vec<f64> = others.iter().map(|&i| self.b[i]).collect();
            let obj: Vec<f64> = self.v.row(k).iter().map(|x| -x).collect();
            let redundant = match lp::maximize(&obj, &sub_v, &sub_b)? {
                LpOutcome::Optimal { objective, .. } => objective + self.b[k] <= 1e-9,
                LpOutcome::Unbounded => false,
                LpOutcome::Infeasible => {
                    return Err(Error::LpFailure(
                        "sub-system infeasible during redundancy elimination".into(),
                    ))
                }
            };
            if redundant {
                kept.remove(k_idx);
            } else {
                k_idx += 1;
            }
        }
        let v = Mat::from_rows(
            &kept
                .iter()
                .map(|&i| self.v.row(i).to_vec())
                .collect::<Vec<_>>(),
        );
        let b: Vec<f64> = kept.iter().map(|&i| self.b[i]).collect();
        Polytope::new(v, b)
    }

    /// Check boundedness by maximizing each coordinate in both directions.
    fn check_bounded(&self) -> Result<()> {
        let d = self.dim();
        for coord in 0..d {
            for sign in [1.0, -1.0] {
                let mut obj = vec![0.0; d];
                obj[coord] = sign;
                if matches!(
                    lp::maximize(&obj, &self.v, &self.b)?,
                    LpOutcome::Unbounded
                ) {
                    return Err(Error::Unbounded { coord });
                }
            }
        }
        Ok(())
    }

    /// Enumerate all vertices with the double description method on the
    /// homogenization cone `{(y, t) : V y - b t >= 0, t >= 0}`.
    ///
    /// Supported for `dim <= 4`; the polytope must be bounded.
    pub fn enumerate_vertices(&self) -> Result<VertexSet> {
        const MAX_DIM: usize = 4;
        let d = self.dim();
        if d > MAX_DIM {
            return Err(Error::DimensionTooLarge { dim: d, max: MAX_DIM });
        }
        self.check_bounded()?;

        let mut vertices = self.double_description()?;
        self.polish_vertices(&mut vertices);
        dedupe_points(&mut vertices, 1e-8);
        vertices.sort_by(|a, b| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.partial_cmp(y).unwrap())
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        Ok(VertexSet { vertices })
    }

    fn double_description(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.dim();
        let n = d + 1;
        // Homogenized unit-normalized rows: [v_k, -b_k] and the t >= 0 row.
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(self.v.nrows() + 1);
        for k in 0..self.v.nrows() {
            let mut row: Vec<f64> = self.v.row(k).to_vec();
            row.push(-self.b[k]);
            let nrm = norm2(&row);
            for x in &mut row {
                *x /= nrm;
            }
            rows.push(row);
        }
        let mut t_row = vec![0.0; n];
        t_row[d] = 1.0;
        rows.push(t_row);

        // Greedy selection of n linearly independent rows for the seed cone.
        let total = rows.len();
        let mut init: Vec<usize> = Vec::with_capacity(n);
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            let mut resid = row.clone();
            for q in &basis {
                let c = dot(q, &resid);
                for (r, qi) in resid.iter_mut().zip(q) {
                    *r -= c * qi;
                }
            }
            let nrm = norm2(&resid);
            if nrm > 1e-9 {
                for r in &mut resid {
                    *r /= nrm;
                }
                basis.push(resid);
                init.push(i);
                if init.len() == n {
                    break;
                }
            }
        }
        if init.len() < n {
            // Rank-deficient homogenization means the feasible set contains a
            // line, which a bounded polytope cannot.
            return Err(Error::Unbounded { coord: 0 });
        }

        // Seed generators: columns of A0^{-1} generate {A0 x >= 0}.
        let a0 = Mat::from_rows(&init.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>());
        let mut gens: Vec<(Vec<f64>, Vec<bool>)> = Vec::new();
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let mut col = lu_solve(&a0, &e)
                .map_err(|_| Error::LpFailure("singular seed basis in double description".into()))?;
            let nrm = norm2(&col);
            for x in &mut col {
                *x /= nrm;
            }
            let zero = zero_set(&col, &rows, &init);
            gens.push((col, zero));
        }

        let processed_order: Vec<usize> = init
            .iter()
            .copied()
            .chain((0..total).filter(|i| !init.contains(i)))
            .collect();

        for step in n..total {
            let i = processed_order[step];
            let row = &rows[i];
            let mut plus: Vec<usize> = Vec::new();
            let mut minus: Vec<usize> = Vec::new();
            let mut keep: Vec<(Vec<f64>, Vec<bool>)> = Vec::new();
            let vals: Vec<f64> = gens.iter().map(|(x, _)| dot(row, x)).collect();
            for (gi, val) in vals.iter().enumerate() {
                if *val > ON_BOUNDARY_TOL {
                    plus.push(gi);
                } else if *val < -ON_BOUNDARY_TOL {
                    minus.push(gi);
                }
            }
            let active: &[usize] = &processed_order[..step];
            for (gi, (x, mut z)) in gens.iter().cloned().enumerate() {
                if vals[gi] >= -ON_BOUNDARY_TOL {
                    if vals[gi].abs() <= ON_BOUNDARY_TOL {
                        z[i] = true;
                    }
                    keep.push((x, z));
                }
            }
            for &p in &plus {
                for &m in &minus {
                    if !adjacent(&gens, p, m, active) {
                        continue;
                    }
                    let (xp, _) = &gens[p];
                    let (xm, _) = &gens[m];
                    let mut w: Vec<f64> = xp
                        .iter()
                        .zip(xm)
                        .map(|(a, b)| vals[p] * b - vals[m] * a)
                        .collect();
                    let nrm = norm2(&w);
                    if nrm < 1e-12 {
                        continue;
                    }
                    for x in &mut w {
                        *x /= nrm;
                    }
                    let mut z = zero_set(&w, &rows, &processed_order[..=step]);
                    z[i] = true;
                    keep.push((w, z));
                }
            }
            gens = keep;
        }

        let mut vertices = Vec::new();
        for (x, _) in gens {
            let t = x[d];
            if t <= ON_BOUNDARY_TOL {
                // A genuine ray contradicts the LP boundedness check above.
                return Err(Error::Unbounded { coord: 0 });
            }
            vertices.push(x[..d].iter().map(|v| v / t).collect());
        }
        Ok(vertices)
    }

    /// Re-solve each vertex from its active constraint rows to remove the
    /// accumulated rotation error of the double description combinations.
    fn polish_vertices(&self, vertices: &mut [Vec<f64>]) {
        for y in vertices.iter_mut() {
            let active: Vec<usize> = (0..self.v.nrows())
                .filter(|&k| (dot(self.v.row(k), y) - self.b[k]).abs() <= 1e-6)
                .collect();
            if active.len() < self.dim() {
                continue;
            }
            let a = Mat::from_rows(
                &active
                    .iter()
                    .map(|&k| self.v.row(k).to_vec())
                    .collect::<Vec<_>>(),
            );
            let rhs: Vec<f64> = active.iter().map(|&k| self.b[k]).collect();
            if let Ok(refined) = lstsq(&a, &rhs, 1e-10) {
                if refined
                    .iter()
                    .zip(y.iter())
                    .all(|(a, b)| (a - b).abs() <= 1e-6)
                {
                    y.copy_from_slice(&refined);
                }
            }
        }
    }

    /// Vertices lying on boundary `k` of a previously enumerated vertex set.
    pub fn vertices_on_boundary<'a>(&self, vs: &'a VertexSet, k: usize) -> Vec<&'a Vec<f64>> {
        vs.vertices
            .iter()
            .filter(|y| (dot(self.v.row(k), y) - self.b[k]).abs() <= ON_BOUNDARY_TOL)
            .collect()
    }

    /// Compute one rho*-interior anchor per boundary: the midpoint of the
    /// boundary's vertices pushed as far inward along the constraint normal as
    /// the shrunken polytope `{V y >= b + rho* 1}` allows.
    pub fn interior_points(&self, rho_star: f64) -> Result<InteriorPointSet> {
        if !(rho_star > 0.0) {
            return Err(Error::InvalidRhoStar { rho_star });
        }
        let shrunk_b: Vec<f64> = self.b.iter().map(|bk| bk + rho_star).collect();
        if lp::feasible_point(&self.v, &shrunk_b)?.is_none() {
            return Err(Error::RhoStarTooLarge { rho_star });
        }
        let vs = self.enumerate_vertices()?;
        let d = self.dim();
        let mut zeta = Vec::with_capacity(self.v.nrows());
        for k in 0..self.v.nrows() {
            let on_k = self.vertices_on_boundary(&vs, k);
            if on_k.is_empty() {
                return Err(Error::DegenerateBoundary { row: k });
            }
            let mut midpoint = vec![0.0; d];
            for y in &on_k {
                for (mi, yi) in midpoint.iter_mut().zip(y.iter()) {
                    *mi += yi;
                }
            }
            for mi in &mut midpoint {
                *mi /= on_k.len() as f64;
            }

            match self.push_inward(&midpoint, k, &shrunk_b) {
                Some(z) => zeta.push(z),
                None => {
                    // The inward ray from this midpoint misses the shrunken
                    // polytope (a degenerate geometry); fall back to the point
                    // of the shrunken polytope deepest along the normal.
                    log::warn!(
                        "interior_points: ray search failed on boundary {k}; using LP fallback"
                    );
                    let obj = self.v.row(k).to_vec();
                    match lp::maximize(&obj, &self.v, &shrunk_b)? {
                        LpOutcome::Optimal { x, .. } => zeta.push(x),
                        _ => return Err(Error::RhoStarTooLarge { rho_star }),
                    }
                }
            }
        }
        let set = InteriorPointSet { rho_star, zeta };
        debug_assert!(set.zeta.iter().all(|z| {
            self.distances(z)
                .iter()
                .all(|&rho| rho >= rho_star - 1e-7)
        }));
        Ok(set)
    }

    /// Solve `c* = argmax {c > 0 : V (c v_k + m) >= b_shrunk}` in closed form
    /// (the constraint system is linear in the scalar `c`).
    fn push_inward(&self, midpoint: &[f64], k: usize, shrunk_b: &[f64]) -> Option<Vec<f64>> {
        let vk = self.v.row(k);
        let mut lower = 0.0f64;
        let mut upper = f64::INFINITY;
        for i in 0..self.v.nrows() {
            let gamma = dot(self.v.row(i), vk);
            let rhs = shrunk_b[i] - dot(self.v.row(i), midpoint);
            if gamma > 1e-12 {
                lower = lower.max(rhs / gamma);
            } else if gamma < -1e-12 {
                upper = upper.min(rhs / gamma);
            } else if rhs > 1e-9 {
                return None;
            }
        }
        if !upper.is_finite() || upper < lower - 1e-12 || upper <= 0.0 {
            return None;
        }
        let c_star = upper;
        let z: Vec<f64> = midpoint
            .iter()
            .zip(vk)
            .map(|(m, v)| m + c_star * v)
            .collect();
        Some(z)
    }

    /// Maximum pairwise vertex distance. Used to scale rho* defaults.
    pub fn diameter(&self) -> Result<f64> {
        let vs = self.enumerate_vertices()?;
        let mut best = 0.0f64;
        for (i, a) in vs.vertices.iter().enumerate() {
            for b in &vs.vertices[i + 1..] {
                let dist = norm2(&crate::linalg::sub(a, b));
                best = best.max(dist);
            }
        }
        Ok(best)
    }
}

fn zero_set(x: &[f64], rows: &[Vec<f64>], indices: &[usize]) -> Vec<bool> {
    let mut z = vec![false; rows.len()];
    for &i in indices {
        if dot(&rows[i], x).abs() <= ON_BOUNDARY_TOL {
            z[i] = true;
        }
    }
    z
}

/// Combinatorial adjacency test: generators `p` and `m` are adjacent iff no
/// third generator's zero set contains the intersection of theirs.
fn adjacent(gens: &[(Vec<f64>, Vec<bool>)], p: usize, m: usize, active: &[usize]) -> bool {
    let zp = &gens[p].1;
    let zm = &gens[m].1;
    'outer: for (gi, (_, z)) in gens.iter().enumerate() {
        if gi == p || gi == m {
            continue;
        }
        for &i in active {
            if zp[i] && zm[i] && !z[i] {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

fn dedupe_points(points: &mut Vec<Vec<f64>>, tol: f64) {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(points.len());
    'next: for p in points.drain(..) {
        for q in &out {
            if p.iter().zip(q).all(|(a, b)| (a - b).abs() <= tol) {
                continue 'next;
            }
        }
        out.push(p);
    }
    *points = out;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub fn unit_square() -> Polytope {
        Polytope::new(
            Mat::from_rows(&[
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![-1.0, 0.0],
                vec![0.0, -1.0],
            ]),
            vec![0.0, 0.0, -1.0, -1.0],
        )
        .unwrap()
    }

    fn simplex() -> Polytope {
        // x >= 0, y >= 0, x + y <= 1
        Polytope::new(
            Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, -1.0]]),
            vec![0.0, 0.0, -1.0],
        )
        .unwrap()
    }

    #[test]
    fn new_rescales_rows_to_unit_norm() {
        let p = Polytope::new(Mat::from_rows(&[vec![2.0, 0.0]]), vec![2.0]).unwrap();
        assert_abs_diff_eq!(p.normal(0)[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.offsets()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn new_accepts_strip_and_keeps_unit_rows() {
        let p = Polytope::new(
            Mat::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]),
            vec![0.0, -1.0],
        )
        .unwrap();
        assert_eq!(p.n_constraints(), 2);
        assert_abs_diff_eq!(p.normal(1)[0], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn new_rejects_empty() {
        let err = Polytope::new(
            Mat::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]),
            vec![1.0, 1.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyPolytope));
    }

    #[test]
    fn new_rejects_zero_row() {
        let err = Polytope::new(Mat::from_rows(&[vec![0.0, 1e-15]]), vec![0.0]).unwrap_err();
        assert!(matches!(err, Error::ZeroRow { .. }));
    }

    #[test]
    fn distance_signed() {
        let p = Polytope::new(Mat::from_rows(&[vec![1.0, 0.0]]), vec![-1.0]).unwrap();
        assert_abs_diff_eq!(p.distance(&[0.0, 0.0], 0).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.distance(&[-1.0, 5.0], 0).unwrap(), 0.0, epsilon = 1e-15);
        let q = Polytope::new(Mat::from_rows(&[vec![1.0, 0.0]]), vec![0.0]).unwrap();
        assert_abs_diff_eq!(q.distance(&[-0.5, 3.0], 0).unwrap(), -0.5, epsilon = 1e-15);
        assert!(matches!(
            q.distance(&[0.0, 0.0], 5),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn contains_boundary_counts() {
        let p = unit_square();
        assert!(p.contains(&[0.5, 0.5], 0.0));
        assert!(!p.contains(&[1.0001, 0.5], 1e-9));
        assert!(p.contains(&[1.0, 0.5], 0.0));
    }

    #[test]
    fn redundant_bound_removed() {
        // {x >= 0, x >= -1} -> {x >= 0}
        let p = Polytope::new(Mat::from_rows(&[vec![1.0], vec![1.0]]), vec![0.0, -1.0]).unwrap();
        let r = p.eliminate_redundant().unwrap();
        assert_eq!(r.n_constraints(), 1);
        assert_abs_diff_eq!(r.offsets()[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn tight_square_unchanged() {
        let p = unit_square();
        let r = p.eliminate_redundant().unwrap();
        assert_eq!(r.n_constraints(), 4);
    }

    #[test]
    fn unit_square_vertices() {
        let vs = unit_square().enumerate_vertices().unwrap();
        let expect = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        assert_eq!(vs.vertices.len(), 4);
        for (v, e) in vs.vertices.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(v[0], e[0], epsilon = 1e-9);
            assert_abs_diff_eq!(v[1], e[1], epsilon = 1e-9);
        }
    }

    #[test]
    fn simplex_has_three_vertices() {
        let vs = simplex().enumerate_vertices().unwrap();
        assert_eq!(vs.vertices.len(), 3);
    }

    #[test]
    fn unbounded_detected() {
        let p = Polytope::new(Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]), vec![
            0.0, 0.0,
        ])
        .unwrap();
        assert!(matches!(
            p.enumerate_vertices(),
            Err(Error::Unbounded { .. })
        ));
    }

    #[test]
    fn dimension_guard() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|k| {
                let mut r = vec![0.0; 5];
                r[k % 5] = if k < 5 { 1.0 } else { -1.0 };
                r
            })
            .collect();
        let b = vec![0.0, 0.0, 0.0, 0.0, 0.0, -1.0, -1.0, -1.0, -1.0, -1.0];
        let p = Polytope::new(Mat::from_rows(&rows), b).unwrap();
        assert!(matches!(
            p.enumerate_vertices(),
            Err(Error::DimensionTooLarge { dim: 5, .. })
        ));
    }

    #[test]
    fn interior_points_unit_square() {
        let p = unit_square();
        let set = p.interior_points(0.1).unwrap();
        // boundary x >= 0: midpoint (0, 0.5), pushed to (0.9, 0.5)
        assert_abs_diff_eq!(set.zeta[0][0], 0.9, epsilon = 1e-9);
        assert_abs_diff_eq!(set.zeta[0][1], 0.5, epsilon = 1e-9);
        for z in &set.zeta {
            for &rho in &p.distances(z) {
                assert!(rho >= 0.1 - 1e-9);
            }
        }
    }

    #[test]
    fn interior_points_require_positive_rho() {
        let p = unit_square();
        assert!(matches!(
            p.interior_points(0.0),
            Err(Error::InvalidRhoStar { .. })
        ));
        assert!(matches!(
            p.interior_points(10.0),
            Err(Error::RhoStarTooLarge { .. })
        ));
    }

    #[test]
    fn interior_points_simplex_diagonal() {
        let p = simplex();
        let set = p.interior_points(0.05).unwrap();
        // boundary x + y <= 1 is row 2; midpoint (0.5, 0.5), normal -(1,1)/sqrt(2)
        let z = &set.zeta[2];
        let c = (0.5 - z[0]) * 2.0f64.sqrt();
        assert!(c > 0.0);
        assert_abs_diff_eq!(z[0], z[1], epsilon = 1e-9);
        for &rho in &p.distances(z) {
            assert!(rho >= 0.05 - 1e-9);
        }
    }

    #[test]
    fn vertex_set_invariants() {
        let p = simplex();
        let vs = p.enumerate_vertices().unwrap();
        for y in &vs.vertices {
            assert!(p.contains(y, 1e-9));
            let active = p
                .distances(y)
                .iter()
                .filter(|rho| rho.abs() <= 1e-9)
                .count();
            assert!(active >= p.dim());
        }
    }

    #[test]
    fn serde_round_trip() {
        let p = unit_square();
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"V\""));
        let q: Polytope = serde_json::from_str(&json).unwrap();
        assert_eq!(q.n_constraints(), 4);
        assert_eq!(q.dim(), 2);
    }
}
