//! Bounded open sets, Cartesian cell grids and moving-plane bookkeeping.
//!
//! Domains are unions of Ball/Rect/Ellipse primitives, optionally inflated by a
//! Minkowski sum with a ball. All operations are pure; grids carry the lattice
//! metadata needed to reflect cells exactly (integer index arithmetic).

use thiserror::Error;

pub type Point<const N: usize> = [f64; N];

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("no cell center lies inside the domain")]
    EmptyGrid,
    #[error("alignment plane is not axis-parallel")]
    PlaneNotAxisParallel,
    #[error("alignment planes on axis {axis} are incompatible with cell size")]
    IncompatibleAlignment { axis: usize },
    #[error("primitive has nonpositive extent")]
    DegeneratePrimitive,
}

pub fn dot<const N: usize>(a: &Point<N>, b: &Point<N>) -> f64 {
    (0..N).map(|k| a[k] * b[k]).sum()
}

pub fn sub<const N: usize>(a: &Point<N>, b: &Point<N>) -> Point<N> {
    std::array::from_fn(|k| a[k] - b[k])
}

pub fn norm<const N: usize>(a: &Point<N>) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy<const N: usize>(a: &Point<N>, t: f64, d: &Point<N>) -> Point<N> {
    std::array::from_fn(|k| a[k] + t * d[k])
}

/// Geometric primitive. In 1D a ball and a rect both degenerate to an interval.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive<const N: usize> {
    Ball { center: Point<N>, radius: f64 },
    Rect { lo: Point<N>, hi: Point<N> },
    Ellipse { center: Point<N>, semi_axes: Point<N> },
}

impl<const N: usize> Primitive<N> {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = match self {
            Primitive::Ball { radius, .. } => *radius > 0.0,
            Primitive::Rect { lo, hi } => (0..N).all(|k| hi[k] > lo[k]),
            Primitive::Ellipse { semi_axes, .. } => semi_axes.iter().all(|&a| a > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(GeometryError::DegeneratePrimitive)
        }
    }

    pub fn contains(&self, x: &Point<N>) -> bool {
        match self {
            Primitive::Ball { center, radius } => norm(&sub(x, center)) < *radius,
            Primitive::Rect { lo, hi } => (0..N).all(|k| x[k] > lo[k] && x[k] < hi[k]),
            Primitive::Ellipse { center, semi_axes } => {
                let s: f64 = (0..N)
                    .map(|k| {
                        let t = (x[k] - center[k]) / semi_axes[k];
                        t * t
                    })
                    .sum();
                s < 1.0
            }
        }
    }

    /// Euclidean distance from `x` to the closed primitive (0 inside).
    pub fn distance(&self, x: &Point<N>) -> f64 {
        match self {
            Primitive::Ball { center, radius } => (norm(&sub(x, center)) - radius).max(0.0),
            Primitive::Rect { lo, hi } => {
                let mut acc = 0.0;
                for k in 0..N {
                    let d = (lo[k] - x[k]).max(0.0).max(x[k] - hi[k]);
                    acc += d * d;
                }
                acc.sqrt()
            }
            Primitive::Ellipse { center, semi_axes } => {
                ellipse_distance(x, center, semi_axes)
            }
        }
    }

    /// Support value sup { x·e : x in primitive }.
    pub fn support(&self, e: &Point<N>) -> f64 {
        match self {
            Primitive::Ball { center, radius } => dot(center, e) + radius * norm(e),
            Primitive::Rect { lo, hi } => (0..N)
                .map(|k| if e[k] >= 0.0 { hi[k] * e[k] } else { lo[k] * e[k] })
                .sum(),
            Primitive::Ellipse { center, semi_axes } => {
                let mut s = 0.0;
                for k in 0..N {
                    let t = semi_axes[k] * e[k];
                    s += t * t;
                }
                dot(center, e) + s.sqrt()
            }
        }
    }

    /// Intersection of the line x + t d with the (convex) primitive, as the
    /// unclipped parameter interval t0 < t1. |d| must be 1.
    pub fn ray_hit(&self, x: &Point<N>, d: &Point<N>) -> Option<(f64, f64)> {
        match self {
            Primitive::Ball { center, radius } => {
                let pc = sub(center, x);
                let b = dot(&pc, d);
                let disc = b * b + radius * radius - dot(&pc, &pc);
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some((b - s, b + s))
            }
            Primitive::Rect { lo, hi } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for k in 0..N {
                    if d[k].abs() < 1e-300 {
                        if x[k] <= lo[k] || x[k] >= hi[k] {
                            return None;
                        }
                    } else {
                        let a = (lo[k] - x[k]) / d[k];
                        let b = (hi[k] - x[k]) / d[k];
                        t0 = t0.max(a.min(b));
                        t1 = t1.min(a.max(b));
                    }
                }
                if t1 <= t0 {
                    None
                } else {
                    Some((t0, t1))
                }
            }
            Primitive::Ellipse { center, semi_axes } => {
                // scale to the unit ball
                let mut u = [0.0; N];
                let mut v = [0.0; N];
                for k in 0..N {
                    u[k] = (x[k] - center[k]) / semi_axes[k];
                    v[k] = d[k] / semi_axes[k];
                }
                let a = dot(&v, &v);
                let b = dot(&u, &v);
                let c = dot(&u, &u) - 1.0;
                let disc = b * b - a * c;
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some(((-b - s) / a, (-b + s) / a))
            }
        }
    }
}

/// Closest-point distance from `x` to a solid ellipse. Newton on the parametric
/// angle, capped at 64 iterations with a bisection fallback on the stationarity
/// residual.
fn ellipse_distance<const N: usize>(
    x: &Point<N>,
    center: &Point<N>,
    semi_axes: &Point<N>,
) -> f64 {
    let mut s = 0.0;
    for k in 0..N {
        let t = (x[k] - center[k]) / semi_axes[k];
        s += t * t;
    }
    if s <= 1.0 {
        return 0.0;
    }
    if N == 1 {
        return (x[0] - center[0]).abs() - semi_axes[0];
    }
    // N == 2 from here; reduce to the first quadrant.
    let (a, b) = (semi_axes[0], semi_axes[1]);
    let px = (x[0] - center[0]).abs();
    let py = (x[1] - center[1]).abs();
    let f = |phi: f64| {
        let (sn, cs) = phi.sin_cos();
        -(px - a * cs) * a * sn + (py - b * sn) * b * cs
    };
    let mut phi: f64 = (a * py).atan2(b * px);
    let mut converged = false;
    for _ in 0..64 {
        let (sn, cs) = phi.sin_cos();
        let fv = -(px - a * cs) * a * sn + (py - b * sn) * b * cs;
        let fp = -(px - a * cs) * a * cs - (py - b * sn) * b * sn
            - (a * sn) * (a * sn)
            - (b * cs) * (b * cs);
        let step = fv / fp;
        let next = (phi - step).clamp(0.0, std::f64::consts::FRAC_PI_2);
        if (next - phi).abs() < 1e-14 {
            phi = next;
            converged = true;
            break;
        }
        phi = next;
    }
    if !converged {
        // bisection fallback: f is decreasing in phi on [0, pi/2] for p in Q1
        let (mut lo, mut hi) = (0.0f64, std::f64::consts::FRAC_PI_2);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        phi = 0.5 * (lo + hi);
    }
    let (sn, cs) = phi.sin_cos();
    ((px - a * cs).powi(2) + (py - b * sn).powi(2)).sqrt()
}

/// Bounded open set: a union of primitives, or the Minkowski sum of that union
/// with an open ball (`x` belongs iff dist(x, base) < radius). Disconnected
/// unions are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain<const N: usize> {
    pub primitives: Vec<Primitive<N>>,
    pub minkowski_radius: Option<f64>,
}

impl<const N: usize> Domain<N> {
    pub fn union(primitives: Vec<Primitive<N>>) -> Result<Self, GeometryError> {
        for p in &primitives {
            p.validate()?;
        }
        if primitives.is_empty() {
            return Err(GeometryError::DegeneratePrimitive);
        }
        Ok(Domain { primitives, minkowski_radius: None })
    }

    pub fn ball(center: Point<N>, radius: f64) -> Self {
        Domain::union(vec![Primitive::Ball { center, radius }]).expect("positive radius")
    }

    pub fn rect(lo: Point<N>, hi: Point<N>) -> Self {
        Domain::union(vec![Primitive::Rect { lo, hi }]).expect("nonempty rect")
    }

    /// Minkowski sum of `base` (a union of primitives) with the open ball B_R.
    pub fn minkowski(base: Domain<N>, radius: f64) -> Result<Self, GeometryError> {
        if radius <= 0.0 {
            return Err(GeometryError::DegeneratePrimitive);
        }
        Ok(Domain { primitives: base.primitives, minkowski_radius: Some(radius) })
    }

    /// The inner set G of a Minkowski-mode domain (the primitive union).
    pub fn base(&self) -> Domain<N> {
        Domain { primitives: self.primitives.clone(), minkowski_radius: None }
    }

    pub fn contains(&self, x: &Point<N>) -> bool {
        match self.minkowski_radius {
            None => self.primitives.iter().any(|p| p.contains(x)),
            Some(r) => self.distance_to_base(x) < r,
        }
    }

    /// Distance to the closure of the primitive union.
    pub fn distance_to_base(&self, x: &Point<N>) -> f64 {
        self.primitives
            .iter()
            .map(|p| p.distance(x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn support(&self, e: &Point<N>) -> f64 {
        let s = self
            .primitives
            .iter()
            .map(|p| p.support(e))
            .fold(f64::NEG_INFINITY, f64::max);
        s + self.minkowski_radius.unwrap_or(0.0) * norm(e)
    }

    pub fn bounding_box(&self) -> (Point<N>, Point<N>) {
        let mut lo = [f64::INFINITY; N];
        let mut hi = [f64::NEG_INFINITY; N];
        for k in 0..N {
            let mut e = [0.0; N];
            e[k] = 1.0;
            hi[k] = self.support(&e);
            e[k] = -1.0;
            lo[k] = -self.support(&e);
        }
        (lo, hi)
    }

    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        norm(&sub(&hi, &lo))
    }

    /// Maximal open radial intervals (r_in, r_out) of { r in (0, r_max) :
    /// x + r theta in domain }. Exact for Ball/Rect/Ellipse primitives;
    /// bisection-refined for Minkowski mode (tolerance 1e-10 * r_max).
    pub fn ray_segments(&self, x: &Point<N>, theta: &Point<N>, r_max: f64) -> Vec<(f64, f64)> {
        assert!(r_max > 0.0, "r_max must be positive");
        match self.minkowski_radius {
            None => {
                let mut ivals: Vec<(f64, f64)> = Vec::new();
                for p in &self.primitives {
                    if let Some((t0, t1)) = p.ray_hit(x, theta) {
                        let a = t0.max(0.0);
                        let b = t1.min(r_max);
                        if b > a {
                            ivals.push((a, b));
                        }
                    }
                }
                merge_intervals(ivals)
            }
            Some(r) => self.minkowski_ray_segments(x, theta, r_max, r),
        }
    }

    /// The single primitive of a plain one-primitive union, if that is what
    /// this domain is (fast paths key off this).
    pub fn single_primitive(&self) -> Option<&Primitive<N>> {
        if self.minkowski_radius.is_none() && self.primitives.len() == 1 {
            Some(&self.primitives[0])
        } else {
            None
        }
    }

    fn minkowski_ray_segments(
        &self,
        x: &Point<N>,
        theta: &Point<N>,
        r_max: f64,
        r: f64,
    ) -> Vec<(f64, f64)> {
        let tol = 1e-10 * r_max;
        let g = |t: f64| self.distance_to_base(&axpy(x, t, theta)) - r;
        let refine = |mut lo: f64, mut hi: f64| {
            // sign change of g in (lo, hi); keep the side conventions of the caller
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                if g(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        if self.primitives.len() == 1 && self.contains(x) {
            // convex fast path: single primitive bases give convex sums, so the
            // ray from an interior point exits exactly once
            let mut hi = r_max;
            if g(r_max) < 0.0 {
                return vec![(0.0, r_max)];
            }
            let exit = {
                let lo = 0.0;
                // safeguarded Newton on g with bisection fallback
                let mut a = lo;
                let mut b = hi;
                let mut t = 0.5 * (a + b);
                for _ in 0..200 {
                    let gv = g(t);
                    if gv < 0.0 {
                        a = t;
                    } else {
                        b = t;
                    }
                    if b - a <= tol {
                        break;
                    }
                    // secant-ish step using a small finite difference
                    let dt = (b - a) * 0.5;
                    t = (t - gv * dt / (g(t + dt.min(b - t)) - gv + f64::MIN_POSITIVE))
                        .clamp(a + 0.25 * (b - a), b - 0.25 * (b - a));
                    if !(t > a && t < b) {
                        t = 0.5 * (a + b);
                    }
                }
                hi = 0.5 * (a + b);
                hi
            };
            return vec![(0.0, exit)];
        }
        // generic scan + bisection
        let step = (r / 4.0).min(r_max / 64.0).max(tol);
        let mut ivals = Vec::new();
        let mut t = 0.0f64;
        let mut inside = self.contains(x);
        let mut start = if inside { Some(0.0) } else { None };
        while t < r_max {
            let tn = (t + step).min(r_max);
            let now = g(tn) < 0.0;
            if now != inside {
                let c = refine(if now { tn } else { t }, if now { t } else { tn });
                // refine() keeps g<0 on lo side; recover orientation
                let cross = if now {
                    // outside -> inside: bracket was (t, tn) with g(t)>=0
                    let (mut lo, mut hi) = (t, tn);
                    while hi - lo > tol {
                        let mid = 0.5 * (lo + hi);
                        if g(mid) < 0.0 {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    0.5 * (lo + hi)
                } else {
                    c
                };
                if now {
                    start = Some(cross);
                } else if let Some(s) = start.take() {
                    ivals.push((s, cross));
                }
                inside = now;
            }
            t = tn;
        }
        if let Some(s) = start {
            ivals.push((s, r_max));
        }
        merge_intervals(ivals)
    }

    /// Lower bound for the distance from an interior point to the boundary
    /// (0 outside the domain).
    pub fn inside_depth(&self, x: &Point<N>) -> f64 {
        match self.minkowski_radius {
            Some(r) => {
                let d = self.distance_to_base(x);
                (r - d).max(0.0)
            }
            None => self
                .primitives
                .iter()
                .map(|p| match p {
                    Primitive::Ball { center, radius } => radius - norm(&sub(x, center)),
                    Primitive::Rect { lo, hi } => (0..N)
                        .map(|k| (x[k] - lo[k]).min(hi[k] - x[k]))
                        .fold(f64::INFINITY, f64::min),
                    Primitive::Ellipse { center, semi_axes } => {
                        let rho: f64 = (0..N)
                            .map(|k| {
                                let t = (x[k] - center[k]) / semi_axes[k];
                                t * t
                            })
                            .sum::<f64>()
                            .sqrt();
                        let bmin = semi_axes.iter().copied().fold(f64::INFINITY, f64::min);
                        (1.0 - rho) * bmin
                    }
                })
                .fold(0.0f64, f64::max)
                .max(0.0),
        }
    }

    /// Angles (in [0, 2pi)) at which the per-angle ray structure seen from `x`
    /// can lose smoothness: primitive silhouettes, rect corners, and pairwise
    /// ball-ball boundary crossings. Only meaningful for N = 2; Minkowski-mode
    /// domains return an empty set (handled by plain equispaced quadrature).
    pub fn angular_breakpoints(&self, x: &Point<N>) -> Vec<f64> {
        if N != 2 || self.minkowski_radius.is_some() {
            return vec![];
        }
        let mut angles: Vec<f64> = Vec::new();
        let mut push = |a: f64| {
            let tau = std::f64::consts::TAU;
            angles.push(a.rem_euclid(tau));
        };
        for p in &self.primitives {
            match p {
                Primitive::Ball { center, radius } => {
                    let d = sub(center, x);
                    let dist = norm(&d);
                    if dist > *radius {
                        let beta = d[1].atan2(d[0]);
                        let delta = (radius / dist).asin();
                        push(beta + delta);
                        push(beta - delta);
                    }
                }
                Primitive::Rect { lo, hi } => {
                    for &cx in &[lo[0], hi[0]] {
                        for &cy in &[lo[1], hi[1]] {
                            push((cy - x[1]).atan2(cx - x[0]));
                        }
                    }
                }
                Primitive::Ellipse { center, semi_axes } => {
                    let (a, b) = (semi_axes[0], semi_axes[1]);
                    let u0 = (x[0] - center[0]) / a;
                    let u1 = (x[1] - center[1]) / b;
                    let m = u0 * u0 + u1 * u1 - 1.0;
                    if m > 0.0 {
                        // tangency: (u.d~)^2 = |d~|^2 m with d = (cos,sin)
                        let qa = u0 * u0 / (a * a) - m / (a * a);
                        let qb = 2.0 * u0 * u1 / (a * b);
                        let qc = u1 * u1 / (b * b) - m / (b * b);
                        // qa c^2 + qb c s + qc s^2 = 0
                        for t in quad_roots(qc, qb, qa) {
                            let phi = t.atan();
                            push(phi);
                            push(phi + std::f64::consts::PI);
                        }
                        if qc.abs() < 1e-14 * (qa.abs() + qb.abs() + 1e-300) {
                            push(std::f64::consts::FRAC_PI_2);
                            push(-std::f64::consts::FRAC_PI_2);
                        }
                    }
                }
            }
        }
        // ball-ball boundary intersection points (kinks of union crossings)
        for i in 0..self.primitives.len() {
            for j in (i + 1)..self.primitives.len() {
                if let (
                    Primitive::Ball { center: c1, radius: r1 },
                    Primitive::Ball { center: c2, radius: r2 },
                ) = (&self.primitives[i], &self.primitives[j])
                {
                    for p in circle_intersections(c1, *r1, c2, *r2) {
                        push((p[1] - x[1]).atan2(p[0] - x[0]));
                    }
                }
            }
        }
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        angles.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        angles
    }
}

impl Domain<1> {
    /// The maximal open intervals of a one-dimensional set (merged primitive
    /// extents, inflated in Minkowski mode).
    pub fn intervals(&self) -> Vec<(f64, f64)> {
        intervals_1d(self)
    }
}

/// 1D interval decomposition; meaningful only for N = 1 (reads coordinate 0).
pub(crate) fn intervals_1d<const N: usize>(domain: &Domain<N>) -> Vec<(f64, f64)> {
    debug_assert_eq!(N, 1);
    let r = domain.minkowski_radius.unwrap_or(0.0);
    let raw: Vec<(f64, f64)> = domain
        .primitives
        .iter()
        .map(|p| match p {
            Primitive::Ball { center, radius } => (center[0] - radius, center[0] + radius),
            Primitive::Rect { lo, hi } => (lo[0], hi[0]),
            Primitive::Ellipse { center, semi_axes } => {
                (center[0] - semi_axes[0], center[0] + semi_axes[0])
            }
        })
        .map(|(a, b)| (a - r, b + r))
        .collect();
    merge_intervals(raw)
}

/// Roots t of qc t^2 + qb t + qa = 0 (used for tanphi in the tangency quadratic).
fn quad_roots(qc: f64, qb: f64, qa: f64) -> Vec<f64> {
    if qc.abs() < 1e-300 {
        if qb.abs() < 1e-300 {
            return vec![];
        }
        return vec![-qa / qb];
    }
    let disc = qb * qb - 4.0 * qc * qa;
    if disc < 0.0 {
        return vec![];
    }
    let s = disc.sqrt();
    vec![(-qb - s) / (2.0 * qc), (-qb + s) / (2.0 * qc)]
}

fn circle_intersections<const N: usize>(
    c1: &Point<N>,
    r1: f64,
    c2: &Point<N>,
    r2: f64,
) -> Vec<Point<N>> {
    if N != 2 {
        return vec![];
    }
    let d = sub(c2, c1);
    let l = norm(&d);
    if l >= r1 + r2 || l <= (r1 - r2).abs() || l == 0.0 {
        return vec![];
    }
    let a = (r1 * r1 - r2 * r2 + l * l) / (2.0 * l);
    let h2 = r1 * r1 - a * a;
    if h2 <= 0.0 {
        return vec![];
    }
    let h = h2.sqrt();
    let ex = [d[0] / l, d[1] / l];
    let mid = [c1[0] + a * ex[0], c1[1] + a * ex[1]];
    let mut p1 = [0.0; N];
    let mut p2 = [0.0; N];
    p1[0] = mid[0] - h * ex[1];
    p1[1] = mid[1] + h * ex[0];
    p2[0] = mid[0] + h * ex[1];
    p2[1] = mid[1] - h * ex[0];
    vec![p1, p2]
}

fn merge_intervals(mut ivals: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    ivals.retain(|(a, b)| b > a);
    ivals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (a, b) in ivals {
        match out.last_mut() {
            Some((_, pb)) if a <= *pb => *pb = pb.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Reflection x -> x - 2 (x·e - lambda) e across the hyperplane { x·e = lambda }.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionFrame<const N: usize> {
    pub e: Point<N>,
    pub lambda: f64,
}

impl<const N: usize> ReflectionFrame<N> {
    pub fn new(e: Point<N>, lambda: f64) -> Self {
        let n = norm(&e);
        assert!(n > 0.0, "reflection direction must be nonzero");
        let e = std::array::from_fn(|k| e[k] / n);
        ReflectionFrame { e, lambda }
    }

    /// The lattice axis if e = +/- e_k, else None.
    pub fn axis(&self) -> Option<usize> {
        let mut axis = None;
        for k in 0..N {
            if (self.e[k].abs() - 1.0).abs() < 1e-12 {
                axis = Some(k);
            } else if self.e[k].abs() > 1e-12 {
                return None;
            }
        }
        axis
    }
}

pub fn reflect<const N: usize>(x: &Point<N>, frame: &ReflectionFrame<N>) -> Point<N> {
    let t = 2.0 * (dot(x, &frame.e) - frame.lambda);
    std::array::from_fn(|k| x[k] - t * frame.e[k])
}

/// Uniform cell decomposition of a domain: closed cubes of side `h` on the
/// lattice `origin + h Z^N`, one cell per lattice point whose center lies in
/// the (open) domain.
#[derive(Debug, Clone)]
pub struct Grid<const N: usize> {
    pub h: f64,
    pub origin: Point<N>,
    pub domain: Domain<N>,
    centers: Vec<Point<N>>,
    coords: Vec<[i64; N]>,
    index: std::collections::HashMap<[i64; N], usize>,
    pub symmetry_planes: Vec<ReflectionFrame<N>>,
}

impl<const N: usize> Grid<N> {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, i: usize) -> Point<N> {
        self.centers[i]
    }

    pub fn centers(&self) -> &[Point<N>] {
        &self.centers
    }

    pub fn coords(&self, i: usize) -> [i64; N] {
        self.coords[i]
    }

    /// Cell measure h^N.
    pub fn cell_measure(&self) -> f64 {
        self.h.powi(N as i32)
    }

    pub fn cell_box(&self, i: usize) -> (Point<N>, Point<N>) {
        let k = self.coords[i];
        let lo = std::array::from_fn(|d| self.origin[d] + k[d] as f64 * self.h);
        let hi = std::array::from_fn(|d| self.origin[d] + (k[d] + 1) as f64 * self.h);
        (lo, hi)
    }

    pub fn index_of_coords(&self, k: &[i64; N]) -> Option<usize> {
        self.index.get(k).copied()
    }

    /// Lattice coordinates of the cell containing `x` (regardless of membership).
    pub fn coords_of_point(&self, x: &Point<N>) -> [i64; N] {
        std::array::from_fn(|d| ((x[d] - self.origin[d]) / self.h).floor() as i64)
    }

    /// Index of the grid cell whose center is closest to `x`, searching the
    /// surrounding 4^N lattice neighborhood. None when the cover is too far.
    pub fn nearest_cell(&self, x: &Point<N>) -> Option<usize> {
        let base = self.coords_of_point(x);
        let mut best: Option<(f64, usize)> = None;
        let mut offs = vec![[0i64; N]];
        for d in 0..N {
            let mut next = Vec::with_capacity(offs.len() * 4);
            for o in offs {
                for s in -1..=2i64 {
                    let mut q = o;
                    q[d] = s;
                    next.push(q);
                }
            }
            offs = next;
        }
        for o in offs {
            let k: [i64; N] = std::array::from_fn(|d| base[d] + o[d]);
            if let Some(i) = self.index.get(&k) {
                let d2 = sub(&self.centers[*i], x).iter().map(|t| t * t).sum::<f64>();
                if best.map_or(true, |(bd, _)| d2 < bd) {
                    best = Some((d2, *i));
                }
            }
        }
        best.map(|(_, i)| i)
    }

    /// Exact reflected cell index across an axis-parallel lattice plane.
    /// Uses integer arithmetic, so the reflection is an exact involution.
    pub fn reflect_index(&self, i: usize, frame: &ReflectionFrame<N>) -> Option<usize> {
        let axis = frame.axis()?;
        // lattice offset of the plane: lambda = origin[axis] + m * h/2 allowed
        let twice = 2.0 * (frame.lambda - self.origin[axis]) / self.h;
        let m2 = twice.round();
        if (twice - m2).abs() > 1e-9 {
            return None;
        }
        let m2 = m2 as i64;
        let k = self.coords[i];
        let refl: [i64; N] = std::array::from_fn(|d| if d == axis { m2 - k[d] - 1 } else { k[d] });
        self.index.get(&refl).copied()
    }

    pub fn volume_estimate(&self) -> f64 {
        self.cell_measure() * self.len() as f64
    }
}

/// Builds the lattice grid. The lattice is anchored at the origin; each
/// requested axis-parallel plane shifts the anchor on its axis so the plane
/// coincides with a lattice (cell-boundary) plane. A requested plane is
/// recorded in `symmetry_planes` only if center reflection is verified to be a
/// bijection of the cell set.
pub fn build_grid<const N: usize>(
    domain: &Domain<N>,
    h: f64,
    align_planes: &[ReflectionFrame<N>],
) -> Result<Grid<N>, GeometryError> {
    assert!(h > 0.0, "cell size must be positive");
    let mut origin = [0.0; N];
    let mut aligned: Vec<Option<f64>> = vec![None; N];
    for pl in align_planes {
        let axis = pl.axis().ok_or(GeometryError::PlaneNotAxisParallel)?;
        match aligned[axis] {
            None => {
                origin[axis] = pl.lambda - h * (pl.lambda / h).floor();
                aligned[axis] = Some(pl.lambda);
            }
            Some(_) => {
                let steps = (pl.lambda - origin[axis]) / h;
                if (steps - steps.round()).abs() > 1e-9 {
                    return Err(GeometryError::IncompatibleAlignment { axis });
                }
            }
        }
    }
    let (lo, hi) = domain.bounding_box();
    let mut klo = [0i64; N];
    let mut khi = [0i64; N];
    for d in 0..N {
        klo[d] = ((lo[d] - origin[d]) / h).floor() as i64 - 1;
        khi[d] = ((hi[d] - origin[d]) / h).ceil() as i64 + 1;
    }
    let mut centers = Vec::new();
    let mut coords = Vec::new();
    let mut k = klo;
    'scan: loop {
        let center: Point<N> =
            std::array::from_fn(|d| origin[d] + (k[d] as f64 + 0.5) * h);
        if domain.contains(&center) {
            coords.push(k);
            centers.push(center);
        }
        // odometer increment, last axis fastest
        let mut d = N;
        loop {
            if d == 0 {
                break 'scan;
            }
            d -= 1;
            k[d] += 1;
            if k[d] <= khi[d] {
                break;
            }
            k[d] = klo[d];
        }
    }
    if centers.is_empty() {
        return Err(GeometryError::EmptyGrid);
    }
    let index: std::collections::HashMap<[i64; N], usize> =
        coords.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut grid = Grid {
        h,
        origin,
        domain: domain.clone(),
        centers,
        coords,
        index,
        symmetry_planes: Vec::new(),
    };
    for pl in align_planes {
        let ok = (0..grid.len()).all(|i| grid.reflect_index(i, pl).is_some());
        if ok {
            grid.symmetry_planes.push(*pl);
        }
    }
    Ok(grid)
}

/// Critical value of the moving-plane method in direction `e`: the infimum of
/// lambda such that the reflected cap stays inside the set for all larger
/// offsets. The inclusion predicate is sampled on a point cloud of spacing
/// <= tol; the returned value is within tol of the sampled critical offset.
pub fn critical_value<const N: usize>(domain: &Domain<N>, e: &Point<N>, tol: f64) -> f64 {
    let en = norm(e);
    let e: Point<N> = std::array::from_fn(|k| e[k] / en);
    let lambda_hi = domain.support(&e);
    let neg_e: Point<N> = std::array::from_fn(|k| -e[k]);
    let lambda_lo = -domain.support(&neg_e);
    // point cloud of the domain at spacing tol (capped for sanity)
    let (lo, hi) = domain.bounding_box();
    let mut step = tol.max(1e-6);
    let max_pts = 4_000_000f64;
    let count = |s: f64| -> f64 {
        (0..N).map(|d| (hi[d] - lo[d]) / s + 1.0).product()
    };
    while count(step) > max_pts {
        step *= 2.0;
    }
    let mut cloud: Vec<Point<N>> = Vec::new();
    let dims: Vec<usize> = (0..N)
        .map(|d| ((hi[d] - lo[d]) / step).ceil() as usize + 1)
        .collect();
    let total: usize = dims.iter().product();
    for flat in 0..total {
        let mut rem = flat;
        let mut p = [0.0; N];
        for d in (0..N).rev() {
            p[d] = lo[d] + (rem % dims[d]) as f64 * step;
            rem /= dims[d];
        }
        if domain.contains(&p) {
            cloud.push(p);
        }
    }
    let reflected_cap_inside = |lambda: f64| -> bool {
        let frame = ReflectionFrame { e, lambda };
        cloud
            .iter()
            .filter(|p| dot(p, &e) > lambda)
            .all(|p| domain.contains(&reflect(p, &frame)))
    };
    let (mut a, mut b) = (lambda_lo, lambda_hi);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        if reflected_cap_inside(mid) {
            b = mid;
        } else {
            a = mid;
        }
    }
    0.5 * (a + b)
}
