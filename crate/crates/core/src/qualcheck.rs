//! Quantitative audits of the qualitative theorems: moving-plane maximum
//! principles, symmetry and monotonicity of positive solutions, boundary
//! Hopf rates, interior Hopf growth on the symmetry hyperplane, and the
//! parallel-surface rigidity dichotomy.
//!
//! Audits are deterministic functions of (field, geometry, config) and never
//! mutate a field. Tolerances scale with the cell size; the refinement trend
//! itself is part of the pass condition where stated.

use crate::geometry::{dot, norm, sub, Domain, Grid, Point, Primitive, ReflectionFrame};
use crate::kernel::ell;
use crate::solve::Nonlinearity;
use nalgebra::DVector;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QualError {
    #[error("grid is not symmetric under the requested reflection plane")]
    GridNotSymmetric,
    #[error("a boundary sample point exits the cell cover")]
    BoundaryOutsideGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass,
    Fail,
    Skipped(String),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Pass => write!(f, "pass"),
            Verdict::Fail => write!(f, "fail"),
            Verdict::Skipped(_) => write!(f, "skipped"),
        }
    }
}

/// Named metrics, thresholds and a verdict; one per theorem check.
#[derive(Debug, Clone)]
pub struct AuditEntry {
    pub name: String,
    pub metrics: Vec<(String, f64)>,
    pub thresholds: Vec<(String, f64)>,
    pub verdict: Verdict,
}

impl AuditEntry {
    pub fn new(name: &str) -> Self {
        AuditEntry {
            name: name.to_string(),
            metrics: Vec::new(),
            thresholds: Vec::new(),
            verdict: Verdict::Skipped("not evaluated".into()),
        }
    }

    pub fn metric(&mut self, key: &str, value: f64) {
        self.metrics.push((key.to_string(), value));
    }

    pub fn threshold(&mut self, key: &str, value: f64) {
        self.thresholds.push((key.to_string(), value));
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// One-line record: `AUDIT <name> <metric>=<value>... verdict=<verdict>`.
    pub fn summary_line(&self) -> String {
        let mut s = format!("AUDIT {}", self.name);
        for (k, v) in &self.metrics {
            s.push_str(&format!(" {k}={v:.9e}"));
        }
        for (k, v) in &self.thresholds {
            s.push_str(&format!(" {k}={v:.9e}"));
        }
        s.push_str(&format!(" verdict={}", self.verdict));
        s
    }

    /// Machine-readable block, one datum per line.
    pub fn structured_block(&self) -> String {
        let mut s = format!("audit: {}\n", self.name);
        for (k, v) in &self.metrics {
            s.push_str(&format!("  metric {k} = {v:.17e}\n"));
        }
        for (k, v) in &self.thresholds {
            s.push_str(&format!("  threshold {k} = {v:.17e}\n"));
        }
        match &self.verdict {
            Verdict::Skipped(reason) => s.push_str(&format!("  verdict skipped: {reason}\n")),
            v => s.push_str(&format!("  verdict {v}\n")),
        }
        s
    }
}

/// Moving-plane difference state at one plane offset: w(x) = u(x_lambda) - u(x)
/// on the cap, and the difference quotient c of the nonlinearity.
#[derive(Debug, Clone)]
pub struct MovingPlaneState<const N: usize> {
    pub frame: ReflectionFrame<N>,
    pub cap_indices: Vec<usize>,
    pub w: Vec<f64>,
    pub c_field: Vec<f64>,
}

pub fn moving_plane_state<const N: usize>(
    grid: &Grid<N>,
    u: &DVector<f64>,
    f: &Nonlinearity,
    frame: &ReflectionFrame<N>,
) -> Result<MovingPlaneState<N>, QualError> {
    let mut cap_indices = Vec::new();
    let mut w = Vec::new();
    let mut c_field = Vec::new();
    for i in 0..grid.len() {
        let x = grid.center(i);
        if dot(&x, &frame.e) <= frame.lambda {
            continue;
        }
        let j = grid.reflect_index(i, frame).ok_or(QualError::GridNotSymmetric)?;
        let wi = u[j] - u[i];
        // difference quotient of f, zero on the diagonal by convention
        let c = if u[j] != u[i] { -(f.eval(u[j]) - f.eval(u[i])) / (u[j] - u[i]) } else { 0.0 };
        cap_indices.push(i);
        w.push(wi);
        c_field.push(c);
    }
    Ok(MovingPlaneState { frame: *frame, cap_indices, w, c_field })
}

/// Antisymmetric maximum-principle audit along a family of plane offsets.
/// Reports min w over the cap, the sup of the difference quotient, and the
/// cap measure against the small-measure threshold for that potential bound.
pub fn moving_plane_audit<const N: usize>(
    grid: &Grid<N>,
    u: &DVector<f64>,
    f: &Nonlinearity,
    e: &Point<N>,
    lambdas: &[f64],
) -> Result<Vec<AuditEntry>, QualError> {
    let umax = u.amax();
    let tol_mp = 10.0 * grid.h * umax;
    let mut out = Vec::new();
    for &lambda in lambdas {
        let frame = ReflectionFrame::new(*e, lambda);
        let st = moving_plane_state(grid, u, f, &frame)?;
        let min_w = st.w.iter().copied().fold(f64::INFINITY, f64::min);
        let c_inf = st.c_field.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let cap_measure = st.cap_indices.len() as f64 * grid.cell_measure();
        let (delta, _) = crate::assembly::small_measure_threshold(c_inf, N).expect("dim 1 or 2");
        let mut entry = AuditEntry::new(&format!("moving_plane_lambda_{lambda:.6}"));
        entry.metric("min_w", min_w);
        entry.metric("c_inf", c_inf);
        entry.metric("cap_measure", cap_measure);
        entry.metric("small_measure_delta", delta);
        entry.threshold("tol_mp", tol_mp);
        entry.verdict = if min_w >= -tol_mp { Verdict::Pass } else { Verdict::Fail };
        out.push(entry);
    }
    Ok(out)
}

/// Symmetry/monotonicity audit for positive solutions on domains that are
/// convex and symmetric in direction e: the reflection asymmetry and the worst
/// monotonicity violation along grid lines on the positive cap.
pub fn gnn_symmetry_audit<const N: usize>(
    grid: &Grid<N>,
    u: &DVector<f64>,
    e: &Point<N>,
) -> Result<AuditEntry, QualError> {
    let frame = grid
        .symmetry_planes
        .iter()
        .find(|p| {
            let mut aligned = 0.0;
            for k in 0..N {
                aligned += p.e[k] * e[k];
            }
            aligned.abs() > 1.0 - 1e-9
        })
        .copied()
        .ok_or(QualError::GridNotSymmetric)?;
    let axis = frame.axis().ok_or(QualError::GridNotSymmetric)?;
    let umax = u.amax();
    let mut asym = 0.0f64;
    for i in 0..grid.len() {
        let j = grid.reflect_index(i, &frame).ok_or(QualError::GridNotSymmetric)?;
        asym = asym.max((u[i] - u[j]).abs());
    }
    let asym = if umax > 0.0 { asym / umax } else { 0.0 };
    // monotone nonincrease away from the plane along lattice lines
    let mut mono = 0.0f64;
    let sign = if frame.e[axis] >= 0.0 { 1.0 } else { -1.0 };
    for i in 0..grid.len() {
        let x = grid.center(i);
        let side = (dot(&x, &frame.e) - frame.lambda) * 1.0;
        if side <= 0.0 {
            continue;
        }
        let mut k = grid.coords(i);
        k[axis] += if sign >= 0.0 { 1 } else { -1 };
        if let Some(j) = grid.index_of_coords(&k) {
            // j is one step further from the plane on the cap side
            mono = mono.max(u[j] - u[i]);
        }
    }
    let mono = if umax > 0.0 { mono / umax } else { 0.0 };
    let diam = grid.domain.diameter();
    let thr = 10.0 * grid.h / diam;
    let mut entry = AuditEntry::new("gnn_symmetry");
    entry.metric("asym", asym);
    entry.metric("mono", mono);
    entry.threshold("threshold", thr);
    entry.verdict =
        if asym <= thr && mono <= thr { Verdict::Pass } else { Verdict::Fail };
    Ok(entry)
}

/// Radial symmetry and monotone decrease on a ball: bins cells by radius and
/// checks within-bin spread and the monotonicity of bin means.
pub fn radial_audit<const N: usize>(
    grid: &Grid<N>,
    u: &DVector<f64>,
    center: &Point<N>,
) -> AuditEntry {
    let umax = u.amax();
    let h = grid.h;
    let mut bins: Vec<(i64, f64, f64, f64, usize)> = Vec::new(); // key, min, max, sum, count
    for i in 0..grid.len() {
        let r = norm(&sub(&grid.center(i), center));
        let key = (r / h).floor() as i64;
        match bins.iter_mut().find(|b| b.0 == key) {
            Some(b) => {
                b.1 = b.1.min(u[i]);
                b.2 = b.2.max(u[i]);
                b.3 += u[i];
                b.4 += 1;
            }
            None => bins.push((key, u[i], u[i], u[i], 1)),
        }
    }
    bins.sort_by_key(|b| b.0);
    let mut spread = 0.0f64;
    let mut increase = 0.0f64;
    let mut prev_mean: Option<f64> = None;
    for b in &bins {
        spread = spread.max(b.2 - b.1);
        let mean = b.3 / b.4 as f64;
        if let Some(p) = prev_mean {
            increase = increase.max(mean - p);
        }
        prev_mean = Some(mean);
    }
    let (spread, increase) =
        if umax > 0.0 { (spread / umax, increase / umax) } else { (0.0, 0.0) };
    let radius = bins.last().map_or(h, |b| (b.0 + 1) as f64 * h);
    let thr = 10.0 * h / radius;
    let mut entry = AuditEntry::new("radial");
    entry.metric("bin_spread", spread);
    entry.metric("mean_increase", increase);
    entry.threshold("threshold", thr);
    entry.verdict =
        if spread <= thr && increase <= thr { Verdict::Pass } else { Verdict::Fail };
    entry
}

/// Boundary Hopf rate on a ball: the ratio field u / ell^{1/2}(dist) over the
/// near-boundary window [2h, min(0.1, R/2)], its band (max/min), and the band
/// trend under one grid refinement. The trend tolerance scales with h like
/// every other audit threshold.
#[allow(clippy::too_many_arguments)]
pub fn hopf_rate_audit<const N: usize>(
    grid: &Grid<N>,
    u: &DVector<f64>,
    grid_fine: &Grid<N>,
    u_fine: &DVector<f64>,
    center: &Point<N>,
    radius: f64,
    band_cap: f64,
) -> AuditEntry {
    let mut entry = AuditEntry::new("hopf_rate");
    if u.min() <= 0.0 {
        entry.verdict = Verdict::Skipped("field is not strictly positive".into());
        return entry;
    }
    let band_of = |g: &Grid<N>, field: &DVector<f64>| -> Option<(f64, f64, f64)> {
        let lo = 2.0 * g.h;
        let hi = 0.1f64.min(radius / 2.0);
        let mut rho_min = f64::INFINITY;
        let mut rho_max = f64::NEG_INFINITY;
        for i in 0..g.len() {
            let d = radius - norm(&sub(&g.center(i), center));
            if d < lo || d > hi {
                continue;
            }
            let rho = field[i] / ell(d).sqrt();
            rho_min = rho_min.min(rho);
            rho_max = rho_max.max(rho);
        }
        if rho_min.is_finite() {
            Some((rho_min, rho_max, rho_max / rho_min))
        } else {
            None
        }
    };
    let Some((rho_min, rho_max, band)) = band_of(grid, u) else {
        entry.verdict = Verdict::Skipped("no cells in the Hopf window".into());
        return entry;
    };
    let Some((_, _, band_fine)) = band_of(grid_fine, u_fine) else {
        entry.verdict = Verdict::Skipped("no cells in the refined Hopf window".into());
        return entry;
    };
    let trend_tol = 10.0 * grid.h / radius;
    entry.metric("rho_min", rho_min);
    entry.metric("rho_max", rho_max);
    entry.metric("band", band);
    entry.metric("band_refined", band_fine);
    entry.threshold("band_cap", band_cap);
    entry.threshold("trend_tol", trend_tol);
    entry.verdict = if rho_min > 0.0 && band <= band_cap && band_fine <= band + trend_tol {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    entry
}

/// Interior Hopf audit: one-sided slope of the antisymmetric difference w
/// along the grid line (in the plane normal direction) through the cell
/// nearest to the hyperplane point `q_point`, fitted over the first 4 cells.
pub fn interior_hopf_audit<const N: usize>(
    grid: &Grid<N>,
    w: &DVector<f64>,
    frame: &ReflectionFrame<N>,
    q_point: &Point<N>,
) -> AuditEntry {
    let mut entry = AuditEntry::new("interior_hopf");
    let Some(axis) = frame.axis() else {
        entry.verdict = Verdict::Skipped("frame is not axis-parallel".into());
        return entry;
    };
    let Some(anchor) = grid.nearest_cell(q_point) else {
        entry.verdict = Verdict::Skipped("hyperplane point outside the cell cover".into());
        return entry;
    };
    // walk the +e side of the line through the anchor
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut k = grid.coords(anchor);
    let dir = if frame.e[axis] >= 0.0 { 1i64 } else { -1i64 };
    for _ in 0..(grid.len() as i64) {
        if let Some(i) = grid.index_of_coords(&k) {
            let d = dot(&grid.center(i), &frame.e) - frame.lambda;
            if d > 0.0 {
                samples.push((d, w[i]));
                if samples.len() == 4 {
                    break;
                }
            }
        } else if !samples.is_empty() {
            break;
        }
        k[axis] += dir;
    }
    if samples.len() < 2 {
        entry.verdict = Verdict::Skipped("fewer than 2 cells on the audit line".into());
        return entry;
    }
    let num: f64 = samples.iter().map(|(d, v)| d * v).sum();
    let den: f64 = samples.iter().map(|(d, _)| d * d).sum();
    let slope = num / den;
    let wmax = w.amax();
    let slope_floor = 10.0 * wmax;
    entry.metric("slope", slope);
    entry.threshold("slope_floor", slope_floor);
    entry.verdict =
        if slope > 0.0 && slope >= slope_floor { Verdict::Pass } else { Verdict::Fail };
    entry
}

/// Boundary sample points of a single-primitive set, counterclockwise.
pub fn boundary_points<const N: usize>(
    g: &Domain<N>,
    count: usize,
) -> Result<Vec<Point<N>>, QualError> {
    if g.primitives.len() != 1 || g.minkowski_radius.is_some() {
        return Err(QualError::BoundaryOutsideGrid);
    }
    let mut pts = Vec::with_capacity(count);
    match (&g.primitives[0], N) {
        (Primitive::Ball { center, radius }, 1) => {
            let mut a = *center;
            a[0] -= radius;
            let mut b = *center;
            b[0] += radius;
            pts.push(a);
            pts.push(b);
        }
        (Primitive::Rect { lo, hi }, 1) => {
            pts.push(*lo);
            pts.push(*hi);
        }
        (Primitive::Ball { center, radius }, 2) => {
            for k in 0..count {
                let a = std::f64::consts::TAU * k as f64 / count as f64;
                let mut p = *center;
                p[0] += radius * a.cos();
                p[1] += radius * a.sin();
                pts.push(p);
            }
        }
        (Primitive::Ellipse { center, semi_axes }, 2) => {
            for k in 0..count {
                let a = std::f64::consts::TAU * k as f64 / count as f64;
                let mut p = *center;
                p[0] += semi_axes[0] * a.cos();
                p[1] += semi_axes[1] * a.sin();
                pts.push(p);
            }
        }
        (Primitive::Rect { lo, hi }, 2) => {
            let per = 2.0 * ((hi[0] - lo[0]) + (hi[1] - lo[1]));
            for k in 0..count {
                let mut s = per * k as f64 / count as f64;
                let mut p = *lo;
                let w = hi[0] - lo[0];
                let hgt = hi[1] - lo[1];
                if s < w {
                    p[0] = lo[0] + s;
                } else if s < w + hgt {
                    s -= w;
                    p[0] = hi[0];
                    p[1] = lo[1] + s;
                } else if s < 2.0 * w + hgt {
                    s -= w + hgt;
                    p[0] = hi[0] - s;
                    p[1] = hi[1];
                } else {
                    s -= 2.0 * w + hgt;
                    p[0] = lo[0];
                    p[1] = hi[1] - s;
                }
                pts.push(p);
            }
        }
        _ => return Err(QualError::BoundaryOutsideGrid),
    }
    Ok(pts)
}

/// Overdetermined parallel-surface audit: oscillation of u on the inner
/// boundary via nearest-cell lookup. For a ball G the verdict is the rigid
/// direction (osc below the lookup threshold); for a non-ball G the verdict is
/// the contrapositive (osc at least 5x the supplied ball-case oscillation).
pub fn parallel_surface_audit<const N: usize>(
    grid: &Grid<N>,
    u: &DVector<f64>,
    g: &Domain<N>,
    minkowski_r: f64,
    reference_ball_osc: Option<f64>,
) -> Result<AuditEntry, QualError> {
    let pts = boundary_points(g, 256)?;
    let umax = u.amax();
    let mut vmin = f64::INFINITY;
    let mut vmax = f64::NEG_INFINITY;
    for p in &pts {
        let i = grid.nearest_cell(p).ok_or(QualError::BoundaryOutsideGrid)?;
        let c = grid.center(i);
        if norm(&sub(&c, p)) > 2.0 * grid.h * (N as f64).sqrt() {
            return Err(QualError::BoundaryOutsideGrid);
        }
        vmin = vmin.min(u[i]);
        vmax = vmax.max(u[i]);
    }
    let osc = if umax > 0.0 { (vmax - vmin) / umax } else { 0.0 };
    let mut entry = AuditEntry::new("parallel_surface");
    entry.metric("osc", osc);
    match reference_ball_osc {
        None => {
            let thr = 10.0 * grid.h / minkowski_r;
            entry.threshold("osc_cap", thr);
            entry.verdict = if osc <= thr { Verdict::Pass } else { Verdict::Fail };
        }
        Some(ball_osc) => {
            entry.metric("ball_osc", ball_osc);
            entry.threshold("min_ratio", 5.0);
            entry.verdict =
                if osc >= 5.0 * ball_osc { Verdict::Pass } else { Verdict::Fail };
        }
    }
    Ok(entry)
}

/// Strong maximum-principle dichotomy for nonnegative supersolutions:
/// either strictly positive everywhere or identically zero.
pub fn strong_mp_audit(u: &DVector<f64>) -> AuditEntry {
    let umin = u.min();
    let umax_abs = u.amax();
    let mut entry = AuditEntry::new("strong_mp");
    entry.metric("min", umin);
    entry.metric("sup_abs", umax_abs);
    entry.threshold("zero_tol", 1e-12);
    let all_positive = umin > 0.0;
    let all_zero = umax_abs <= 1e-12;
    entry.verdict = if all_positive || all_zero { Verdict::Pass } else { Verdict::Fail };
    entry
}

/// Field dump: CSV `x[,y],value`, one row per cell center, 17 significant
/// digits, LF line endings.
pub fn write_field_csv<const N: usize, W: std::io::Write>(
    out: &mut W,
    grid: &Grid<N>,
    values: &DVector<f64>,
) -> std::io::Result<()> {
    match N {
        1 => writeln!(out, "x,value")?,
        2 => writeln!(out, "x,y,value")?,
        _ => unreachable!(),
    }
    for i in 0..grid.len() {
        let c = grid.center(i);
        let coords: Vec<String> = (0..N).map(|d| format!("{:.16e}", c[d])).collect();
        writeln!(out, "{},{:.16e}", coords.join(","), values[i])?;
    }
    Ok(())
}
