//! Galerkin matrices of the Dirichlet form on the piecewise-constant cell
//! basis, by two routes that must agree: the potential representation
//! (primary) and the cutoff-kernel definition (validation oracle).
//!
//! Pair integrals J = iint |x-y|^-N over cell products are the workhorse.
//! Well-separated pairs use composite tensor Gauss with panel counts driven by
//! the gap-to-size ratio. Touching lattice cells reduce to canonical unit
//! configurations whose values close a self-similar subdivision exactly, so
//! the graded scheme carries no 2^-L truncation tail.

use crate::geometry::{Domain, Grid, Point};
use crate::kernel::{potential_parts, KernelConstants, KernelError, QuadratureSpec};
use crate::quad::gauss_legendre_01;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::io::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cutoff {
    /// Full kernel |z|^-N.
    None,
    /// k-part: restricted to |x-y| < 1.
    BelowOne,
    /// j-part: restricted to |x-y| > 1.
    AboveOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Alt,
    Def,
}

/// Per-cell diagonal decomposition kept for audit
/// (A_ii = coupling + potential + mass on the alt route).
#[derive(Debug, Clone, Copy)]
pub struct DiagParts {
    pub coupling: f64,
    pub potential: f64,
    pub mass: f64,
}

#[derive(Debug, Clone)]
pub struct FormMatrices {
    pub a: DMatrix<f64>,
    pub m_diag: DVector<f64>,
    pub route: Route,
    pub constants: KernelConstants,
    pub quad: QuadratureSpec,
    pub diag_parts: Vec<DiagParts>,
}

type Box<const N: usize> = (Point<N>, Point<N>);

fn box_gap_and_size<const N: usize>(a: &Box<N>, b: &Box<N>) -> (f64, f64, f64) {
    let mut gap2 = 0.0;
    let mut dmax2 = 0.0;
    let mut size = 0.0f64;
    for d in 0..N {
        let g = (b.0[d] - a.1[d]).max(a.0[d] - b.1[d]).max(0.0);
        gap2 += g * g;
        let m = (b.1[d] - a.0[d]).abs().max((a.1[d] - b.0[d]).abs());
        dmax2 += m * m;
        size = size.max(a.1[d] - a.0[d]).max(b.1[d] - b.0[d]);
    }
    (gap2.sqrt(), dmax2.sqrt(), size)
}

/// iint over C_i x C_j of |x-y|^-N, restricted by `cutoff`.
pub fn pair_integral<const N: usize>(
    cell_i: &Box<N>,
    cell_j: &Box<N>,
    cutoff: Cutoff,
    q: &QuadratureSpec,
) -> f64 {
    match cutoff {
        Cutoff::None => full_pair(cell_i, cell_j, q, q.subdivision_levels),
        _ => cutoff_pair(cell_i, cell_j, cutoff, q, q.cutoff_refine),
    }
}

fn cutoff_pair<const N: usize>(
    a: &Box<N>,
    b: &Box<N>,
    cutoff: Cutoff,
    q: &QuadratureSpec,
    depth: usize,
) -> f64 {
    let (gap, dmax, _) = box_gap_and_size(a, b);
    let below = cutoff == Cutoff::BelowOne;
    if dmax <= 1.0 {
        return if below { full_pair(a, b, q, q.subdivision_levels) } else { 0.0 };
    }
    if gap >= 1.0 {
        return if below { 0.0 } else { full_pair(a, b, q, q.subdivision_levels) };
    }
    if depth == 0 {
        // bounded integrand near |x-y| = 1: plain Gauss with the indicator
        return indicator_pair_gauss(a, b, below, q.gauss_order);
    }
    // split the larger box
    let vol = |c: &Box<N>| -> f64 { (0..N).map(|d| c.1[d] - c.0[d]).product() };
    let (first, second, split_first) = if vol(a) >= vol(b) { (a, b, true) } else { (b, a, false) };
    let mut total = 0.0;
    for child in 0..(1usize << N) {
        let mut clo = [0.0; N];
        let mut chi = [0.0; N];
        for d in 0..N {
            let m = 0.5 * (first.0[d] + first.1[d]);
            if child & (1 << d) == 0 {
                clo[d] = first.0[d];
                chi[d] = m;
            } else {
                clo[d] = m;
                chi[d] = first.1[d];
            }
        }
        let cb = (clo, chi);
        total += if split_first {
            cutoff_pair(&cb, second, cutoff, q, depth - 1)
        } else {
            cutoff_pair(second, &cb, cutoff, q, depth - 1)
        };
    }
    total
}

fn indicator_pair_gauss<const N: usize>(a: &Box<N>, b: &Box<N>, below: bool, order: usize) -> f64 {
    let rule = gauss_legendre_01(order.max(2));
    let (nodes, weights) = (&rule.0, &rule.1);
    let g = nodes.len();
    let va: f64 = (0..N).map(|d| a.1[d] - a.0[d]).product();
    let vb: f64 = (0..N).map(|d| b.1[d] - b.0[d]).product();
    let total_a = g.pow(N as u32);
    let mut acc = 0.0;
    for fa in 0..total_a {
        let mut rem = fa;
        let mut x = [0.0; N];
        let mut wa = 1.0;
        for d in 0..N {
            let i = rem % g;
            rem /= g;
            x[d] = a.0[d] + nodes[i] * (a.1[d] - a.0[d]);
            wa *= weights[i];
        }
        for fb in 0..total_a {
            let mut rem = fb;
            let mut y = [0.0; N];
            let mut wb = 1.0;
            for d in 0..N {
                let i = rem % g;
                rem /= g;
                y[d] = b.0[d] + nodes[i] * (b.1[d] - b.0[d]);
                wb *= weights[i];
            }
            let r2: f64 = (0..N).map(|d| (y[d] - x[d]) * (y[d] - x[d])).sum();
            let inside = r2 < 1.0;
            if inside == below && r2 > 0.0 {
                acc += wa * wb / r2.powf(N as f64 / 2.0);
            }
        }
    }
    acc * va * vb
}

fn full_pair<const N: usize>(a: &Box<N>, b: &Box<N>, q: &QuadratureSpec, depth: usize) -> f64 {
    let (gap, _, size) = box_gap_and_size(a, b);
    if gap > 0.0 {
        return separated_pair_gauss(a, b, gap, size, q);
    }
    // touching: try the canonical lattice configuration
    if let Some(v) = canonical_touching_value(a, b, q) {
        return v;
    }
    if depth == 0 {
        return separated_pair_gauss(a, b, size * 1e-6, size, q);
    }
    // graded recursion: split both boxes, Gauss the separated child pairs
    let kids = |c: &Box<N>| -> Vec<Box<N>> {
        (0..(1usize << N))
            .map(|child| {
                let mut clo = [0.0; N];
                let mut chi = [0.0; N];
                for d in 0..N {
                    let m = 0.5 * (c.0[d] + c.1[d]);
                    if child & (1 << d) == 0 {
                        clo[d] = c.0[d];
                        chi[d] = m;
                    } else {
                        clo[d] = m;
                        chi[d] = c.1[d];
                    }
                }
                (clo, chi)
            })
            .collect()
    };
    let mut total = 0.0;
    for ca in kids(a) {
        for cb in kids(b) {
            total += full_pair(&ca, &cb, q, depth - 1);
        }
    }
    total
}

fn separated_pair_gauss<const N: usize>(
    a: &Box<N>,
    b: &Box<N>,
    gap: f64,
    size: f64,
    q: &QuadratureSpec,
) -> f64 {
    let ratio = size / gap;
    let (order, panels) = if ratio <= 0.25 {
        ((q.gauss_order / 2).max(3), 1usize)
    } else {
        (q.gauss_order, ((2.0 * ratio).ceil() as usize).clamp(1, 8))
    };
    let rule = gauss_legendre_01(order);
    let (nodes, weights) = (&rule.0, &rule.1);
    // composite nodes per axis per box
    let axis_nodes = |lo: f64, hi: f64| -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::with_capacity(nodes.len() * panels);
        let mut ws = Vec::with_capacity(nodes.len() * panels);
        let w = (hi - lo) / panels as f64;
        for p in 0..panels {
            let base = lo + p as f64 * w;
            for (t, wt) in nodes.iter().zip(weights) {
                xs.push(base + t * w);
                ws.push(wt * w);
            }
        }
        (xs, ws)
    };
    match N {
        1 => {
            let (xa, wa) = axis_nodes(a.0[0], a.1[0]);
            let (xb, wb) = axis_nodes(b.0[0], b.1[0]);
            let mut acc = 0.0;
            for (x, wx) in xa.iter().zip(&wa) {
                for (y, wy) in xb.iter().zip(&wb) {
                    acc += wx * wy / (y - x).abs();
                }
            }
            acc
        }
        2 => {
            let (xa, wxa) = axis_nodes(a.0[0], a.1[0]);
            let (ya, wya) = axis_nodes(a.0[1], a.1[1]);
            let (xb, wxb) = axis_nodes(b.0[0], b.1[0]);
            let (yb, wyb) = axis_nodes(b.0[1], b.1[1]);
            let mut acc = 0.0;
            for (x1, w1) in xa.iter().zip(&wxa) {
                for (y1, w2) in ya.iter().zip(&wya) {
                    let w12 = w1 * w2;
                    for (x2, w3) in xb.iter().zip(&wxb) {
                        let dx = x2 - x1;
                        let dxx = dx * dx;
                        let w123 = w12 * w3;
                        for (y2, w4) in yb.iter().zip(&wyb) {
                            let dy = y2 - y1;
                            acc += w123 * w4 / (dxx + dy * dy);
                        }
                    }
                }
            }
            acc
        }
        _ => unreachable!(),
    }
}

/// Detects equal-size axis-aligned lattice neighbors and returns the
/// canonical touching value scaled by h^N. Contact types: facet (one offset
/// axis) and, in 2D, corner (both axes offset).
fn canonical_touching_value<const N: usize>(
    a: &Box<N>,
    b: &Box<N>,
    q: &QuadratureSpec,
) -> Option<f64> {
    let h = a.1[0] - a.0[0];
    let tol = 1e-9 * h;
    let mut offset_axes = 0usize;
    for d in 0..N {
        let ha = a.1[d] - a.0[d];
        let hb = b.1[d] - b.0[d];
        if (ha - h).abs() > tol || (hb - h).abs() > tol {
            return None;
        }
        let off = (b.0[d] - a.0[d]).abs();
        if off < tol {
            continue;
        }
        if (off - h).abs() < tol {
            offset_axes += 1;
        } else {
            return None;
        }
    }
    if offset_axes == 0 {
        return None; // identical cells, not a touching pair
    }
    let unit = canonical_unit_value::<N>(offset_axes, q);
    Some(unit * h.powi(N as i32))
}

/// Canonical unit-cell touching values with the self-similar tail closed
/// exactly: in 1D T = 2 S_T; in 2D C = (4/3) S_C and F = 2 S_F + C, where the
/// S sums run over the separated children of a one-level bisection.
fn canonical_unit_value<const N: usize>(contact_axes: usize, q: &QuadratureSpec) -> f64 {
    use std::collections::HashMap;
    use std::sync::{OnceLock, RwLock};
    static CACHE: OnceLock<RwLock<HashMap<(usize, usize, usize), f64>>> = OnceLock::new();
    let key = (N, contact_axes, q.gauss_order);
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(v) = cache.read().unwrap().get(&key) {
        return *v;
    }
    let v = match N {
        1 => {
            let a: Box<1> = ([-1.0], [0.0]);
            let b: Box<1> = ([0.0], [1.0]);
            2.0 * separated_children_sum(&a, &b, q)
        }
        2 => {
            let ac: Box<2> = ([-1.0, -1.0], [0.0, 0.0]);
            let bc: Box<2> = ([0.0, 0.0], [1.0, 1.0]);
            let corner = separated_children_sum(&ac, &bc, q) / (1.0 - 0.25);
            if contact_axes == 2 {
                corner
            } else {
                let af: Box<2> = ([-1.0, 0.0], [0.0, 1.0]);
                let bf: Box<2> = ([0.0, 0.0], [1.0, 1.0]);
                2.0 * separated_children_sum(&af, &bf, q) + corner
            }
        }
        _ => unreachable!(),
    };
    cache.write().unwrap().insert(key, v);
    v
}

fn separated_children_sum<const N: usize>(a: &Box<N>, b: &Box<N>, q: &QuadratureSpec) -> f64 {
    let kids = |c: &Box<N>| -> Vec<Box<N>> {
        (0..(1usize << N))
            .map(|child| {
                let mut clo = [0.0; N];
                let mut chi = [0.0; N];
                for d in 0..N {
                    let m = 0.5 * (c.0[d] + c.1[d]);
                    if child & (1 << d) == 0 {
                        clo[d] = c.0[d];
                        chi[d] = m;
                    } else {
                        clo[d] = m;
                        chi[d] = c.1[d];
                    }
                }
                (clo, chi)
            })
            .collect()
    };
    let mut acc = 0.0;
    for ca in kids(a) {
        for cb in kids(b) {
            let (gap, _, size) = box_gap_and_size(&ca, &cb);
            if gap > 0.0 {
                acc += separated_pair_gauss(&ca, &cb, gap, size, q);
            }
        }
    }
    acc
}

/// Per-cell integrals of the ray potential parts over the cell-domain
/// intersection. The potential density blows up logarithmically at the domain
/// boundary and loses smoothness where the unit sphere around x crosses
/// boundary features, so the quadrature is boundary-aware: exact kink
/// splitting plus graded panels in 1D, adaptive dyadic refinement toward the
/// boundary in 2D. Nodes outside the domain contribute zero.
fn potential_cell_integrals<const N: usize>(
    grid: &Grid<N>,
    i: usize,
    q: &QuadratureSpec,
) -> (f64, f64) {
    let (lo, hi) = grid.cell_box(i);
    match N {
        1 => potential_cell_1d(&grid.domain, lo[0], hi[0], q),
        2 => potential_box_adaptive(&grid.domain, &lo, &hi, q, POTENTIAL_SPLIT_DEPTH),
        _ => unreachable!(),
    }
}

const POTENTIAL_SPLIT_DEPTH: usize = 6;

fn potential_cell_1d<const N: usize>(
    domain: &Domain<N>,
    lo: f64,
    hi: f64,
    q: &QuadratureSpec,
) -> (f64, f64) {
    let ivals = crate::geometry::intervals_1d(domain);
    // split at domain endpoints (log singularities of the near part) and at
    // their unit translates (kinks of both parts)
    let mut splits = vec![lo, hi];
    for (a, b) in &ivals {
        for e in [*a, *b] {
            for p in [e - 1.0, e, e + 1.0] {
                if p > lo + 1e-14 && p < hi - 1e-14 {
                    splits.push(p);
                }
            }
        }
    }
    splits.sort_by(|x, y| x.partial_cmp(y).unwrap());
    splits.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let is_boundary = |p: f64| ivals.iter().any(|(a, b)| (p - a).abs() < 1e-12 || (p - b).abs() < 1e-12);
    let order = q.gauss_order.max(4);
    let mut near = 0.0;
    let mut far = 0.0;
    let mut eval_panel = |a: f64, b: f64| {
        let rule = gauss_legendre_01(order);
        for (t, w) in rule.0.iter().zip(&rule.1) {
            let mut x = [0.0; N];
            x[0] = a + t * (b - a);
            if let Ok((n, f)) = potential_parts(domain, &x, q) {
                near += w * (b - a) * n;
                far += w * (b - a) * f;
            }
        }
    };
    for s in splits.windows(2) {
        let (s0, s1) = (s[0], s[1]);
        let mut mid_pt = [0.0; N];
        mid_pt[0] = 0.5 * (s0 + s1);
        if !domain.contains(&mid_pt) {
            continue;
        }
        let sing_left = is_boundary(s0);
        let sing_right = is_boundary(s1);
        match (sing_left, sing_right) {
            (false, false) => eval_panel(s0, s1),
            _ => {
                // dyadic grading toward each singular end
                let mid = 0.5 * (s0 + s1);
                if sing_left {
                    graded_panels(s0, mid, true, &mut eval_panel);
                } else {
                    eval_panel(s0, mid);
                }
                if sing_right {
                    graded_panels(mid, s1, false, &mut eval_panel);
                } else {
                    eval_panel(mid, s1);
                }
            }
        }
    }
    (near, far)
}

fn graded_panels<F: FnMut(f64, f64)>(a: f64, b: f64, toward_left: bool, eval: &mut F) {
    let levels = 48;
    let len = b - a;
    for k in 0..levels {
        let outer = len * 0.5f64.powi(k);
        let inner = if k + 1 == levels { 0.0 } else { len * 0.5f64.powi(k + 1) };
        if toward_left {
            eval(a + inner, a + outer);
        } else {
            eval(b - outer, b - inner);
        }
    }
}

fn potential_box_adaptive<const N: usize>(
    domain: &Domain<N>,
    lo: &Point<N>,
    hi: &Point<N>,
    q: &QuadratureSpec,
    depth: usize,
) -> (f64, f64) {
    let center: Point<N> = std::array::from_fn(|d| 0.5 * (lo[d] + hi[d]));
    let diam: f64 =
        (0..N).map(|d| (hi[d] - lo[d]).powi(2)).sum::<f64>().sqrt();
    let deep = domain.inside_depth(&center) >= 2.0 * diam;
    if deep || depth == 0 {
        return potential_box_gauss(domain, lo, hi, q);
    }
    let mut near = 0.0;
    let mut far = 0.0;
    for child in 0..(1usize << N) {
        let mut clo = [0.0; N];
        let mut chi = [0.0; N];
        for d in 0..N {
            let m = 0.5 * (lo[d] + hi[d]);
            if child & (1 << d) == 0 {
                clo[d] = lo[d];
                chi[d] = m;
            } else {
                clo[d] = m;
                chi[d] = hi[d];
            }
        }
        let (n, f) = potential_box_adaptive(domain, &clo, &chi, q, depth - 1);
        near += n;
        far += f;
    }
    (near, far)
}

fn potential_box_gauss<const N: usize>(
    domain: &Domain<N>,
    lo: &Point<N>,
    hi: &Point<N>,
    q: &QuadratureSpec,
) -> (f64, f64) {
    let rule = gauss_legendre_01(q.gauss_order.clamp(4, 6));
    let (nodes, weights) = (&rule.0, &rule.1);
    let g = nodes.len();
    let vol: f64 = (0..N).map(|d| hi[d] - lo[d]).product();
    let total = g.pow(N as u32);
    let mut near = 0.0;
    let mut far = 0.0;
    for flat in 0..total {
        let mut rem = flat;
        let mut x = [0.0; N];
        let mut w = 1.0;
        for d in 0..N {
            let idx = rem % g;
            rem /= g;
            x[d] = lo[d] + nodes[idx] * (hi[d] - lo[d]);
            w *= weights[idx];
        }
        match potential_parts(domain, &x, q) {
            Ok((n, f)) => {
                near += w * n;
                far += w * f;
            }
            Err(KernelError::PointOutsideDomain) => {}
            Err(e) => panic!("potential evaluation failed: {e}"),
        }
    }
    (near * vol, far * vol)
}

fn coupling_values<const N: usize>(
    grid: &Grid<N>,
    cutoff: Cutoff,
    q: &QuadratureSpec,
) -> Vec<f64> {
    let n = grid.len();
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    pairs
        .par_iter()
        .map(|&(i, j)| {
            let bi = grid.cell_box(i);
            let bj = grid.cell_box(j);
            pair_integral(&bi, &bj, cutoff, q)
        })
        .collect()
}

/// Primary route: A_ij = -c J_ij (full kernel), diagonal
/// c sum_j J_ij + int_C h_Omega + rho h^N.
pub fn assemble_alt<const N: usize>(
    grid: &Grid<N>,
    k: &KernelConstants,
    q: &QuadratureSpec,
) -> FormMatrices {
    assert!(!grid.is_empty());
    assert_eq!(k.dim, N);
    let n = grid.len();
    let j_full = coupling_values(grid, Cutoff::None, q);
    let potentials: Vec<(f64, f64)> =
        (0..n).into_par_iter().map(|i| potential_cell_integrals(grid, i, q)).collect();
    let mass = grid.cell_measure();
    let mut a = DMatrix::zeros(n, n);
    let mut idx = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = -k.c * j_full[idx];
            a[(i, j)] = v;
            a[(j, i)] = v;
            idx += 1;
        }
    }
    let mut diag_parts = Vec::with_capacity(n);
    for i in 0..n {
        let coupling: f64 = (0..n).filter(|&j| j != i).map(|j| -a[(i, j)]).sum();
        let (near, far) = potentials[i];
        let potential = k.c * (near - far);
        let parts = DiagParts { coupling, potential, mass: k.rho * mass };
        a[(i, i)] = parts.coupling + parts.potential + parts.mass;
        diag_parts.push(parts);
    }
    FormMatrices {
        a,
        m_diag: DVector::from_element(n, mass),
        route: Route::Alt,
        constants: *k,
        quad: *q,
        diag_parts,
    }
}

/// Definition route: E-part with the k-cutoff plus the exterior-interaction
/// density b, minus the j-matrix, plus the rho mass term. Retained as a
/// validation oracle for the alt route.
pub fn assemble_def<const N: usize>(
    grid: &Grid<N>,
    k: &KernelConstants,
    q: &QuadratureSpec,
) -> FormMatrices {
    assert!(!grid.is_empty());
    assert_eq!(k.dim, N);
    let n = grid.len();
    let j_below = coupling_values(grid, Cutoff::BelowOne, q);
    let j_above = coupling_values(grid, Cutoff::AboveOne, q);
    let potentials: Vec<(f64, f64)> =
        (0..n).into_par_iter().map(|i| potential_cell_integrals(grid, i, q)).collect();
    let mass = grid.cell_measure();
    let cell_diam = grid.h * (N as f64).sqrt();
    let mut a = DMatrix::zeros(n, n);
    let mut idx = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = -k.c * (j_below[idx] + j_above[idx]);
            a[(i, j)] = v;
            a[(j, i)] = v;
            idx += 1;
        }
    }
    // row sums of J^{<1} for the E-part diagonal
    let mut below_sum = vec![0.0; n];
    let mut cursor = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            below_sum[i] += j_below[cursor];
            below_sum[j] += j_below[cursor];
            cursor += 1;
        }
    }
    let mut diag_parts = Vec::with_capacity(n);
    for i in 0..n {
        let coupling = k.c * below_sum[i];
        let (near, _) = potentials[i];
        let b_i = k.c * near;
        let self_above = if cell_diam > 1.0 {
            let bx = grid.cell_box(i);
            k.c * pair_integral(&bx, &bx, Cutoff::AboveOne, q)
        } else {
            0.0
        };
        let parts = DiagParts { coupling, potential: b_i, mass: k.rho * mass };
        a[(i, i)] = coupling + b_i - self_above + k.rho * mass;
        diag_parts.push(parts);
    }
    FormMatrices {
        a,
        m_diag: DVector::from_element(n, mass),
        route: Route::Def,
        constants: *k,
        quad: *q,
        diag_parts,
    }
}

/// Small-measure maximum-principle threshold: radius r* with
/// 2 log(1/r*) - |rho_N| = V_inf and the measure of the corresponding ball.
pub fn small_measure_threshold(v_inf: f64, dim: usize) -> Result<(f64, f64), KernelError> {
    assert!(v_inf >= 0.0);
    let k = crate::kernel::constants(dim)?;
    let r_star = (-(v_inf + k.rho.abs()) / 2.0).exp();
    let delta = match dim {
        1 => 2.0 * r_star,
        2 => std::f64::consts::PI * r_star * r_star,
        _ => unreachable!(),
    };
    Ok((delta, r_star))
}

/// Plain-text dense dump: header line `n <rows> <cols>`, then row-major rows
/// of 17-significant-digit decimals.
pub fn write_matrix<W: Write>(out: &mut W, a: &DMatrix<f64>) -> io::Result<()> {
    writeln!(out, "n {} {}", a.nrows(), a.ncols())?;
    for i in 0..a.nrows() {
        let row: Vec<String> = (0..a.ncols()).map(|j| format!("{:.16e}", a[(i, j)])).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, ReflectionFrame};
    use crate::kernel::constants;
    use approx::assert_relative_eq;

    fn default_q() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn pair_adjacent_1d_gold() {
        // iint over (0,h) x (h,2h) of dx dy/|y-x| = 2 h log 2
        let q = QuadratureSpec { subdivision_levels: 20, ..default_q() };
        for &h in &[1.0, 0.1, 0.015625] {
            let a: Box<1> = ([0.0], [h]);
            let b: Box<1> = ([h], [2.0 * h]);
            let v = pair_integral(&a, &b, Cutoff::None, &q);
            let gold = 2.0 * h * std::f64::consts::LN_2;
            assert_relative_eq!(v, gold, max_relative = 1e-8);
        }
    }

    #[test]
    fn pair_disjoint_1d_gold() {
        let q = default_q();
        let a: Box<1> = ([0.0], [1.0]);
        let b: Box<1> = ([2.0], [3.0]);
        let v = pair_integral(&a, &b, Cutoff::None, &q);
        assert_relative_eq!(v, 0.523248143764548, max_relative = 1e-10);
    }

    #[test]
    fn pair_cutoff_support() {
        let q = default_q();
        let a: Box<2> = ([0.0, 0.0], [0.1, 0.1]);
        let b: Box<2> = ([2.0, 0.0], [2.1, 0.1]);
        assert_eq!(pair_integral(&a, &b, Cutoff::BelowOne, &q), 0.0);
        let full = pair_integral(&a, &b, Cutoff::None, &q);
        let above = pair_integral(&a, &b, Cutoff::AboveOne, &q);
        assert_relative_eq!(full, above, max_relative = 1e-13);
    }

    #[test]
    fn pair_cutoff_split_consistency() {
        // straddling pair: below + above must equal the full kernel value
        let q = default_q();
        let a: Box<1> = ([0.0], [0.5]);
        let b: Box<1> = ([0.8], [1.6]);
        let full = pair_integral(&a, &b, Cutoff::None, &q);
        let lo = pair_integral(&a, &b, Cutoff::BelowOne, &q);
        let hi = pair_integral(&a, &b, Cutoff::AboveOne, &q);
        assert_relative_eq!(lo + hi, full, max_relative = 1e-7);
        // 1D exact split: region y-x<1 within (0,.5)x(.8,1.6)
        assert!(lo > 0.0 && hi > 0.0);
    }

    #[test]
    fn canonical_corner_value_2d() {
        // corner-touching unit cells; compare against a deep graded reference
        let q = default_q();
        let a: Box<2> = ([-1.0, -1.0], [0.0, 0.0]);
        let b: Box<2> = ([0.0, 0.0], [1.0, 1.0]);
        let v = pair_integral(&a, &b, Cutoff::None, &q);
        // frozen from an independent run of the closure with order-12 panels
        assert_relative_eq!(v, 0.654649688997, max_relative = 1e-9);
        let af: Box<2> = ([-1.0, 0.0], [0.0, 1.0]);
        let f = pair_integral(&af, &b, Cutoff::None, &q);
        assert_relative_eq!(f, 1.850261245805, max_relative = 1e-9);
    }

    #[test]
    fn single_cell_alt_gold() {
        // Omega = (-0.1, 0.1): A11 = 4a(1 - log 2a) + 2a rho_1
        let d = Domain::<1>::rect([-0.1], [0.1]);
        let g = build_grid(&d, 0.2, &[ReflectionFrame::new([1.0], -0.1)]).unwrap();
        assert_eq!(g.len(), 1);
        let k = constants(1).unwrap();
        let f = assemble_alt(&g, &k, &default_q());
        assert_relative_eq!(f.a[(0, 0)], 0.8128888990130271, max_relative = 1e-6);
        // def route agrees (diam < 1, so the j-part vanishes)
        let fd = assemble_def(&g, &k, &default_q());
        assert_relative_eq!(fd.a[(0, 0)], f.a[(0, 0)], max_relative = 1e-4);
    }

    #[test]
    fn adjacent_cells_off_diagonal() {
        // two adjacent cells in a small interval: A12 = -c1 * 2h log 2
        let h = 0.05;
        let d = Domain::<1>::rect([0.0], [2.0 * h]);
        let g = build_grid(&d, h, &[]).unwrap();
        assert_eq!(g.len(), 2);
        let k = constants(1).unwrap();
        let f = assemble_alt(&g, &k, &default_q());
        assert_relative_eq!(
            f.a[(0, 1)],
            -k.c * 2.0 * h * std::f64::consts::LN_2,
            max_relative = 1e-8
        );
    }

    #[test]
    fn constant_vector_identity() {
        // u = 1: the difference part vanishes, u^T A u = sum_i (H_i + rho h^N)
        let d = Domain::<2>::ball([0.0, 0.0], 0.3);
        let g = build_grid(&d, 0.05, &[]).unwrap();
        let k = constants(2).unwrap();
        let f = assemble_alt(&g, &k, &default_q());
        let n = g.len();
        let ones = DVector::from_element(n, 1.0);
        let quad_form = (&ones.transpose() * &f.a * &ones)[(0, 0)];
        let direct: f64 = f.diag_parts.iter().map(|p| p.potential + p.mass).sum();
        assert_relative_eq!(quad_form, direct, max_relative = 1e-9);
    }

    #[test]
    fn quadratic_form_diagonal_decomposition() {
        // u^T A u equals the directly evaluated alt-route sum for random u
        use rand::{rngs::StdRng, Rng, SeedableRng};
        let d = Domain::<1>::rect([-0.2], [0.2]);
        let g = build_grid(&d, 0.05, &[]).unwrap();
        let k = constants(1).unwrap();
        let q = default_q();
        let f = assemble_alt(&g, &k, &q);
        let n = g.len();
        // recover J from off-diagonal entries
        let jmat: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { -f.a[(i, j)] / k.c }).collect())
            .collect();
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..100 {
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let uv = DVector::from_vec(u.clone());
            let lhs = (&uv.transpose() * &f.a * &uv)[(0, 0)];
            let mut rhs = 0.0;
            for i in 0..n {
                for j in 0..n {
                    rhs += 0.5 * k.c * (u[i] - u[j]).powi(2) * jmat[i][j];
                }
                rhs += (f.diag_parts[i].potential + f.diag_parts[i].mass) * u[i] * u[i];
            }
            assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
        }
    }

    #[test]
    fn def_route_far_coupling_is_j_part() {
        // two cells separated by more than 1: coupling only via the j matrix
        let d = Domain::union(vec![
            crate::geometry::Primitive::Rect { lo: [0.0], hi: [0.05] },
            crate::geometry::Primitive::Rect { lo: [2.0], hi: [2.05] },
        ])
        .unwrap();
        let g = build_grid(&d, 0.05, &[]).unwrap();
        assert_eq!(g.len(), 2);
        let k = constants(1).unwrap();
        let q = default_q();
        let fd = assemble_def(&g, &k, &q);
        let bi = g.cell_box(0);
        let bj = g.cell_box(1);
        let above = pair_integral(&bi, &bj, Cutoff::AboveOne, &q);
        assert_relative_eq!(fd.a[(0, 1)], -k.c * above, max_relative = 1e-12);
        let below = pair_integral(&bi, &bj, Cutoff::BelowOne, &q);
        assert_eq!(below, 0.0);
    }

    #[test]
    fn small_measure_threshold_golds() {
        let (d2, r2) = small_measure_threshold(0.0, 2).unwrap();
        assert_relative_eq!(r2, 0.890536208995099, epsilon = 1e-12);
        assert_relative_eq!(d2, 2.491454943606296, epsilon = 1e-12);
        let (d1, r1) = small_measure_threshold(0.0, 1).unwrap();
        assert_relative_eq!(r1, 0.5614594835668851, epsilon = 1e-12);
        assert_relative_eq!(d1, 1.1229189671337703, epsilon = 1e-12);
        let (d22, r22) = small_measure_threshold(2.0, 2).unwrap();
        assert_relative_eq!(r22, 0.3276099629080518, epsilon = 1e-12);
        assert_relative_eq!(d22, 0.33718176046421694, epsilon = 1e-12);
    }

    #[test]
    fn matrix_dump_format() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, -0.5, 2.0]);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &a).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "n 2 2");
        assert!(lines.next().unwrap().starts_with("1.0000000000000000e0"));
    }
}
