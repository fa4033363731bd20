//! Coordinate-chart oracle for left-invariant metrics on SU(2) = S³.
//!
//! Works on the unit quaternions through the graph chart
//! `x ↦ (√(1 − |x|²), x₁, x₂, x₃)`. The left-invariant fields are
//! `X_i(q) = q·e_i` with `e = (i, j, k)`, whose brackets are
//! `[X_1, X_2] = 2X_3` and cyclic. The metric `A σ₁² + B σ₂² + C σ₃²` is
//! assembled in coordinates and its Ricci tensor is computed by nested
//! fourth-order finite differences of the metric, with no use of frame
//! formulas.
#![allow(dead_code)]

type Mat3 = [[f64; 3]; 3];

fn quat_mul(p: [f64; 4], q: [f64; 4]) -> [f64; 4] {
    let [a1, b1, c1, d1] = p;
    let [a2, b2, c2, d2] = q;
    [
        a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
        a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
        a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
        a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
    ]
}

fn chart_point(x: [f64; 3]) -> [f64; 4] {
    let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
    [(1.0 - r2).sqrt(), x[0], x[1], x[2]]
}

/// Column `i` holds the chart components of `X_i` at `x`.
pub fn frame(x: [f64; 3]) -> Mat3 {
    let q = chart_point(x);
    let units = [[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    let mut e = [[0.0; 3]; 3];
    for (i, unit) in units.iter().enumerate() {
        let v = quat_mul(q, *unit);
        for a in 0..3 {
            e[a][i] = v[a + 1];
        }
    }
    e
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn inv3(m: &Mat3) -> Mat3 {
    let d = det3(m);
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (i1, i2) = ((j + 1) % 3, (j + 2) % 3);
            let (j1, j2) = ((i + 1) % 3, (i + 2) % 3);
            r[i][j] = (m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1]) / d;
        }
    }
    r
}

/// Coordinate metric `g_ab(x)` for the diagonal left-invariant metric `(A, B, C)`.
pub fn metric(coeffs: [f64; 3], x: [f64; 3]) -> Mat3 {
    let coframe = inv3(&frame(x)); // row i is σ^i
    let mut g = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            g[a][b] = (0..3).map(|i| coeffs[i] * coframe[i][a] * coframe[i][b]).sum();
        }
    }
    g
}

const STEP: f64 = 2e-3;

fn shifted(x: [f64; 3], axis: usize, delta: f64) -> [f64; 3] {
    let mut y = x;
    y[axis] += delta;
    y
}

/// Fourth-order central difference of a vector-valued function along `axis`.
fn d4<const N: usize>(f: &dyn Fn([f64; 3]) -> [f64; N], x: [f64; 3], axis: usize) -> [f64; N] {
    let h = STEP;
    let fm2 = f(shifted(x, axis, -2.0 * h));
    let fm1 = f(shifted(x, axis, -h));
    let fp1 = f(shifted(x, axis, h));
    let fp2 = f(shifted(x, axis, 2.0 * h));
    let mut out = [0.0; N];
    for k in 0..N {
        out[k] = (fm2[k] - 8.0 * fm1[k] + 8.0 * fp1[k] - fp2[k]) / (12.0 * h);
    }
    out
}

fn flat(m: &Mat3) -> [f64; 9] {
    let mut o = [0.0; 9];
    for a in 0..3 {
        for b in 0..3 {
            o[3 * a + b] = m[a][b];
        }
    }
    o
}

/// Christoffel symbols Γ^k_ij flattened as `9k + 3i + j`.
fn christoffel(coeffs: [f64; 3], x: [f64; 3]) -> [f64; 27] {
    let g = metric(coeffs, x);
    let ginv = inv3(&g);
    let gfun = |y: [f64; 3]| flat(&metric(coeffs, y));
    let dg: Vec<[f64; 9]> = (0..3).map(|l| d4(&gfun, x, l)).collect();
    let dgl = |l: usize, a: usize, b: usize| dg[l][3 * a + b];
    let mut gamma = [0.0; 27];
    for k in 0..3 {
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for l in 0..3 {
                    s += ginv[k][l] * (dgl(i, j, l) + dgl(j, i, l) - dgl(l, i, j));
                }
                gamma[9 * k + 3 * i + j] = 0.5 * s;
            }
        }
    }
    gamma
}

/// Coordinate Ricci tensor `R_ij(x)`.
pub fn ricci_coords(coeffs: [f64; 3], x: [f64; 3]) -> Mat3 {
    let gam = christoffel(coeffs, x);
    let gfun = |y: [f64; 3]| christoffel(coeffs, y);
    let dgam: Vec<[f64; 27]> = (0..3).map(|l| d4(&gfun, x, l)).collect();
    let g = |k: usize, i: usize, j: usize| gam[9 * k + 3 * i + j];
    let dg = |l: usize, k: usize, i: usize, j: usize| dgam[l][9 * k + 3 * i + j];
    let mut ric = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for k in 0..3 {
                s += dg(k, k, i, j) - dg(j, k, i, k);
                for l in 0..3 {
                    s += g(k, k, l) * g(l, i, j) - g(k, j, l) * g(l, i, k);
                }
            }
            ric[i][j] = s;
        }
    }
    ric
}

/// Ricci tensor in the orthonormal frame `X_i/√a_i`, evaluated at a generic chart point.
pub fn ricci_frame(coeffs: [f64; 3]) -> Mat3 {
    let x = [0.11, -0.07, 0.05];
    let ric = ricci_coords(coeffs, x);
    let e = frame(x);
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    s += e[a][i] * e[b][j] * ric[a][b];
                }
            }
            out[i][j] = s / (coeffs[i] * coeffs[j]).sqrt();
        }
    }
    out
}

/// Total volume by integrating `√det g` over both chart hemispheres.
///
/// Radial substitution `r = sin α` removes the edge singularity of the
/// graph chart; angles use a midpoint product rule, `α` uses Simpson.
pub fn volume(coeffs: [f64; 3]) -> f64 {
    let n_alpha = 400;
    let (n_pol, n_az) = (8, 16);
    let h = std::f64::consts::FRAC_PI_2 / n_alpha as f64;
    let mut total = 0.0;
    for ip in 0..n_pol {
        let ct = -1.0 + (ip as f64 + 0.5) * 2.0 / n_pol as f64;
        let st = (1.0 - ct * ct).sqrt();
        for ia in 0..n_az {
            let ph = (ia as f64 + 0.5) * std::f64::consts::TAU / n_az as f64;
            let dir = [st * ph.cos(), st * ph.sin(), ct];
            let dw = (2.0 / n_pol as f64) * (std::f64::consts::TAU / n_az as f64);
            let mut radial = 0.0;
            for k in 0..=n_alpha {
                let a = k as f64 * h;
                let (r, dr) = (a.sin(), a.cos());
                // at α = π/2 the integrand has the finite limit √(ABC)
                let integrand = if k == n_alpha {
                    (coeffs[0] * coeffs[1] * coeffs[2]).sqrt()
                } else {
                    let x = [r * dir[0], r * dir[1], r * dir[2]];
                    det3(&metric(coeffs, x)).sqrt() * r * r * dr
                };
                let wgt = if k == 0 || k == n_alpha {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                radial += wgt * integrand;
            }
            total += radial * h / 3.0 * dw;
        }
    }
    2.0 * total
}
