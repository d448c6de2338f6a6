//! Principal matrix logarithm by complex Schur reduction followed by inverse
//! scaling and squaring on the triangular factor.

use nalgebra::{Complex, DMatrix};

use super::{ensure_finite, ensure_square, NumericsError};

type C64 = Complex<f64>;

/// Square roots are taken until `||T - I||_1` drops below this.
const SQRT_THRESHOLD: f64 = 0.25;
const MAX_SQRTS: usize = 100;
/// Gauss-Legendre nodes in the partial-fraction Padé approximant of `log(I + X)`.
const QUADRATURE_NODES: usize = 8;
/// Eigenvalues with `|Im| <= ON_AXIS_TOL * |lambda|` count as real.
const ON_AXIS_TOL: f64 = 1e-8;
/// Imaginary residue tolerated in the result, relative to its norm.
const IMAG_TOL: f64 = 1e-8;

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<C64>, NumericsError> {
    ensure_square(m)?;
    ensure_finite(m)?;
    let (_, t) = complex_schur(m)?;
    Ok((0..t.nrows()).map(|i| t[(i, i)]).collect())
}

/// Complex Schur form `M = Q T Q^H`: Hessenberg reduction followed by
/// single-shift complex QR.
fn complex_schur(m: &DMatrix<f64>) -> Result<(DMatrix<C64>, DMatrix<C64>), NumericsError> {
    let n = m.nrows();
    let (q, h) = nalgebra::linalg::Hessenberg::new(m.clone()).unpack();
    let mut t = h.map(|v| C64::new(v, 0.0));
    let mut z = q.map(|v| C64::new(v, 0.0));
    for j in 0..n {
        for i in j + 2..n {
            t[(i, j)] = C64::new(0.0, 0.0);
        }
    }
    if hessenberg_qr(&mut t, &mut z) {
        Ok((z, t))
    } else {
        Err(NumericsError::ConvergenceFailure("Schur decomposition"))
    }
}

fn abs1(z: C64) -> f64 {
    z.re.abs() + z.im.abs()
}

/// Reduces an upper Hessenberg `h` with real subdiagonal to upper triangular
/// form in place, accumulating the unitary transforms into `z`.
/// Returns `false` when an eigenvalue fails to converge.
fn hessenberg_qr(h: &mut DMatrix<C64>, z: &mut DMatrix<C64>) -> bool {
    let n = h.nrows();
    if n == 0 {
        return true;
    }
    let zero = C64::new(0.0, 0.0);
    let ulp = f64::EPSILON;
    let smlnum = f64::MIN_POSITIVE * (n as f64 / ulp);
    let itmax = 30 * n.max(10);
    let mut kdefl = 0usize;
    let mut i = n as isize - 1;
    while i >= 0 {
        let iu = i as usize;
        let mut l = 0usize;
        let mut converged = false;
        for _ in 0..=itmax {
            // Look for a negligible subdiagonal entry.
            let mut k = iu;
            while k > l {
                if abs1(h[(k, k - 1)]) <= smlnum {
                    break;
                }
                let mut tst = abs1(h[(k - 1, k - 1)]) + abs1(h[(k, k)]);
                if tst == 0.0 {
                    if k >= l + 2 {
                        tst += h[(k - 1, k - 2)].re.abs();
                    }
                    if k < iu {
                        tst += h[(k + 1, k)].re.abs();
                    }
                }
                if h[(k, k - 1)].re.abs() <= ulp * tst {
                    break;
                }
                k -= 1;
            }
            l = k;
            if l > 0 {
                h[(l, l - 1)] = zero;
            }
            if l >= iu {
                converged = true;
                break;
            }
            kdefl += 1;
            let shift = if kdefl.is_multiple_of(20) {
                h[(iu, iu)] + 0.75 * h[(iu, iu - 1)].re.abs()
            } else if kdefl.is_multiple_of(10) {
                h[(l, l)] + 0.75 * h[(l + 1, l)].re.abs()
            } else {
                wilkinson_shift(h, iu)
            };
            for k in l..iu {
                let (v0, v1) = if k == l { (h[(l, l)] - shift, h[(l + 1, l)]) } else { (h[(k, k - 1)], h[(k + 1, k - 1)]) };
                let r = (v0.norm_sqr() + v1.norm_sqr()).sqrt();
                if r == 0.0 {
                    continue;
                }
                let (g00, g01, g10, g11) = (v0.conj() / r, v1.conj() / r, -v1 / r, v0 / r);
                if k > l {
                    h[(k, k - 1)] = C64::new(r, 0.0);
                    h[(k + 1, k - 1)] = zero;
                }
                for j in k..n {
                    let (a, b) = (h[(k, j)], h[(k + 1, j)]);
                    h[(k, j)] = g00 * a + g01 * b;
                    h[(k + 1, j)] = g10 * a + g11 * b;
                }
                for row in 0..=(k + 2).min(iu) {
                    let (a, b) = (h[(row, k)], h[(row, k + 1)]);
                    h[(row, k)] = a * g00.conj() + b * g01.conj();
                    h[(row, k + 1)] = a * g10.conj() + b * g11.conj();
                }
                for row in 0..n {
                    let (a, b) = (z[(row, k)], z[(row, k + 1)]);
                    z[(row, k)] = a * g00.conj() + b * g01.conj();
                    z[(row, k + 1)] = a * g10.conj() + b * g11.conj();
                }
            }
            // Keep the trailing subdiagonal entry real.
            let sub = h[(iu, iu - 1)];
            if sub.im != 0.0 {
                let r = sub.norm();
                h[(iu, iu - 1)] = C64::new(r, 0.0);
                let phase = sub / r;
                for j in iu + 1..n {
                    h[(iu, j)] *= phase.conj();
                }
                for row in 0..iu {
                    h[(row, iu)] *= phase;
                }
                for row in 0..n {
                    z[(row, iu)] *= phase;
                }
            }
        }
        if !converged {
            return false;
        }
        kdefl = 0;
        i = l as isize - 1;
    }
    true
}

/// Eigenvalue of the trailing 2x2 block closer to its last diagonal entry.
fn wilkinson_shift(h: &DMatrix<C64>, iu: usize) -> C64 {
    let mut t = h[(iu, iu)];
    let u = h[(iu - 1, iu)].sqrt() * h[(iu, iu - 1)].sqrt();
    let s = abs1(u);
    if s != 0.0 {
        let x = (h[(iu - 1, iu - 1)] - t) * 0.5;
        let sx = abs1(x);
        let s = s.max(sx);
        let mut y = ((x / s) * (x / s) + (u / s) * (u / s)).sqrt() * s;
        if sx > 0.0 {
            let xs = x / sx;
            if xs.re * y.re + xs.im * y.im < 0.0 {
                y = -y;
            }
        }
        t -= u * (u / (x + y));
    }
    t
}

/// Principal logarithm of a real matrix with no eigenvalues on the closed
/// negative real axis. The result is real.
pub fn matrix_log(m: &DMatrix<f64>) -> Result<DMatrix<f64>, NumericsError> {
    ensure_square(m)?;
    ensure_finite(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let (q, t) = complex_schur(m)?;
    let diag: Vec<C64> = (0..n).map(|i| t[(i, i)]).collect();

    let scale = m.norm().max(f64::MIN_POSITIVE);
    let offending: Vec<C64> = diag
        .iter()
        .copied()
        .filter(|z| {
            let r = z.norm();
            r <= 1e-14 * scale || (z.re <= 0.0 && z.im.abs() <= ON_AXIS_TOL * r)
        })
        .collect();
    if !offending.is_empty() {
        return Err(NumericsError::NonPrincipalBranch { eigenvalues: offending });
    }

    let log_t = triangular_log(t, &diag)?;
    let result = &q * log_t * q.adjoint();

    let real = result.map(|z| z.re);
    let imag_norm = result.map(|z| z.im).norm();
    if imag_norm > IMAG_TOL * real.norm().max(1.0) {
        return Err(NumericsError::NonPrincipalBranch { eigenvalues: diag });
    }
    Ok(real)
}

fn triangular_log(mut t: DMatrix<C64>, diag: &[C64]) -> Result<DMatrix<C64>, NumericsError> {
    let n = t.nrows();
    let mut roots = 0usize;
    while distance_to_identity(&t) > SQRT_THRESHOLD {
        if roots == MAX_SQRTS {
            return Err(NumericsError::ConvergenceFailure("inverse scaling and squaring"));
        }
        t = triangular_sqrt(&t);
        roots += 1;
    }

    let mut x = t;
    for i in 0..n {
        x[(i, i)] = root_minus_one(diag[i], roots);
    }

    let (nodes, weights) = gauss_legendre_unit(QUADRATURE_NODES);
    let mut acc = DMatrix::<C64>::zeros(n, n);
    for (&node, &weight) in nodes.iter().zip(&weights) {
        let mut lhs = x.map(|v| v * node);
        for i in 0..n {
            lhs[(i, i)] += C64::new(1.0, 0.0);
        }
        let y = solve_upper(&lhs, &x);
        acc += y * C64::new(weight, 0.0);
    }
    acc *= C64::new(2f64.powi(roots as i32), 0.0);

    for i in 0..n {
        acc[(i, i)] = diag[i].ln();
    }
    Ok(acc)
}

fn distance_to_identity(t: &DMatrix<C64>) -> f64 {
    let n = t.nrows();
    (0..n)
        .map(|j| {
            (0..n)
                .map(|i| {
                    let v = if i == j { t[(i, j)] - C64::new(1.0, 0.0) } else { t[(i, j)] };
                    v.norm()
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// `a^(1/2^k) - 1` without the cancellation of subtracting after rooting.
fn root_minus_one(a: C64, k: usize) -> C64 {
    if k == 0 {
        return a - C64::new(1.0, 0.0);
    }
    let mut r = a;
    let mut denom = C64::new(1.0, 0.0);
    for _ in 0..k {
        r = r.sqrt();
        denom *= C64::new(1.0, 0.0) + r;
    }
    (a - C64::new(1.0, 0.0)) / denom
}

/// Principal square root of an upper triangular matrix (column-wise recurrence).
fn triangular_sqrt(t: &DMatrix<C64>) -> DMatrix<C64> {
    let n = t.nrows();
    let mut r = DMatrix::<C64>::zeros(n, n);
    for j in 0..n {
        r[(j, j)] = t[(j, j)].sqrt();
        for i in (0..j).rev() {
            let mut s = t[(i, j)];
            for k in i + 1..j {
                s -= r[(i, k)] * r[(k, j)];
            }
            r[(i, j)] = s / (r[(i, i)] + r[(j, j)]);
        }
    }
    r
}

/// Solves `L Y = B` for upper triangular `L`.
fn solve_upper(l: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let n = l.nrows();
    let mut y = b.clone();
    for c in 0..b.ncols() {
        for i in (0..n).rev() {
            let mut s = y[(i, c)];
            for k in i + 1..n {
                s -= l[(i, k)] * y[(k, c)];
            }
            y[(i, c)] = s / l[(i, i)];
        }
    }
    y
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
fn gauss_legendre_unit(count: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    for i in 0..count {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (count as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(count, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(count, z);
        if d != 0.0 {
            dp = d;
        }
        nodes.push(0.5 * (1.0 - z));
        weights.push(1.0 / ((1.0 - z * z) * dp * dp));
    }
    (nodes, weights)
}

/// `(P_n(z), P_n'(z))` by the three-term recurrence.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}
