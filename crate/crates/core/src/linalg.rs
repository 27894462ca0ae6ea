//! Small dense linear algebra for the affine shortcuts: the largest
//! eigenvalue of a symmetric matrix and the spectral norm.
//!
//! Matrices are square and stored row-major in a flat slice.

/// Largest eigenvalue of the symmetric part `(A + Aᵀ)/2` of a square matrix.
///
/// Uses closed forms of the characteristic polynomial up to `n = 3` and cyclic
/// Jacobi rotations above.
pub fn max_symmetric_eigenvalue(a: &[f64], n: usize) -> f64 {
    let s = symmetrize(a, n);
    match n {
        0 => f64::NEG_INFINITY,
        1 => s[0],
        2 => {
            let mean = 0.5 * (s[0] + s[3]);
            let half = 0.5 * (s[0] - s[3]);
            mean + half.hypot(s[1])
        }
        3 => max_eigenvalue_3x3(&s),
        _ => jacobi_eigenvalues(&s, n).into_iter().fold(f64::NEG_INFINITY, f64::max),
    }
}

fn symmetrize(a: &[f64], n: usize) -> Vec<f64> {
    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            s[i * n + j] = 0.5 * (a[i * n + j] + a[j * n + i]);
        }
    }
    s
}

fn max_eigenvalue_3x3(s: &[f64]) -> f64 {
    let (a11, a12, a13, a22, a23, a33) = (s[0], s[1], s[2], s[4], s[5], s[8]);
    let p1 = a12 * a12 + a13 * a13 + a23 * a23;
    if p1 == 0.0 {
        return a11.max(a22).max(a33);
    }
    let q = (a11 + a22 + a33) / 3.0;
    let p2 = (a11 - q).powi(2) + (a22 - q).powi(2) + (a33 - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let (b11, b22, b33) = ((a11 - q) / p, (a22 - q) / p, (a33 - q) / p);
    let (b12, b13, b23) = (a12 / p, a13 / p, a23 / p);
    let det = b11 * (b22 * b33 - b23 * b23) - b12 * (b12 * b33 - b23 * b13) + b13 * (b12 * b23 - b22 * b13);
    let r = (0.5 * det).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    q + 2.0 * p * phi.cos()
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi sweeps.
pub fn jacobi_eigenvalues(s: &[f64], n: usize) -> Vec<f64> {
    let mut a = s.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let scale: f64 = a.iter().map(|v| v * v).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - sn * akq;
                    a[k * n + q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - sn * aqk;
                    a[q * n + k] = sn * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i * n + i]).collect()
}

/// Spectral norm `‖A‖₂` by power iteration on `AᵀA`, finished with a
/// Rayleigh quotient.
pub fn spectral_norm(a: &[f64], n: usize) -> f64 {
    if n == 0 || a.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    let ata = gram(a, n);
    // Irregular start vector; an exactly orthogonal start is then a
    // measure-zero accident rather than a symmetric-matrix coincidence.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.618_033_988_749_895 * (i as f64 + 1.0).sqrt()).collect();
    normalize(&mut v);
    let mut estimate = 0.0;
    let mut w = vec![0.0; n];
    for _ in 0..10_000 {
        matvec(&ata, &v, &mut w, n);
        let rayleigh: f64 = v.iter().zip(&w).map(|(p, q)| p * q).sum();
        let len = normalize(&mut w);
        if len == 0.0 {
            break;
        }
        std::mem::swap(&mut v, &mut w);
        if (rayleigh - estimate).abs() <= 1e-16 * rayleigh.abs() {
            estimate = rayleigh;
            break;
        }
        estimate = rayleigh;
    }
    matvec(&ata, &v, &mut w, n);
    let rayleigh: f64 = v.iter().zip(&w).map(|(p, q)| p * q).sum();
    estimate.max(rayleigh).max(0.0).sqrt()
}

fn gram(a: &[f64], n: usize) -> Vec<f64> {
    let mut g = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            g[i * n + j] = (0..n).map(|k| a[k * n + i] * a[k * n + j]).sum();
        }
    }
    g
}

fn matvec(m: &[f64], v: &[f64], out: &mut [f64], n: usize) {
    for i in 0..n {
        out[i] = (0..n).map(|j| m[i * n + j] * v[j]).sum();
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let len = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if len > 0.0 {
        v.iter_mut().for_each(|x| *x /= len);
    }
    len
}
