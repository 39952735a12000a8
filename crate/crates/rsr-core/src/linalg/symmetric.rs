//! Real symmetric helpers: Jacobi eigenvalues (for PSD checks) and a
//! Cholesky factorization tolerant of semidefinite input.

/// Eigenvalues of a real symmetric matrix by cyclic Jacobi rotations,
/// ascending order. `m` is row-major `dim x dim`.
pub fn symmetric_eigenvalues(m: &[f64], dim: usize) -> Vec<f64> {
    assert_eq!(m.len(), dim * dim);
    let mut a = m.to_vec();
    let idx = |i: usize, j: usize| i * dim + j;
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..dim {
            for j in i + 1..dim {
                off += a[idx(i, j)] * a[idx(i, j)];
            }
        }
        if off.sqrt() < 1e-15 * (1.0 + frob(&a)) {
            break;
        }
        for p in 0..dim {
            for q in p + 1..dim {
                let apq = a[idx(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[idx(q, q)] - a[idx(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let akp = a[idx(k, p)];
                    let akq = a[idx(k, q)];
                    a[idx(k, p)] = c * akp - s * akq;
                    a[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = a[idx(p, k)];
                    let aqk = a[idx(q, k)];
                    a[idx(p, k)] = c * apk - s * aqk;
                    a[idx(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..dim).map(|i| a[idx(i, i)]).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}

fn frob(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Lower Cholesky factor of a symmetric PSD matrix. Semidefinite pivots
/// (within `tol` of zero relative to the trace) produce zero columns rather
/// than failing; genuinely negative pivots return None.
pub fn cholesky_lower(m: &[f64], dim: usize, tol: f64) -> Option<Vec<f64>> {
    assert_eq!(m.len(), dim * dim);
    let idx = |i: usize, j: usize| i * dim + j;
    let trace: f64 = (0..dim).map(|i| m[idx(i, i)]).sum();
    let floor = tol * trace.abs().max(1e-300);
    let mut l = vec![0.0; dim * dim];
    for j in 0..dim {
        let mut diag = m[idx(j, j)];
        for k in 0..j {
            diag -= l[idx(j, k)] * l[idx(j, k)];
        }
        if diag < -floor {
            return None;
        }
        if diag <= floor {
            // semidefinite direction: zero column
            continue;
        }
        let root = diag.sqrt();
        l[idx(j, j)] = root;
        for i in j + 1..dim {
            let mut v = m[idx(i, j)];
            for k in 0..j {
                v -= l[idx(i, k)] * l[idx(j, k)];
            }
            l[idx(i, j)] = v / root;
        }
    }
    Some(l)
}
