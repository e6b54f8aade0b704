#![allow(dead_code)]

use fps_causal::fpca::StandardizedDesign;
use fps_causal::streams::substream;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

pub fn normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = substream(seed, &[0x7E57]);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Center each column and scale it to unit root-mean-square.
pub fn unit_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() as f64;
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let rms = (col.norm_squared() / n).sqrt();
        col /= rms;
    }
    out
}

/// Centered columns with identity second-moment matrix.
pub fn whiten(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() as f64;
    let mut c = m.clone();
    for mut col in c.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    let g = c.tr_mul(&c) / n;
    let e = g.symmetric_eigen();
    let inv_sqrt = &e.eigenvectors
        * DMatrix::from_diagonal(&e.eigenvalues.map(|v| 1.0 / v.sqrt()))
        * e.eigenvectors.transpose();
    c * inv_sqrt
}

/// Design with `L` scores and `p` covariates; scores load on the first covariate by `strength`.
pub fn confounded_design(
    seed: u64,
    n: usize,
    l: usize,
    p: usize,
    strength: f64,
) -> StandardizedDesign {
    let z = normals(seed, n * (l + p));
    let c = DMatrix::from_fn(n, p, |i, j| z[i * (l + p) + l + j]);
    let a = DMatrix::from_fn(n, l, |i, k| z[i * (l + p) + k] + strength * c[(i, 0)]);
    StandardizedDesign::from_parts(unit_columns(&a), whiten(&c)).unwrap()
}

pub fn column(m: &DMatrix<f64>, j: usize) -> DVector<f64> {
    m.column(j).into_owned()
}

/// Maximize `Σ log w` subject to `M w = b` by infeasible-start Newton.
pub fn primal_max_log(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = m.ncols();
    let k = m.nrows();
    let mut w = DVector::from_element(n, 1.0);
    let mut nu = DVector::zeros(k);
    let residual = |w: &DVector<f64>, nu: &DVector<f64>| {
        // Stationarity of −Σ log w + νᵀ(Mw − b) and primal feasibility.
        let dual = -w.map(|x| 1.0 / x) + m.tr_mul(nu);
        let prim = m * w - b;
        (dual.norm_squared() + prim.norm_squared()).sqrt()
    };
    for _ in 0..200 {
        let grad = -w.map(|x| 1.0 / x);
        let mut kkt = DMatrix::zeros(n + k, n + k);
        for i in 0..n {
            kkt[(i, i)] = 1.0 / (w[i] * w[i]);
        }
        kkt.view_mut((0, n), (n, k)).copy_from(&m.transpose());
        kkt.view_mut((n, 0), (k, n)).copy_from(m);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-(grad + m.tr_mul(&nu))));
        rhs.rows_mut(n, k).copy_from(&(b - m * &w));
        let step = kkt.lu().solve(&rhs).expect("KKT system solvable");
        let dw = step.rows(0, n).into_owned();
        let dnu = step.rows(n, k).into_owned();
        let r0 = residual(&w, &nu);
        let mut t = 1.0;
        while (0..n).any(|i| w[i] + t * dw[i] <= 0.0) {
            t *= 0.5;
        }
        while residual(&(&w + &dw * t), &(&nu + &dnu * t)) > (1.0 - 0.01 * t) * r0 && t > 1e-12 {
            t *= 0.5;
        }
        w += &dw * t;
        nu += &dnu * t;
        if residual(&w, &nu) < 1e-13 {
            break;
        }
    }
    w
}

/// Constraint rows: `Σw = n`, `Σ w A* = 0`, `Σ w C* = 0`, `Σ w A* C*ᵀ = nθΓ₀`.
pub fn primal_constraints(
    design: &StandardizedDesign,
    theta: f64,
    gamma0: &DMatrix<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let (n, l, p) = (design.n(), design.rank(), design.n_covariates());
    let rows = 1 + l + p + l * p;
    let mut m = DMatrix::zeros(rows, n);
    let mut b = DVector::zeros(rows);
    b[0] = n as f64;
    for i in 0..n {
        m[(0, i)] = 1.0;
        for k in 0..l {
            m[(1 + k, i)] = design.a_star[(i, k)];
        }
        for j in 0..p {
            m[(1 + l + j, i)] = design.c_star[(i, j)];
        }
        for j in 0..p {
            for k in 0..l {
                m[(1 + l + p + j * l + k, i)] = design.a_star[(i, k)] * design.c_star[(i, j)];
            }
        }
    }
    for j in 0..p {
        for k in 0..l {
            b[1 + l + p + j * l + k] = n as f64 * theta * gamma0[(k, j)];
        }
    }
    (m, b)
}

/// Cross-moment `n⁻¹ Σ w a c` with `σ²(β) = n⁻¹ Σ (a − βc)²` substituted.
pub fn cross_moment(a: &[f64], c: &[f64], beta: f64) -> f64 {
    let n = a.len() as f64;
    let s2 = a
        .iter()
        .zip(c)
        .map(|(x, y)| (x - beta * y).powi(2))
        .sum::<f64>()
        / n;
    a.iter()
        .zip(c)
        .map(|(x, y)| {
            let r = x - beta * y;
            s2.sqrt() * (0.5 * r * r / s2 - 0.5 * x * x).exp() * x * y
        })
        .sum::<f64>()
        / n
}

fn bisect(a: &[f64], c: &[f64], mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = cross_moment(a, c, lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = cross_moment(a, c, mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Root of the cross-moment nearest the least-squares slope, bracketed by an outward scan.
pub fn scalar_root(a: &[f64], c: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ols = a.iter().zip(c).map(|(x, y)| x * y).sum::<f64>() / n;
    let step = 0.01;
    for k in 0..100 {
        for (lo, hi) in [
            (ols + k as f64 * step, ols + (k + 1) as f64 * step),
            (ols - (k + 1) as f64 * step, ols - k as f64 * step),
        ] {
            let (fl, fh) = (cross_moment(a, c, lo), cross_moment(a, c, hi));
            if fl.is_finite() && fh.is_finite() && fl * fh <= 0.0 {
                return Some(bisect(a, c, lo, hi));
            }
        }
    }
    None
}
