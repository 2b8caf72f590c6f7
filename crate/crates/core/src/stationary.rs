//! Stationary distributions of explicit generators.
//!
//! The default solve replaces the equation of the empty configuration in
//! `G^T pi = 0` by `pi_0 = 1`, factors the result with a sparse LU, normalizes
//! and applies one step of iterative refinement. Power iteration on the uniformized chain
//! is the independent cross-check.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::SparseGenerator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Method {
    SparseLu,
    LeastSquares,
    PowerIteration,
}

#[derive(Clone, Debug, Serialize)]
pub struct Stationary {
    pub pi: Vec<f64>,
    /// `max |(pi^T G)_j|`.
    pub residual: f64,
    pub method: Method,
    /// Probability carried by states flagged `truncated`.
    pub truncated_mass: f64,
}

/// Stationary distribution by sparse direct solve, least squares as fallback.
pub fn stationary_distribution(g: &SparseGenerator) -> Result<Stationary> {
    let n = g.n();
    if n == 1 {
        return Ok(finish(g, vec![1.0], Method::SparseLu));
    }
    let a = constrained_system(g)?;
    let mut rhs = Col::<f64>::zeros(n);
    rhs[PINNED] = 1.0;
    let (pi, method) = match a.sp_lu() {
        Ok(lu) => {
            let mut x = lu.solve(&rhs);
            // One refinement step against the assembled system.
            let ax = &a * &x;
            let r = &rhs - &ax;
            let dx = lu.solve(&r);
            x += &dx;
            (x, Method::SparseLu)
        }
        Err(_) => match a.sp_qr() {
            Ok(qr) => (qr.solve_lstsq(&rhs), Method::LeastSquares),
            // Direct factorizations can run out of memory on large capped spaces.
            Err(_) => return power_iteration(g, 1e-13, 10_000_000, false),
        },
    };
    let mut pi: Vec<f64> = (0..n).map(|i| pi[i]).collect();
    if pi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("non-finite stationary vector (reducible chain?)".into()));
    }
    if pi.iter().any(|&v| v < -1e-9) {
        return Err(Error::Singular("stationary vector has negative mass (reducible chain?)".into()));
    }
    pi.iter_mut().for_each(|v| *v = v.max(0.0));
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= s);
    Ok(finish(g, pi, method))
}

/// The empty configuration, which carries non-negligible mass in every family.
const PINNED: usize = 0;

fn constrained_system(g: &SparseGenerator) -> Result<SparseColMat<usize, f64>> {
    let n = g.n();
    let mut t: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(g.nnz() + n);
    for i in 0..n {
        if i != PINNED {
            t.push(Triplet::new(i, i, g.diag[i]));
        }
        for (j, v) in g.row(i) {
            if j != PINNED {
                t.push(Triplet::new(j, i, v));
            }
        }
    }
    // Pin one state instead of adding a dense normalization row, which would
    // destroy sparsity in the factorization; the caller normalizes.
    t.push(Triplet::new(PINNED, PINNED, 1.0));
    SparseColMat::try_new_from_triplets(n, n, &t).map_err(|e| Error::Singular(format!("{e:?}")))
}

fn finish(g: &SparseGenerator, pi: Vec<f64>, method: Method) -> Stationary {
    let residual = g.apply_transpose(&pi).iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let truncated_mass = pi.iter().zip(&g.truncated).filter(|(_, &t)| t).map(|(p, _)| p).sum();
    Stationary {
        pi,
        residual,
        method,
        truncated_mass,
    }
}

/// Column-major view of the off-diagonal part (rows of `G^T`) for gather-style products.
struct Transposed {
    ptr: Vec<usize>,
    rows: Vec<usize>,
    vals: Vec<f64>,
}

fn transpose(g: &SparseGenerator) -> Transposed {
    let n = g.n();
    let mut count = vec![0usize; n + 1];
    for &c in &g.cols {
        count[c + 1] += 1;
    }
    for j in 0..n {
        count[j + 1] += count[j];
    }
    let mut fill = count.clone();
    let mut rows = vec![0; g.nnz()];
    let mut vals = vec![0.0; g.nnz()];
    for i in 0..n {
        for (j, v) in g.row(i) {
            rows[fill[j]] = i;
            vals[fill[j]] = v;
            fill[j] += 1;
        }
    }
    Transposed { ptr: count, rows, vals }
}

/// Power iteration on `P = I + G / Lambda` until `max |pi^T G| < tol`.
///
/// With `parallel` the product is computed row-parallel; each entry is summed
/// in the same order either way, so both modes agree bit for bit.
pub fn power_iteration(g: &SparseGenerator, tol: f64, max_iter: usize, parallel: bool) -> Result<Stationary> {
    let n = g.n();
    let gt = transpose(g);
    let lambda = 1.02 * g.max_exit_rate().max(1e-300);
    let mut p = vec![1.0 / n as f64; n];
    let mut flow = vec![0.0; n];
    let entry = |p: &[f64], j: usize| -> f64 {
        let mut s = p[j] * g.diag[j];
        for k in gt.ptr[j]..gt.ptr[j + 1] {
            s += p[gt.rows[k]] * gt.vals[k];
        }
        s
    };
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        if parallel {
            flow.par_iter_mut().enumerate().for_each(|(j, f)| *f = entry(&p, j));
        } else {
            flow.iter_mut().enumerate().for_each(|(j, f)| *f = entry(&p, j));
        }
        if it % 16 == 0 {
            residual = flow.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            if residual < tol {
                break;
            }
        }
        for (pj, fj) in p.iter_mut().zip(&flow) {
            *pj += fj / lambda;
        }
        if it % 1024 == 1023 {
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
        }
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    let out = finish(g, p, Method::PowerIteration);
    if out.residual > tol.max(residual.min(tol * 10.0)) {
        return Err(Error::NoConvergence {
            what: "power iteration".into(),
            residual: out.residual,
        });
    }
    Ok(out)
}

/// Expectation of `f(eta)` under `pi`.
pub fn expectation(g: &SparseGenerator, pi: &[f64], f: impl Fn(&[u32]) -> f64) -> f64 {
    let mut eta = vec![0u32; g.space.l];
    let mut s = 0.0;
    for (i, &p) in pi.iter().enumerate() {
        if p != 0.0 {
            g.space.decode_into(i, &mut eta);
            s += p * f(&eta);
        }
    }
    s
}

/// Writes `state_index, eta_1..eta_L, probability` rows.
pub fn write_pi_csv<W: std::io::Write>(g: &SparseGenerator, pi: &[f64], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["state_index".to_string()];
    header.extend((1..=g.space.l).map(|i| format!("eta_{i}")));
    header.push("probability".into());
    out.write_record(&header)?;
    for (i, p) in pi.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(g.space.decode(i).iter().map(|n| n.to_string()));
        rec.push(format!("{p:e}"));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{build_generator, check_detailed_balance};
    use crate::model::{equilibrium_marginal, Family, ModelSpec};

    #[test]
    fn two_state_sep() {
        let spec = ModelSpec::with_rates(Family::SEP, 1, Some(1.0), 1.0, 1.0, 1.0, 1.0);
        let g = build_generator(&spec, 0).unwrap();
        let s = stationary_distribution(&g).unwrap();
        assert!((s.pi[0] - 0.5).abs() < 1e-14 && (s.pi[1] - 0.5).abs() < 1e-14);
        assert!(s.residual < 1e-14);
    }

    #[test]
    fn irw_equilibrium_is_product_poisson() {
        let spec = ModelSpec::with_rates(Family::IRW, 2, None, 1.0, 1.0, 2.0, 2.0);
        let g = build_generator(&spec, 24).unwrap();
        let s = stationary_distribution(&g).unwrap();
        assert!(s.residual < 1e-12);
        let law = equilibrium_marginal(&spec).unwrap();
        for i in [0usize, 3, 17, 50] {
            let eta = g.space.decode(i);
            let want: f64 = eta.iter().map(|&n| law.ln_pmf(n as u64).exp()).product();
            assert!((s.pi[i] - want).abs() < 1e-13, "{eta:?}");
        }
        assert!(check_detailed_balance(&g, &s.pi) < 1e-12);
    }

    #[test]
    fn power_iteration_agrees_and_parallel_is_identical() {
        let spec = ModelSpec::with_rates(Family::SEP, 3, Some(2.0), 1.0, 1.0, 0.5, 1.5);
        let g = build_generator(&spec, 0).unwrap();
        let lu = stationary_distribution(&g).unwrap();
        let seq = power_iteration(&g, 1e-13, 2_000_000, false).unwrap();
        let par = power_iteration(&g, 1e-13, 2_000_000, true).unwrap();
        for i in 0..g.n() {
            assert!((lu.pi[i] - seq.pi[i]).abs() < 1e-11);
            assert!((seq.pi[i] - par.pi[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn sep_off_equilibrium_breaks_detailed_balance() {
        let spec = ModelSpec::with_rates(Family::SEP, 2, Some(1.0), 1.0, 1.0, 1.0, 2.0);
        let g = build_generator(&spec, 0).unwrap();
        let s = stationary_distribution(&g).unwrap();
        assert!(check_detailed_balance(&g, &s.pi) > 1e-3);
    }

    #[test]
    fn pi_csv_layout() {
        let spec = ModelSpec::with_rates(Family::SEP, 2, Some(1.0), 1.0, 1.0, 1.0, 1.0);
        let g = build_generator(&spec, 0).unwrap();
        let s = stationary_distribution(&g).unwrap();
        let mut buf = Vec::new();
        write_pi_csv(&g, &s.pi, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("state_index,eta_1,eta_2,probability\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
