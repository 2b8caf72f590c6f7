//! Uniformization helpers for matrix-exponential actions.

/// `sum_n Poisson(n; mu) P^n f`, where `step` applies the uniformized kernel `P`.
///
/// Long horizons are split so the Poisson weights never underflow.
pub(crate) fn uniformized_sum<F>(f: &[f64], mu: f64, step: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let pieces = (mu / 400.0).ceil().max(1.0) as usize;
    let mut v = f.to_vec();
    for _ in 0..pieces {
        v = poisson_sum(&v, mu / pieces as f64, &step);
    }
    v
}

fn poisson_sum(f: &[f64], mu: f64, step: &dyn Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut weight = (-mu).exp();
    let mut acc: Vec<f64> = f.iter().map(|v| v * weight).collect();
    let mut cur = f.to_vec();
    let mut mass = weight;
    let mut n = 0usize;
    while 1.0 - mass > 1e-15 && n < 100_000 {
        n += 1;
        cur = step(&cur);
        weight *= mu / n as f64;
        mass += weight;
        for (a, c) in acc.iter_mut().zip(&cur) {
            *a += weight * c;
        }
    }
    acc
}
