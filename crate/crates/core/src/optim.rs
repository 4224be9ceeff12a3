//! Small derivative-free minimizers used by the fitting routines.

/// Outcome of a minimization.
#[derive(Clone, Debug)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder-Mead simplex minimization.
///
/// Stops when the simplex spread in every coordinate is below `xtol`
/// (absolute, so callers should work in log space for relative tolerance)
/// or the spread of function values is below `ftol·|f|`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], step: &[f64], xtol: f64, ftol: f64, max_iter: usize) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| nan_to_inf(f(v))).collect();

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let fspread = values[n] - values[0];
        let xspread = (1..=n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (simplex[i][j] - simplex[0][j]).abs())
            .fold(0.0, f64::max);
        if xspread < xtol || fspread <= ftol * values[0].abs() {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for v in &simplex[..n] {
            for j in 0..n {
                centroid[j] += v[j] / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };

        let xr = along(-alpha);
        let fr = nan_to_inf(f(&xr));
        if fr < values[0] {
            let xe = along(-gamma);
            let fe = nan_to_inf(f(&xe));
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = along(-rho);
                let fc = nan_to_inf(f(&xc));
                (xc, fc)
            } else {
                let xc = along(rho);
                let fc = nan_to_inf(f(&xc));
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    for j in 0..n {
                        simplex[i][j] = simplex[0][j] + sigma * (simplex[i][j] - simplex[0][j]);
                    }
                    values[i] = nan_to_inf(f(&simplex[i]));
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        iterations,
        converged,
    }
}

/// Golden-section search for a minimum of a unimodal function on `[a, b]`.
pub fn golden_section<F>(mut f: F, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = nan_to_inf(f(c));
    let mut fd = nan_to_inf(f(d));
    for _ in 0..max_iter {
        if (b - a).abs() < tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = nan_to_inf(f(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = nan_to_inf(f(d));
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Least-squares fit of `y ≈ a·m + b`; returns `(a, b, sum of squared residuals)`.
pub fn affine_fit(model: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = model.len() as f64;
    let (sm, sy) = (model.iter().sum::<f64>(), y.iter().sum::<f64>());
    let (mm, my) = (sm / n, sy / n);
    let mut smm = 0.0;
    let mut smy = 0.0;
    for (m, v) in model.iter().zip(y) {
        smm += (m - mm) * (m - mm);
        smy += (m - mm) * (v - my);
    }
    let a = if smm > 0.0 { smy / smm } else { 0.0 };
    let b = my - a * mm;
    let ssr = model.iter().zip(y).map(|(m, v)| (v - a * m - b).powi(2)).sum();
    (a, b, ssr)
}

fn nan_to_inf(x: f64) -> f64 {
    if x.is_nan() {
        f64::INFINITY
    } else {
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_finds_rosenbrock_minimum() {
        let r = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &[0.5, 0.5],
            1e-10,
            1e-14,
            10_000,
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn golden_section_parabola() {
        let (x, _) = golden_section(|x| (x - 0.3).powi(2), -2.0, 3.0, 1e-10, 200);
        assert!((x - 0.3).abs() < 1e-8);
    }

    #[test]
    fn affine_fit_is_exact_on_affine_data() {
        let m: Vec<f64> = (0..10).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = m.iter().map(|v| 2.5 * v - 0.7).collect();
        let (a, b, ssr) = affine_fit(&m, &y);
        assert!((a - 2.5).abs() < 1e-12 && (b + 0.7).abs() < 1e-12 && ssr < 1e-20);
    }
}
