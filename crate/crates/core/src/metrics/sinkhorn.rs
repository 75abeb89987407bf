//! Entropic optimal transport between uniform point sets, in the log domain.

/// Outcome of [`sinkhorn_uniform`].
#[derive(Debug, Clone)]
pub struct SinkhornPlan {
    /// Row-major `n x m` transport plan; rows sum to `1/n` on exit.
    pub plan: Vec<f64>,
    /// `<plan, cost>`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// L1 violation of the column marginals at exit.
    pub marginal_error: f64,
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Alternating dual updates for uniform marginals `1/n` and `1/m` on a
/// row-major `n x m` cost. Stops when the column-marginal error drops below
/// `tol` or after `max_iters` sweeps.
///
/// After one log-domain sweep the iterations run on scaling vectors over a
/// kernel built from the current potentials; the scalings are folded back
/// into the potentials whenever they drift far from one. If a kernel product
/// underflows, the remaining sweeps run fully in the log domain.
pub fn sinkhorn_uniform(cost: &[f64], n: usize, m: usize, eps: f64, max_iters: usize, tol: f64) -> SinkhornPlan {
    assert_eq!(cost.len(), n * m);
    assert!(eps > 0.0);
    let (a, b) = (1.0 / n as f64, 1.0 / m as f64);
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let finish = |f: &[f64], g: &[f64], iterations: usize, marginal_error: f64, converged: bool| {
        let mut plan = vec![0.0; n * m];
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..m {
                let p = ((f[i] + g[j] - cost[i * m + j]) / eps).exp();
                plan[i * m + j] = p;
                total += p * cost[i * m + j];
            }
        }
        SinkhornPlan { plan, cost: total, iterations, converged, marginal_error }
    };
    if max_iters == 0 {
        let err = column_error(cost, &f, &g, n, m, eps);
        return finish(&f, &g, 0, err, false);
    }
    log_sweep(cost, &mut f, &mut g, n, m, eps);
    let mut iterations = 1;

    let kernel = |f: &[f64], g: &[f64]| -> Vec<f64> {
        let mut k = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                k[i * m + j] = ((f[i] + g[j] - cost[i * m + j]) / eps).exp();
            }
        }
        k
    };
    let mut k = kernel(&f, &g);
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut ktu = vec![0.0; m];
    let mut kv = vec![0.0; n];
    loop {
        ktu.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let row = &k[i * m..(i + 1) * m];
            for j in 0..m {
                ktu[j] += row[j] * u[i];
            }
        }
        let err: f64 = (0..m).map(|j| (v[j] * ktu[j] - b).abs()).sum();
        if err < tol {
            absorb(&mut f, &u, eps);
            absorb(&mut g, &v, eps);
            return finish(&f, &g, iterations, err, true);
        }
        if iterations >= max_iters {
            absorb(&mut f, &u, eps);
            absorb(&mut g, &v, eps);
            return finish(&f, &g, iterations, err, false);
        }
        if ktu.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            break;
        }
        for j in 0..m {
            v[j] = b / ktu[j];
        }
        for i in 0..n {
            kv[i] = k[i * m..(i + 1) * m].iter().zip(&v).map(|(x, y)| x * y).sum();
        }
        if kv.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            break;
        }
        for i in 0..n {
            u[i] = a / kv[i];
        }
        iterations += 1;
        let drift = u.iter().chain(&v).map(|x| x.ln().abs()).fold(0.0, f64::max);
        if drift > ABSORB_LOG {
            absorb(&mut f, &u, eps);
            absorb(&mut g, &v, eps);
            u.iter_mut().for_each(|x| *x = 1.0);
            v.iter_mut().for_each(|x| *x = 1.0);
            k = kernel(&f, &g);
        }
    }
    // underflow: potentials from the last complete sweep are still valid
    absorb(&mut f, &u, eps);
    absorb(&mut g, &v, eps);
    let mut err = column_error(cost, &f, &g, n, m, eps);
    while err >= tol && iterations < max_iters {
        log_sweep(cost, &mut f, &mut g, n, m, eps);
        iterations += 1;
        err = column_error(cost, &f, &g, n, m, eps);
    }
    finish(&f, &g, iterations, err, err < tol)
}

/// Scalings beyond `e^ABSORB_LOG` are folded into the potentials.
const ABSORB_LOG: f64 = 30.0;

fn absorb(potential: &mut [f64], scaling: &[f64], eps: f64) {
    for (p, s) in potential.iter_mut().zip(scaling) {
        *p += eps * s.ln();
    }
}

/// One log-domain update of `g` then `f`.
fn log_sweep(cost: &[f64], f: &mut [f64], g: &mut [f64], n: usize, m: usize, eps: f64) {
    let (log_a, log_b) = (-(n as f64).ln(), -(m as f64).ln());
    for j in 0..m {
        let lse = logsumexp((0..n).map(|i| (f[i] - cost[i * m + j]) / eps));
        g[j] = eps * (log_b - lse);
    }
    for i in 0..n {
        let row = &cost[i * m..(i + 1) * m];
        let lse = logsumexp(row.iter().zip(g.iter()).map(|(c, gj)| (gj - c) / eps));
        f[i] = eps * (log_a - lse);
    }
}

fn column_error(cost: &[f64], f: &[f64], g: &[f64], n: usize, m: usize, eps: f64) -> f64 {
    (0..m)
        .map(|j| {
            let s: f64 = (0..n).map(|i| ((f[i] + g[j] - cost[i * m + j]) / eps).exp()).sum();
            (s - 1.0 / m as f64).abs()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_swap_has_zero_cost() {
        let cost = [1.0, 0.0, 0.0, 1.0];
        let s = sinkhorn_uniform(&cost, 2, 2, 0.01, 500, 1e-10);
        assert!(s.converged);
        assert!(s.cost < 1e-12);
        assert!((s.plan[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reports_non_convergence() {
        let cost = [0.0, 1.0, 4.0, 0.3, 0.0, 2.0, 0.7, 3.2, 0.0];
        let s = sinkhorn_uniform(&cost, 3, 3, 1.0, 1, 1e-12);
        assert!(s.marginal_error > 1e-12);
        assert!(!s.converged);
        assert_eq!(s.iterations, 1);
    }

    #[test]
    fn scaling_iterations_match_log_domain() {
        use rand::Rng;
        let mut rng = crate::rng::rng_from(9);
        let (n, eps, iters) = (20, 0.005, 200);
        let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..2.0)).collect();
        let s = sinkhorn_uniform(&cost, n, n, eps, iters, 1e-6);
        let (mut f, mut g) = (vec![0.0; n], vec![0.0; n]);
        let mut it = 0;
        loop {
            log_sweep(&cost, &mut f, &mut g, n, n, eps);
            it += 1;
            if column_error(&cost, &f, &g, n, n, eps) < 1e-6 || it == iters {
                break;
            }
        }
        let reference: f64 =
            (0..n * n).map(|k| ((f[k / n] + g[k % n] - cost[k]) / eps).exp() * cost[k]).sum();
        assert_eq!(s.iterations, it);
        assert!((s.cost - reference).abs() < 1e-9, "{} vs {reference}", s.cost);
    }
}
