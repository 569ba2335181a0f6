//! Nelder-Mead simplex minimization for the iterative index estimator.

/// Options for the simplex search. The initial simplex perturbs each
/// coordinate by 5 percent of its value (0.00025 when zero), the usual
/// fminsearch construction.
#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    /// Terminate when the simplex diameter (max infinity-norm distance to
    /// the best vertex) falls below this.
    pub tol: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_evals: 2000,
        }
    }
}

/// Standard Nelder-Mead with reflection 1, expansion 2, contraction 0.5,
/// shrink 0.5. Infinite objective values are allowed (treated as worse
/// than any finite value); returns the best vertex seen.
pub fn nelder_mead<F>(mut objective: F, x0: &[f64], opts: NelderMeadOptions) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = x0.len();
    if dim == 0 {
        return Vec::new();
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(x0.to_vec());
    for i in 0..dim {
        let mut v = x0.to_vec();
        v[i] += if v[i] != 0.0 { 0.05 * v[i] } else { 0.00025 };
        simplex.push(v);
    }
    let mut scores: Vec<f64> = simplex.iter().map(|v| objective(v)).collect();
    let mut evals = simplex.len();

    let better = |a: f64, b: f64| a < b || (a.is_nan() && false) || (!a.is_nan() && b.is_nan());

    while evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(std::cmp::Ordering::Equal));
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];

        let diameter = simplex
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&simplex[best])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if diameter < opts.tol {
            break;
        }

        // Centroid of all vertices but the worst.
        let mut centroid = vec![0.0; dim];
        for &i in order.iter().take(dim) {
            for d in 0..dim {
                centroid[d] += simplex[i][d];
            }
        }
        for c in &mut centroid {
            *c /= dim as f64;
        }

        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&simplex[worst])
            .map(|(c, w)| c + alpha * (c - w))
            .collect();
        let f_r = objective(&reflect);
        evals += 1;

        if better(f_r, scores[best]) {
            // Expansion
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&reflect)
                .map(|(c, r)| c + gamma * (r - c))
                .collect();
            let f_e = objective(&expand);
            evals += 1;
            if better(f_e, f_r) {
                simplex[worst] = expand;
                scores[worst] = f_e;
            } else {
                simplex[worst] = reflect;
                scores[worst] = f_r;
            }
            continue;
        }
        if better(f_r, scores[second_worst]) {
            simplex[worst] = reflect;
            scores[worst] = f_r;
            continue;
        }

        // Contraction: outside when the reflection improved on the worst,
        // inside otherwise.
        let contracted: Vec<f64> = if better(f_r, scores[worst]) {
            centroid
                .iter()
                .zip(&reflect)
                .map(|(c, r)| c + rho * (r - c))
                .collect()
        } else {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + rho * (w - c))
                .collect()
        };
        let f_c = objective(&contracted);
        evals += 1;
        if better(f_c, scores[worst].min(f_r)) {
            simplex[worst] = contracted;
            scores[worst] = f_c;
            continue;
        }

        // Shrink toward the best vertex.
        for &i in order.iter().skip(1) {
            for d in 0..dim {
                simplex[i][d] = simplex[best][d] + sigma * (simplex[i][d] - simplex[best][d]);
            }
            scores[i] = objective(&simplex[i]);
            evals += 1;
            if evals >= opts.max_evals {
                break;
            }
        }
    }

    let mut best = 0;
    for i in 1..scores.len() {
        if better(scores[i], scores[best]) {
            best = i;
        }
    }
    simplex.swap_remove(best)
}
