//! Self-checks behind the `check` subcommand: derivative oracles, exactness
//! of Newton on quadratics, the ν lower bound, the two-loop recursion and
//! the determinism of the stochastic baseline. Each check is small enough to
//! finish in well under a second.

use dynanewton_core::baselines::{saga_run, SagaConfig};
use dynanewton_core::continuation::nu_lower_bound;
use dynanewton_core::dataset::{synthesize_logistic, Dataset};
use dynanewton_core::lbfgs::{two_loop_direction, LbfgsMemory};
use dynanewton_core::newton::{decrement, minimize, NewtonConfig};
use dynanewton_core::objective::{LossKind, RegularizedObjective};
use dynanewton_core::work::{Silent, Work};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = fn() -> Result<String, String>;

const CHECKS: &[(&str, Check)] = &[
    ("gradient finite differences", gradient_fd),
    ("hessian-vector finite differences", hessian_fd),
    ("newton exact on quadratics", quadratic_exactness),
    ("nu lower bound boundary identity", lemma2_identity),
    ("gradient norm certifies decrement", gradient_norm_certificate),
    ("two-loop recursion vs explicit updates", two_loop_oracle),
    ("saga determinism", saga_determinism),
    ("svmlight round trip", svmlight_round_trip),
];

pub fn run_all() -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            let (passed, detail) = match f() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult { name, passed, detail }
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect()
}

/// Random `(loss, x, data)` triple number `k`.
fn triple(k: u64) -> (LossKind, Dataset, Vec<f64>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + k);
    let d = rng.random_range(2..8);
    let n = rng.random_range(5..60);
    let ds = synthesize_logistic(n, d, k, 1.0).expect("valid").dataset;
    let loss = if k % 2 == 0 { LossKind::Logistic } else { LossKind::Quadratic };
    let x = gaussian(&mut rng, d, 1.5);
    let nu = 10f64.powf(rng.random_range(-4.0..-1.0));
    (loss, ds, x, nu)
}

/// Central differences of the value against the analytic gradient.
pub fn gradient_fd() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let (loss, ds, x, nu) = triple(k);
        let obj = RegularizedObjective::new(loss, ds.full(), nu).map_err(|e| e.to_string())?;
        let g = obj.evaluate(&x, false).map_err(|e| e.to_string())?.gradient;
        let h = 1e-6;
        let fd: Vec<f64> = (0..x.len())
            .map(|j| {
                let (mut p, mut m) = (x.clone(), x.clone());
                p[j] += h;
                m[j] -= h;
                (obj.value(&p).unwrap() - obj.value(&m).unwrap()) / (2.0 * h)
            })
            .collect();
        worst = worst.max(rel_err(&g, &fd));
    }
    if worst <= 1e-5 {
        Ok(format!("worst relative error {worst:.2e}"))
    } else {
        Err(format!("relative error {worst:.2e} > 1e-5"))
    }
}

/// Differences of the gradient along a random direction against `H v`.
pub fn hessian_fd() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let (loss, ds, x, nu) = triple(k);
        let obj = RegularizedObjective::new(loss, ds.full(), nu).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let v = gaussian(&mut rng, x.len(), 1.0);
        let hv = obj.hessian_vector(&x, &v).map_err(|e| e.to_string())?;
        let dense = obj.evaluate(&x, true).unwrap().hessian.expect("requested").matvec(&v);
        let h = 1e-5;
        let shifted = |s: f64| {
            let y: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + s * b).collect();
            obj.evaluate(&y, false).unwrap().gradient
        };
        let (gp, gm) = (shifted(h), shifted(-h));
        let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        worst = worst.max(rel_err(&hv, &fd)).max(rel_err(&dense, &fd));
    }
    if worst <= 1e-4 {
        Ok(format!("worst relative error {worst:.2e}"))
    } else {
        Err(format!("relative error {worst:.2e} > 1e-4"))
    }
}

/// One Newton step solves a quadratic; the minimizer comes from Gaussian
/// elimination on the normal equations.
pub fn quadratic_exactness() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let ds = synthesize_logistic(40, 6, 70 + seed, 1.0).unwrap().dataset;
        let nu = 0.05;
        let obj = RegularizedObjective::new(LossKind::Quadratic, ds.full(), nu).unwrap();
        let cfg = NewtonConfig {
            fixed_iters: Some(1),
            ..Default::default()
        };
        let mut work = Work::new(ds.len());
        let out = minimize(&obj, &[0.0; 6], &cfg, &mut work, &mut Silent).map_err(|e| e.to_string())?;
        let exact = normal_equations(&ds, nu);
        worst = worst.max(rel_err(&out.x, &exact));
        if out.iterations != 1 {
            return Err(format!("{} iterations", out.iterations));
        }
    }
    if worst <= 1e-10 {
        Ok(format!("worst error {worst:.2e}"))
    } else {
        Err(format!("error {worst:.2e} > 1e-10"))
    }
}

/// Solve `(ZᵀZ/n + νI) x = Zᵀy/n` by elimination with partial pivoting.
fn normal_equations(ds: &Dataset, nu: f64) -> Vec<f64> {
    let d = ds.dim();
    let n = ds.len() as f64;
    let mut a = vec![vec![0.0; d + 1]; d];
    for (row, y) in ds.full().rows() {
        let z = row.to_dense(d);
        for i in 0..d {
            a[i][d] += z[i] * y / n;
            for j in 0..d {
                a[i][j] += z[i] * z[j] / n;
            }
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += nu;
    }
    for c in 0..d {
        let p = (c..d).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        for r in c + 1..d {
            let f = a[r][c] / a[c][c];
            for k in c..=d {
                a[r][k] -= f * a[c][k];
            }
        }
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let s: f64 = (i + 1..d).map(|j| a[i][j] * x[j]).sum();
        x[i] = (a[i][d] - s) / a[i][i];
    }
    x
}

/// At `ν_min`, `(μ − ν)‖x*_μ‖ = η√ν` and the decrement of `f_ν` at `x*_μ`
/// stays below `η`.
pub fn lemma2_identity() -> Result<String, String> {
    let eta = 0.2;
    let mut worst_rel: f64 = 0.0;
    let mut worst_lambda: f64 = 0.0;
    for k in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + k);
        let d = rng.random_range(2..10);
        let n = rng.random_range(50..400);
        let ds = synthesize_logistic(n, d, 500 + k, 2.0).unwrap().dataset;
        let mu = 10f64.powf(rng.random_range(-3.0..-1.0));
        let obj = RegularizedObjective::new(LossKind::Logistic, ds.full(), mu).unwrap();
        let cfg = NewtonConfig {
            eps: 1e-20,
            ..Default::default()
        };
        let mut work = Work::new(n);
        let star = minimize(&obj, &vec![0.0; d], &cfg, &mut work, &mut Silent).map_err(|e| e.to_string())?;
        let norm = star.x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nu = nu_lower_bound(mu, norm, eta);
        let lhs = (mu - nu) * norm;
        let rhs = eta * nu.sqrt();
        worst_rel = worst_rel.max((lhs - rhs).abs() / rhs);
        let lam = decrement(&obj.with_nu(nu).unwrap(), &star.x).map_err(|e| e.to_string())?;
        worst_lambda = worst_lambda.max(lam);
    }
    if worst_rel <= 1e-8 && worst_lambda <= eta {
        Ok(format!("identity error {worst_rel:.2e}, largest decrement {worst_lambda:.4}"))
    } else {
        Err(format!("identity error {worst_rel:.2e}, largest decrement {worst_lambda:.4}"))
    }
}

/// Whenever `‖∇f_ν(x)‖ <= η√ν`, the decrement is at most `η`.
pub fn gradient_norm_certificate() -> Result<String, String> {
    let eta = 0.2;
    let mut certified = 0;
    for k in 0..200 {
        let (_, ds, x, nu) = triple(k);
        let obj = RegularizedObjective::new(LossKind::Logistic, ds.full(), nu).unwrap();
        let mut work = Work::new(ds.len());
        let star = minimize(&obj, &x, &NewtonConfig::default(), &mut work, &mut Silent).map_err(|e| e.to_string())?;
        // walk from x towards the minimizer so some points satisfy the test
        for t in [0.0, 0.5, 0.9, 0.99] {
            let y: Vec<f64> = x.iter().zip(&star.x).map(|(a, b)| a + t * (b - a)).collect();
            let g = obj.evaluate(&y, false).unwrap().gradient;
            let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gn <= eta * nu.sqrt() {
                certified += 1;
                let lam = decrement(&obj, &y).unwrap();
                if lam > eta {
                    return Err(format!("triple {k}: decrement {lam} with certified gradient"));
                }
            }
        }
    }
    Ok(format!("{certified} certified points"))
}

/// Two-loop direction against the dense BFGS inverse update
/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ` started from `γI`.
pub fn two_loop_oracle() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = rng.random_range(2..6);
        let pairs = 1 + (seed % 3) as usize;
        let mut mem = LbfgsMemory::new(10);
        let mut stored = Vec::new();
        while stored.len() < pairs {
            let s = gaussian(&mut rng, d, 1.0);
            // y = A s with A SPD keeps the curvature positive
            let y: Vec<f64> = s.iter().enumerate().map(|(i, v)| (1.0 + i as f64) * v + 0.1 * s[0]).collect();
            if mem.push(s.clone(), y.clone()) {
                stored.push((s, y));
            }
        }
        let gamma = mem.gamma();
        let mut h: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| if i == j { gamma } else { 0.0 }).collect())
            .collect();
        for (s, y) in &stored {
            let rho = 1.0 / s.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
            let left: Vec<Vec<f64>> = (0..d)
                .map(|i| (0..d).map(|j| f64::from(u8::from(i == j)) - rho * s[i] * y[j]).collect())
                .collect();
            let prod = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
                (0..d)
                    .map(|i| (0..d).map(|j| (0..d).map(|k| a[i][k] * b[k][j]).sum()).collect())
                    .collect()
            };
            let right: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| left[j][i]).collect()).collect();
            h = prod(&prod(&left, &h), &right);
            for i in 0..d {
                for j in 0..d {
                    h[i][j] += rho * s[i] * s[j];
                }
            }
        }
        let g = gaussian(&mut rng, d, 1.0);
        let expected: Vec<f64> = (0..d).map(|i| -(0..d).map(|j| h[i][j] * g[j]).sum::<f64>()).collect();
        worst = worst.max(rel_err(&two_loop_direction(&mem, &g), &expected));
    }
    if worst <= 1e-10 {
        Ok(format!("worst relative error {worst:.2e}"))
    } else {
        Err(format!("relative error {worst:.2e} > 1e-10"))
    }
}

pub fn saga_determinism() -> Result<String, String> {
    let ds = synthesize_logistic(300, 5, 2, 1.0).unwrap().dataset;
    let obj = RegularizedObjective::new(LossKind::Logistic, ds.full(), 1e-3).unwrap();
    let run = |seed| {
        let cfg = SagaConfig {
            epochs: 3,
            seed,
            ..Default::default()
        };
        let mut work = Work::new(ds.len());
        saga_run(&obj, &[0.0; 5], &cfg, &mut work, &mut Silent).map(|s| s.x)
    };
    let a = run(7).map_err(|e| e.to_string())?;
    let b = run(7).map_err(|e| e.to_string())?;
    let c = run(8).map_err(|e| e.to_string())?;
    match (a == b, a != c) {
        (true, true) => Ok("identical iterates for equal seeds".into()),
        (false, _) => Err("equal seeds diverged".into()),
        (_, false) => Err("different seeds agree".into()),
    }
}

pub fn svmlight_round_trip() -> Result<String, String> {
    let ds = synthesize_logistic(50, 7, 9, 1.0).unwrap().dataset;
    let mut buf = Vec::new();
    crate::svmlight::write(&ds, &mut buf).map_err(|e| e.to_string())?;
    let back = crate::svmlight::parse(buf.as_slice(), Some(ds.dim())).map_err(|e| e.to_string())?;
    if back.csr() == ds.csr() && back.labels() == ds.labels() {
        Ok(format!("{} rows", ds.len()))
    } else {
        Err("parsed dataset differs".into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for r in run_all() {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
