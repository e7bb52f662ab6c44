//! Reference optima for suboptimality axes, cached on disk.

use std::fs;
use std::path::{Path, PathBuf};

use dynanewton_core::dataset::Dataset;
use dynanewton_core::newton::{minimize, NewtonConfig};
use dynanewton_core::objective::{LossKind, RegularizedObjective};
use dynanewton_core::work::{Silent, Work};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Overrides the cache location.
pub const CACHE_ENV: &str = "DYNANEWTON_CACHE_DIR";

/// Stopping rule `λ²/2 <= REFERENCE_EPS` for the reference solve.
pub const REFERENCE_EPS: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceOptimum {
    pub value: f64,
    pub nu: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub dataset_hash: String,
    #[serde(skip)]
    pub cached: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum ReferenceError {
    #[error("reference solve did not converge ({iterations} iterations, decrement {lambda:.3e})")]
    NotConverged { iterations: usize, lambda: f64 },
    #[error(transparent)]
    Solver(#[from] dynanewton_core::Error),
}

/// SHA-256 over the dimension, CSR arrays and labels.
pub fn dataset_hash(ds: &Dataset) -> String {
    let mut h = Sha256::new();
    let (indptr, indices, values) = ds.csr();
    h.update((ds.dim() as u64).to_le_bytes());
    h.update((ds.len() as u64).to_le_bytes());
    for &p in indptr {
        h.update((p as u64).to_le_bytes());
    }
    for &j in indices {
        h.update(j.to_le_bytes());
    }
    for &v in values {
        h.update(v.to_bits().to_le_bytes());
    }
    for &y in ds.labels() {
        h.update(y.to_bits().to_le_bytes());
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn default_cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("dynanewton-reference"))
}

fn cache_file(dir: &Path, hash: &str, loss: LossKind, nu: f64) -> PathBuf {
    let loss = match loss {
        LossKind::Logistic => "logistic",
        LossKind::Quadratic => "quadratic",
    };
    dir.join(format!("{hash}-{loss}-{:016x}.json", nu.to_bits()))
}

/// Minimum of `f^N_ν` by full-batch Newton to `λ²/2 <= 1e-14`.
///
/// With `cache_dir` set, the value is looked up under a key made of the
/// dataset hash, the loss and the exact bits of `ν`, and stored after a
/// fresh solve. Cache IO failures only cost a recomputation.
pub fn reference_optimum(
    ds: &Dataset,
    loss: LossKind,
    nu: f64,
    cache_dir: Option<&Path>,
) -> Result<ReferenceOptimum, ReferenceError> {
    let hash = dataset_hash(ds);
    let path = cache_dir.map(|d| cache_file(d, &hash, loss, nu));
    if let Some(p) = &path {
        if let Some(hit) = fs::read(p)
            .ok()
            .and_then(|b| serde_json::from_slice::<ReferenceOptimum>(&b).ok())
            .filter(|r| r.nu.to_bits() == nu.to_bits() && r.dataset_hash == hash)
        {
            return Ok(ReferenceOptimum { cached: true, ..hit });
        }
    }
    let obj = RegularizedObjective::new(loss, ds.full(), nu)?;
    let cfg = NewtonConfig {
        eps: REFERENCE_EPS,
        max_iters: 200,
        ..Default::default()
    };
    let mut work = Work::new(ds.len());
    let out = minimize(&obj, &vec![0.0; ds.dim()], &cfg, &mut work, &mut Silent)?;
    if !out.converged {
        return Err(ReferenceError::NotConverged {
            iterations: out.iterations,
            lambda: out.lambda,
        });
    }
    let reference = ReferenceOptimum {
        value: obj.value(&out.x)?,
        nu,
        lambda: out.lambda,
        iterations: out.iterations,
        dataset_hash: hash,
        cached: false,
    };
    if let Some(p) = path {
        let write = || -> std::io::Result<()> {
            fs::create_dir_all(p.parent().expect("cache file has a parent"))?;
            let tmp = p.with_extension("tmp");
            fs::write(&tmp, serde_json::to_vec_pretty(&reference)?)?;
            fs::rename(tmp, p)
        };
        let _ = write();
    }
    Ok(reference)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dynanewton_core::dataset::synthesize_logistic;

    #[test]
    fn quadratic_matches_closed_form() {
        let ds = synthesize_logistic(50, 3, 1, 1.0).unwrap().dataset;
        let nu = 0.2;
        let r = reference_optimum(&ds, LossKind::Quadratic, nu, None).unwrap();
        // normal equations (ZᵀZ/n + νI) x = Zᵀy/n by Cramer's rule
        let n = ds.len() as f64;
        let mut a = [[0.0; 3]; 3];
        let mut b = [0.0; 3];
        for (row, y) in ds.full().rows() {
            let z = row.to_dense(3);
            for i in 0..3 {
                b[i] += z[i] * y / n;
                for j in 0..3 {
                    a[i][j] += z[i] * z[j] / n;
                }
            }
        }
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += nu;
        }
        let det = |m: [[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det(a);
        let x: Vec<f64> = (0..3)
            .map(|k| {
                let mut m = a;
                for i in 0..3 {
                    m[i][k] = b[i];
                }
                det(m) / d
            })
            .collect();
        let obj = RegularizedObjective::new(LossKind::Quadratic, ds.full(), nu).unwrap();
        assert!((r.value - obj.value(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synthesize_logistic(200, 4, 2, 1.0).unwrap().dataset;
        let fresh = reference_optimum(&ds, LossKind::Logistic, 1e-3, Some(dir.path())).unwrap();
        assert!(!fresh.cached);
        let hit = reference_optimum(&ds, LossKind::Logistic, 1e-3, Some(dir.path())).unwrap();
        assert!(hit.cached);
        assert_eq!(hit.value.to_bits(), fresh.value.to_bits());
        // a different ν or dataset misses
        assert!(!reference_optimum(&ds, LossKind::Logistic, 2e-3, Some(dir.path())).unwrap().cached);
        let other = synthesize_logistic(200, 4, 3, 1.0).unwrap().dataset;
        assert_ne!(dataset_hash(&ds), dataset_hash(&other));
        assert!(!reference_optimum(&other, LossKind::Logistic, 1e-3, Some(dir.path())).unwrap().cached);
    }
}
