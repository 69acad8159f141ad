#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use selbench::covariates::{CovariateTable, TARGET_CORRELATIONS};
use selbench::synth::{synthesize_covariates, SyntheticMargins};

pub const FAMILIES: [&str; 4] = ["group_corr", "heteroskedastic", "iid", "non-additive"];

/// Correlation matrix of the eight covariates, row and column order
/// x1, x3, x10, x14, x15, x21, x24, x43.
pub const REFERENCE_CORRELATIONS: [[f64; 8]; 8] = [
    [1.00, 0.04, -0.07, -0.03, -0.04, -0.07, 0.03, -0.01],
    [0.04, 1.00, -0.02, 0.03, -0.02, -0.10, -0.16, 0.13],
    [-0.07, -0.02, 1.00, 0.04, 0.09, -0.02, -0.10, -0.07],
    [-0.03, 0.03, 0.04, 1.00, 0.09, -0.03, -0.08, 0.07],
    [-0.04, -0.02, 0.09, 0.09, 1.00, -0.03, 0.04, -0.04],
    [-0.07, -0.10, -0.02, -0.03, -0.03, 1.00, 0.20, -0.00],
    [0.03, -0.16, -0.10, -0.08, 0.04, 0.20, 1.00, -0.11],
    [-0.01, 0.13, -0.07, 0.07, -0.04, -0.00, -0.11, 1.00],
];

/// (ξ, η, κ1, κ2) of the eight cases, case k at index k − 1.
pub const CASES: [(f64, f64, f64, f64); 8] = [
    (1.0 / 3.0, 0.25, 0.5, 0.0),
    (1.0 / 3.0, 0.25, 3.0, -1.0),
    (1.0 / 3.0, 1.25, 0.5, 0.0),
    (1.0 / 3.0, 1.25, 3.0, -1.0),
    (2.0, 0.25, 0.5, 0.0),
    (2.0, 0.25, 3.0, -1.0),
    (2.0, 1.25, 0.5, 0.0),
    (2.0, 1.25, 3.0, -1.0),
];

pub fn bits_of_case(case: usize) -> String {
    format!("{:03b}", case - 1)
}

pub fn phi(x: f64) -> f64 {
    0.5 * puruspe::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn pop_var(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

pub fn sample_var(v: &[f64]) -> f64 {
    pop_var(v) * v.len() as f64 / (v.len() as f64 - 1.0)
}

/// Surfaces recomputed from the unit covariates.
pub struct Surfaces {
    pub pi: Vec<f64>,
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sigma_y: f64,
}

pub fn surfaces(table: &CovariateTable, case: usize) -> Surfaces {
    let (xi, eta, k1, k2) = CASES[case - 1];
    let mut s = Surfaces {
        pi: vec![],
        mu: vec![],
        tau: vec![],
        sigma: vec![],
        sigma_y: 0.0,
    };
    for u in table.units() {
        let f = u.x1 + u.x43 + 0.3 * (u.x10 - 1.0);
        let pi = 1.0 / (1.0 + (k1 * f + k2).exp());
        s.pi.push(pi);
        s.mu.push(-(phi(pi)).sin() + u.x43);
        s.tau.push(xi * (u.x3 * u.x24 + (u.x14 - 1.0) - (u.x15 - 1.0)));
        s.sigma.push(0.4 + (f64::from(u.x21) - 1.0) / 15.0);
    }
    let m: Vec<f64> = (0..s.pi.len()).map(|i| s.mu[i] + s.pi[i] * s.tau[i]).collect();
    s.sigma_y = eta * pop_var(&m).sqrt();
    s
}

pub fn synthetic(n: usize, seed: u64) -> CovariateTable {
    synthesize_covariates(n, seed, &TARGET_CORRELATIONS, &SyntheticMargins::default()).unwrap()
}

/// Header and numeric rows of a small CSV file.
pub fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

pub fn column(rows: &[Vec<f64>], j: usize) -> Vec<f64> {
    rows.iter().map(|r| r[j]).collect()
}

/// Every regular file under `root`, keyed by `/`-separated relative path.
pub fn walk(root: &Path) -> BTreeMap<String, PathBuf> {
    fn go(root: &Path, dir: &Path, out: &mut BTreeMap<String, PathBuf>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                go(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap();
                let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                out.insert(key, p);
            }
        }
    }
    let mut out = BTreeMap::new();
    go(root, root, &mut out);
    out
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
