//! Brute-force re-implementations of the metric kernels, shared by the
//! oracle and acceptance suites.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use surrogate_core::{Level, ODNetwork, ZoneCode};

pub fn z(s: impl Into<String>) -> ZoneCode {
    ZoneCode::new(s)
}

pub fn random_coarse(rng: &mut ChaCha8Rng, nodes: usize, density: f64, max_w: u64) -> ODNetwork {
    let mut net = ODNetwork::new(Level::Coarse, Level::Coarse);
    for i in 0..nodes {
        for j in 0..nodes {
            if rng.random::<f64>() < density {
                net.set_weight(z(format!("n{i:02}")), z(format!("n{j:02}")), rng.random_range(1..=max_w));
            }
        }
    }
    net
}

/// Dense matrix over a sorted node list.
pub fn dense(net: &ODNetwork, nodes: &[ZoneCode]) -> Vec<Vec<f64>> {
    nodes
        .iter()
        .map(|o| nodes.iter().map(|d| net.weight(o, d).unwrap_or(0) as f64).collect())
        .collect()
}

pub fn node_list(nets: &[&ODNetwork]) -> Vec<ZoneCode> {
    let set: BTreeSet<ZoneCode> = nets
        .iter()
        .flat_map(|n| n.edges().flat_map(|(o, d, _)| [o.clone(), d.clone()]).collect::<Vec<_>>())
        .collect();
    set.into_iter().collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Weight matrix scaled by the global maximum (self-loops included in the
/// maximum, excluded from triangles).
pub fn scaled(net: &ODNetwork, nodes: &[ZoneCode]) -> Vec<Vec<f64>> {
    let max = net.edges().map(|(_, _, w)| w).max().unwrap() as f64;
    let mut m = dense(net, nodes);
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j { 0.0 } else { *v / max };
        }
    }
    m
}

pub fn clustering_symmetrized_oracle(net: &ODNetwork) -> f64 {
    let nodes = node_list(&[net]);
    let w = scaled(net, &nodes);
    let n = nodes.len();
    let u = |i: usize, j: usize| w[i][j].max(w[j][i]);
    let mut total = 0.0;
    for i in 0..n {
        let k = (0..n).filter(|&j| u(i, j) > 0.0).count();
        if k < 2 {
            continue;
        }
        let mut s = 0.0;
        // Ordered pairs (j, k) count each triangle twice.
        for j in 0..n {
            for l in 0..n {
                if j != l && j != i && l != i {
                    s += (u(i, j) * u(j, l) * u(l, i)).cbrt();
                }
            }
        }
        total += s / (k * (k - 1)) as f64;
    }
    total / n as f64
}

pub fn clustering_directed_oracle(net: &ODNetwork) -> f64 {
    let nodes = node_list(&[net]);
    let w = scaled(net, &nodes);
    let n = nodes.len();
    let c: Vec<Vec<f64>> = w.iter().map(|r| r.iter().map(|v| v.cbrt()).collect()).collect();
    let s: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| c[i][j] + c[j][i]).collect()).collect();
    let mut total = 0.0;
    for i in 0..n {
        let mut cube = 0.0;
        for j in 0..n {
            for l in 0..n {
                cube += s[i][j] * s[j][l] * s[l][i];
            }
        }
        let out_deg = (0..n).filter(|&j| w[i][j] > 0.0).count();
        let in_deg = (0..n).filter(|&j| w[j][i] > 0.0).count();
        let recip = (0..n).filter(|&j| w[i][j] > 0.0 && w[j][i] > 0.0).count();
        let d = out_deg + in_deg;
        let denom = 2.0 * ((d * d.saturating_sub(1)) as f64 - 2.0 * recip as f64);
        if denom > 0.0 {
            total += cube / denom;
        }
    }
    total / n as f64
}

/// Mean shortest path over reachable ordered pairs and their count, by
/// Floyd–Warshall with edge length `1 / w`.
pub fn floyd_warshall_mean(net: &ODNetwork) -> (f64, u64) {
    let nodes = node_list(&[net]);
    let m = nodes.len();
    let mut d = vec![vec![f64::INFINITY; m]; m];
    for (i, row) in dense(net, &nodes).iter().enumerate() {
        d[i][i] = 0.0;
        for (j, w) in row.iter().enumerate() {
            if i != j && *w > 0.0 {
                d[i][j] = 1.0 / w;
            }
        }
    }
    for k in 0..m {
        for i in 0..m {
            for j in 0..m {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    let mut sum = 0.0;
    let mut reachable = 0u64;
    for (i, row) in d.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j && v.is_finite() {
                sum += v;
                reachable += 1;
            }
        }
    }
    (if reachable == 0 { 0.0 } else { sum / reachable as f64 }, reachable)
}

/// Dense two-pass Pearson correlation over the union of the nodes.
pub fn corr2d_oracle(a: &ODNetwork, b: &ODNetwork) -> f64 {
    let nodes = node_list(&[a, b]);
    let x: Vec<f64> = dense(a, &nodes).into_iter().flatten().collect();
    let y: Vec<f64> = dense(b, &nodes).into_iter().flatten().collect();
    pearson(&x, &y)
}

/// Mean squared difference over the pairs present in both networks.
pub fn mse_oracle(b: &ODNetwork, a: &ODNetwork) -> f64 {
    let mut acc = 0.0;
    let mut count = 0.0;
    for (o, d, wb) in b.edges() {
        if let Some(wa) = a.weight(o, d) {
            acc += (wb as f64 - wa as f64).powi(2);
            count += 1.0;
        }
    }
    acc / count
}
