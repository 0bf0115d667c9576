//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use driftscope_core::concept::{AxisKind, MatrixAxis};
use driftscope_core::data::{Batch, DataRecord, DatasetSchema, SourceBatches, SourceInfo};
use rand::Rng;

/// Posterior curve of source `i` computed directly from Bayes' rule over
/// a small grid: labels, class statistics and densities all recomputed
/// from scratch.
pub fn nb_oracle_curve(levels: &[Vec<f64>], confirmations: &[Vec<bool>], i: usize, delta_t: usize) -> Vec<f64> {
    let t_len = levels[i].len();
    let hit: Vec<bool> = (0..t_len).map(|t| confirmations[i][t] || levels[i][t] >= 3.0).collect();
    let labels: Vec<bool> = (0..t_len)
        .map(|t| {
            let mut any = false;
            for u in 0..t_len {
                if u + delta_t >= t && u <= t + delta_t && hit[u] {
                    any = true;
                }
            }
            any
        })
        .collect();
    let peers: Vec<usize> = (0..levels.len()).filter(|&j| j != i).collect();
    let n_yes = labels.iter().filter(|&&y| y).count();
    let prior_yes = (n_yes as f64 + 1.0) / (t_len as f64 + 2.0);
    let prior_no = 1.0 - prior_yes;

    let stats = |j: usize, class: Option<bool>| -> (f64, f64) {
        let vals: Vec<f64> = (0..t_len)
            .filter(|&t| class.is_none_or(|c| labels[t] == c))
            .map(|t| levels[j][t])
            .collect();
        let vals = if vals.is_empty() { (0..t_len).map(|t| levels[j][t]).collect() } else { vals };
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        (mean, var.max(1e-6))
    };
    let yes: Vec<(f64, f64)> = peers.iter().map(|&j| stats(j, Some(true))).collect();
    let no: Vec<(f64, f64)> = peers.iter().map(|&j| stats(j, Some(false))).collect();
    let log_density = |x: f64, (mean, var): (f64, f64)| {
        -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean) * (x - mean) / (2.0 * var)
    };
    (0..t_len)
        .map(|t| {
            let mut ly = prior_yes.ln();
            let mut ln = prior_no.ln();
            for (k, &j) in peers.iter().enumerate() {
                ly += log_density(levels[j][t], yes[k]);
                ln += log_density(levels[j][t], no[k]);
            }
            let top = ly.max(ln);
            let (ey, en) = ((ly - top).exp(), (ln - top).exp());
            ey / (ey + en)
        })
        .collect()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q))).map(|(p, q)| a[p][q] * a[p][q]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

/// Scatter matrix `X_c^T X_c` of mean-centred rows.
pub fn scatter(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    (0..d)
        .map(|i| (0..d).map(|j| rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum()).collect())
        .collect()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Bin of `v` among `bins` equal-width bins over `[lo, hi]`, found by
/// scanning the edges; the top edge belongs to the last bin.
pub fn oracle_bin(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    if !(hi > lo) {
        return 0;
    }
    let mut bin = 0;
    for k in 1..bins {
        if v >= lo + (hi - lo) * k as f64 / bins as f64 {
            bin = k;
        }
    }
    bin
}

/// Bin of a record on a matrix axis, recomputed from the selection.
pub fn oracle_axis_bin(axis: &MatrixAxis, record: &DataRecord, selected: &[&DataRecord]) -> usize {
    match &axis.kind {
        AxisKind::Source { sources } => sources.iter().position(|s| *s == record.source_id).expect("known source"),
        AxisKind::Attribute { index, edges } => {
            let bins = edges.len() - 1;
            let lo = selected.iter().map(|r| r.x[*index]).fold(f64::INFINITY, f64::min);
            let hi = selected.iter().map(|r| r.x[*index]).fold(f64::NEG_INFINITY, f64::max);
            oracle_bin(record.x[*index], lo, hi, bins)
        }
    }
}

/// Random multi-source data laid out in unit segments of 10 seconds.
pub fn random_dataset<R: Rng>(rng: &mut R, sources: usize, dims: usize, segments: usize, max_per_segment: usize) -> (DatasetSchema, Vec<SourceBatches>) {
    let schema = DatasetSchema {
        attribute_names: (0..dims).map(|k| format!("a{k}")).collect(),
        label_name: "label".into(),
        sources: (0..sources).map(|i| SourceInfo { id: format!("s{i}"), name: format!("s{i}") }).collect(),
        unit: 10,
        time_span: (0, 10 * segments as i64),
        label_predicate: None,
    };
    let data = (0..sources)
        .map(|i| {
            let id = format!("s{i}");
            let batches = (0..segments)
                .map(|t| {
                    let n = rng.random_range(0..=max_per_segment);
                    let mut b = Batch::empty(&id, t);
                    for k in 0..n {
                        let x: Vec<f64> = (0..dims).map(|_| (rng.random_range(0.0..10.0f64) * 100.0).round() / 100.0).collect();
                        let y = u8::from(x[0] + rng.random_range(-3.0..3.0) > 5.0);
                        b.records.push(DataRecord { source_id: id.clone(), timestamp: 10 * t as i64 + k as i64 % 10, x, y });
                    }
                    b
                })
                .collect();
            SourceBatches { source_id: id, batches }
        })
        .collect();
    (schema, data)
}
