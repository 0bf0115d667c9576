//! Shared 2-D PCA plane for parameter snapshots.
//!
//! One basis is fitted over every source and every segment so that all
//! trajectories live in the same coordinates and can be compared directly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ProjectionError;
use crate::learner::ParameterSnapshot;

/// Scatter eigenvalues at or below this fraction of the largest are treated
/// as zero and their directions replaced by a canonical completion.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionBasis {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    pub singular_values: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub source: String,
    pub segment: usize,
    pub xy: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn of<'a>(points: impl IntoIterator<Item = &'a TrajectoryPoint>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Bounds { min: first.xy, max: first.xy };
        for p in it {
            for k in 0..2 {
                b.min[k] = b.min[k].min(p.xy[k]);
                b.max[k] = b.max[k].max(p.xy[k]);
            }
        }
        Some(b)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Flips `v` so its largest-magnitude coordinate (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut pivot = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[pivot].abs() {
            pivot = i;
        }
    }
    if v[pivot] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// First standard basis vector that survives Gram-Schmidt against `taken`.
fn complete(taken: &[Vec<f64>], dims: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for axis in 0..dims {
        let mut v = vec![0.0; dims];
        v[axis] = 1.0;
        for u in taken {
            let d = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 0.5 {
            v.iter_mut().for_each(|x| *x /= norm);
            return v;
        }
        if best.as_ref().is_none_or(|(n, _)| norm > *n) {
            best = Some((norm, v));
        }
    }
    // every axis nearly spanned already; take the least-covered one
    let (norm, mut v) = best.expect("dims >= 1");
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

/// Centres the snapshots and keeps the top two principal directions.
pub fn fit_basis(snapshots: &[ParameterSnapshot]) -> Result<ProjectionBasis, ProjectionError> {
    if snapshots.len() < 2 {
        return Err(ProjectionError::InsufficientData(snapshots.len()));
    }
    let dims = snapshots[0].params.len();
    for s in snapshots {
        if s.params.len() != dims {
            return Err(ProjectionError::DimensionMismatch { expected: dims, found: s.params.len() });
        }
    }
    if dims < 2 {
        return Err(ProjectionError::DimensionMismatch { expected: 2, found: dims });
    }
    let n = snapshots.len();
    let mut mean = vec![0.0; dims];
    for s in snapshots {
        mean.iter_mut().zip(&s.params).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    // Right singular vectors of the centred data are the eigenvectors of its
    // scatter matrix; the symmetric solver stays accurate on rank-deficient
    // input where the bidiagonal SVD does not.
    let centered = DMatrix::from_fn(n, dims, |r, c| snapshots[r].params[c] - mean[c]);
    let eigen = (centered.transpose() * &centered).symmetric_eigen();
    let mut order: Vec<usize> = (0..dims).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));

    let top = order.first().map_or(0.0, |&i| eigen.eigenvalues[i]);
    let cutoff = RANK_TOLERANCE * top.max(1.0);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(2);
    let mut singular_values = [0.0; 2];
    for &i in order.iter().take(2) {
        let lambda = eigen.eigenvalues[i];
        if lambda <= cutoff {
            break;
        }
        let mut v: Vec<f64> = eigen.eigenvectors.column(i).iter().copied().collect();
        fix_sign(&mut v);
        singular_values[components.len()] = lambda.sqrt();
        components.push(v);
    }
    while components.len() < 2 {
        let mut v = complete(&components, dims);
        fix_sign(&mut v);
        components.push(v);
    }
    let [a, b]: [Vec<f64>; 2] = components.try_into().expect("two components");
    Ok(ProjectionBasis { mean, components: [a, b], singular_values })
}

impl ProjectionBasis {
    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn project_params(&self, params: &[f64]) -> Result<[f64; 2], ProjectionError> {
        if params.len() != self.dims() {
            return Err(ProjectionError::DimensionMismatch { expected: self.dims(), found: params.len() });
        }
        let centered = DVector::from_iterator(self.dims(), params.iter().zip(&self.mean).map(|(p, m)| p - m));
        let proj = |c: &[f64]| c.iter().zip(centered.iter()).map(|(a, b)| a * b).sum::<f64>();
        Ok([proj(&self.components[0]), proj(&self.components[1])])
    }

    /// Sum of squared singular values of the kept components.
    pub fn captured_variance(&self) -> f64 {
        self.singular_values.iter().map(|s| s * s).sum()
    }
}

pub fn project(basis: &ProjectionBasis, snapshot: &ParameterSnapshot) -> Result<TrajectoryPoint, ProjectionError> {
    Ok(TrajectoryPoint {
        source: snapshot.source.clone(),
        segment: snapshot.segment,
        xy: basis.project_params(&snapshot.params)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTrajectory {
    pub source: String,
    pub points: Vec<TrajectoryPoint>,
    pub bounds: Option<Bounds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectories {
    pub basis: ProjectionBasis,
    pub bounds: Option<Bounds>,
    pub sources: Vec<SourceTrajectory>,
}

impl Trajectories {
    /// Bounding box of every point with a segment in `[from, to]`, the
    /// viewport a zoomed window should fit.
    pub fn window_bounds(&self, from: usize, to: usize) -> Option<Bounds> {
        Bounds::of(
            self.sources
                .iter()
                .flat_map(|s| &s.points)
                .filter(|p| (from..=to).contains(&p.segment)),
        )
    }
}

/// Fits the shared basis and projects every source's snapshots, which
/// must be grouped per source in segment order.
pub fn build_trajectories(per_source: &[(String, Vec<ParameterSnapshot>)]) -> Result<Trajectories, ProjectionError> {
    let all: Vec<ParameterSnapshot> = per_source.iter().flat_map(|(_, s)| s.iter().cloned()).collect();
    let basis = fit_basis(&all)?;
    let sources = per_source
        .iter()
        .map(|(source, snaps)| {
            let points = snaps.iter().map(|s| project(&basis, s)).collect::<Result<Vec<_>, _>>()?;
            Ok(SourceTrajectory { source: source.clone(), bounds: Bounds::of(&points), points })
        })
        .collect::<Result<Vec<_>, ProjectionError>>()?;
    let bounds = Bounds::of(sources.iter().flat_map(|s| &s.points));
    Ok(Trajectories { basis, bounds, sources })
}
