//! k-means profiling of entity groups and star-glyph summaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::EntityId;
use crate::measures::{Axis, MeasureTable, Series};
use crate::scalar::Scalar;
use crate::set::EntitySet;

pub const DEFAULT_MAX_ITERATIONS: usize = 300;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Lloyd's algorithm with k-means++ seeding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct KMeans<F> {
    pub k: usize,
    pub max_iterations: usize,
    /// Stop once no centroid moves farther than this.
    pub tolerance: F,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit<F> {
    /// Row-major `k x dim`.
    pub centroids: Vec<F>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Within-cluster sum of squares after each update step.
    pub inertia_history: Vec<F>,
}

impl<F: Scalar> KMeansFit<F> {
    pub fn inertia(&self) -> F {
        self.inertia_history.last().copied().unwrap_or_else(F::zero)
    }
}

#[inline]
fn sq_dist<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

impl<F: Scalar> KMeans<F> {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            tolerance: F::of_f64(DEFAULT_TOLERANCE),
            seed,
        }
    }

    /// Clusters `n = points.len() / dim` row-major points. `cancel` is polled
    /// once per iteration.
    pub fn fit(&self, points: &[F], dim: usize, cancel: &dyn Fn() -> bool) -> Result<KMeansFit<F>> {
        assert!(dim > 0 && points.len().is_multiple_of(dim), "points must be a whole number of rows");
        let n = points.len() / dim;
        if self.k < 2 {
            return Err(Error::KTooSmall(self.k));
        }
        if self.k > n {
            return Err(Error::KTooLarge { k: self.k, usable: n });
        }
        let row = |i: usize| &points[i * dim..(i + 1) * dim];
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut centroids = self.seed_centroids(points, dim, &mut rng);

        let mut assignment = vec![usize::MAX; n];
        let mut history: Vec<F> = Vec::new();
        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.max_iterations {
            if cancel() {
                return Err(Error::Cancelled);
            }
            iterations += 1;
            let mut changed = false;
            for (i, slot) in assignment.iter_mut().enumerate() {
                let nearest = nearest(row(i), &centroids, dim).0;
                changed |= *slot != nearest;
                *slot = nearest;
            }
            self.reseed_empty(points, dim, &mut centroids, &mut assignment);

            let mut sums = vec![F::zero(); self.k * dim];
            let mut counts = vec![0usize; self.k];
            for (i, &c) in assignment.iter().enumerate() {
                counts[c] += 1;
                for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                    *s = *s + x;
                }
            }
            let mut shift = F::zero();
            for c in 0..self.k {
                let n_c = F::of_usize(counts[c]);
                let new: Vec<F> = sums[c * dim..(c + 1) * dim].iter().map(|&s| s / n_c).collect();
                shift = shift.max(sq_dist(&new, &centroids[c * dim..(c + 1) * dim]).sqrt());
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&new);
            }
            let inertia: F = (0..n)
                .map(|i| sq_dist(row(i), &centroids[assignment[i] * dim..(assignment[i] + 1) * dim]))
                .sum();
            if let Some(&prev) = history.last() {
                debug_assert!(
                    inertia <= prev + prev * F::of_f64(1e-9) + F::epsilon(),
                    "within-cluster sum of squares increased: {prev} -> {inertia}"
                );
            }
            history.push(inertia);
            if shift < self.tolerance || !changed {
                converged = true;
                break;
            }
        }
        Ok(KMeansFit { centroids, assignment, iterations, converged, inertia_history: history })
    }

    fn seed_centroids(&self, points: &[F], dim: usize, rng: &mut ChaCha8Rng) -> Vec<F> {
        let n = points.len() / dim;
        let row = |i: usize| &points[i * dim..(i + 1) * dim];
        let mut chosen = vec![rng.random_range(0..n)];
        let mut d2: Vec<F> = (0..n).map(|i| sq_dist(row(i), row(chosen[0]))).collect();
        while chosen.len() < self.k {
            let total: F = d2.iter().copied().sum();
            let next = if total > F::zero() {
                let target = F::of_f64(rng.random::<f64>()) * total;
                let mut acc = F::zero();
                let mut pick = None;
                for (i, &w) in d2.iter().enumerate() {
                    acc = acc + w;
                    if w > F::zero() && acc > target {
                        pick = Some(i);
                        break;
                    }
                }
                // rounding may leave target just above the accumulated total
                pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > F::zero()).unwrap())
            } else {
                (0..n).find(|i| !chosen.contains(i)).unwrap()
            };
            chosen.push(next);
            for (i, d) in d2.iter_mut().enumerate() {
                *d = d.min(sq_dist(row(i), row(next)));
            }
        }
        chosen.iter().flat_map(|&i| row(i).iter().copied()).collect()
    }

    /// Moves the point farthest from its centroid (among clusters with more
    /// than one member) into each empty cluster.
    fn reseed_empty(&self, points: &[F], dim: usize, centroids: &mut [F], assignment: &mut [usize]) {
        let row = |i: usize| &points[i * dim..(i + 1) * dim];
        loop {
            let mut counts = vec![0usize; self.k];
            assignment.iter().for_each(|&c| counts[c] += 1);
            let Some(empty) = counts.iter().position(|&c| c == 0) else {
                return;
            };
            let mut best: Option<(usize, F)> = None;
            for (i, &c) in assignment.iter().enumerate() {
                if counts[c] < 2 {
                    continue;
                }
                let d = sq_dist(row(i), &centroids[c * dim..(c + 1) * dim]);
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((i, d));
                }
            }
            let (i, _) = best.expect("k <= n guarantees a cluster with two members");
            assignment[i] = empty;
            centroids[empty * dim..(empty + 1) * dim].copy_from_slice(row(i));
        }
    }
}

/// Index of the nearest centroid (lowest index on ties) and its squared distance.
fn nearest<F: Scalar>(p: &[F], centroids: &[F], dim: usize) -> (usize, F) {
    let mut best = (0, F::infinity());
    for (c, centroid) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Feature transform applied before distances are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocessing {
    /// `log10(1 + x)` on amount and count features, identity on time
    /// features, then per-feature min-max scaling to `[0, 1]`.
    #[default]
    LogMinMax,
    /// Per-feature min-max scaling only.
    MinMax,
    /// Raw measure values.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRequest {
    /// Tree node whose entities are clustered; ignored by [`cluster_entities`].
    #[serde(default)]
    pub node: usize,
    pub features: Vec<Series>,
    pub k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub preprocessing: Preprocessing,
}

fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

impl ClusterRequest {
    pub fn new(node: usize, features: Vec<Series>, k: usize, seed: u64) -> Self {
        Self {
            node,
            features,
            k,
            seed,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            tolerance: DEFAULT_TOLERANCE,
            preprocessing: Preprocessing::LogMinMax,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::EmptyFeatures);
        }
        for f in &self.features {
            f.validate()?;
        }
        if self.k < 2 {
            return Err(Error::KTooSmall(self.k));
        }
        Ok(())
    }
}

/// Range of one glyph axis, raw and normalized against the node's range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct AxisRange<F> {
    pub axis: Axis,
    pub min: Option<F>,
    pub mean: Option<F>,
    pub max: Option<F>,
    pub norm_min: Option<F>,
    pub norm_mean: Option<F>,
    pub norm_max: Option<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ClusterSummary<F> {
    pub cluster: usize,
    pub count: usize,
    pub axes: Vec<AxisRange<F>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ClusterOutcome<F> {
    pub request: ClusterRequest,
    /// Clusters ordered by descending size.
    pub summaries: Vec<ClusterSummary<F>>,
    /// `(entity, cluster)` for every included entity, ordered by entity.
    pub assignment: Vec<(EntityId, usize)>,
    /// Entities left out because a selected feature is undefined for them.
    pub excluded: usize,
    pub iterations: usize,
    pub converged: bool,
    pub inertia_history: Vec<F>,
}

impl<F: Scalar> ClusterOutcome<F> {
    pub fn members(&self, cluster: usize) -> Result<EntitySet> {
        if cluster >= self.summaries.len() {
            return Err(Error::UnknownCluster(cluster));
        }
        Ok(EntitySet::from_sorted(
            self.assignment.iter().filter(|&&(_, c)| c == cluster).map(|&(e, _)| e).collect(),
        ))
    }

    pub fn seed(&self) -> u64 {
        self.request.seed
    }
}

/// Per-axis value range over a set of entities, used to place glyph vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct AxisBounds<F> {
    pub min: Vec<Option<F>>,
    pub max: Vec<Option<F>>,
}

impl<F: Scalar> AxisBounds<F> {
    pub fn of(table: &MeasureTable, set: &EntitySet) -> Self {
        let mut min = vec![None; Axis::ALL.len()];
        let mut max = vec![None; Axis::ALL.len()];
        for m in set.iter().filter_map(|e| table.get(e)) {
            for (i, &axis) in Axis::ALL.iter().enumerate() {
                if let Some(v) = m.axis_value(axis).map(F::of_f64) {
                    min[i] = Some(min[i].map_or(v, |m: F| m.min(v)));
                    max[i] = Some(max[i].map_or(v, |m: F| m.max(v)));
                }
            }
        }
        Self { min, max }
    }

    /// `(v - min) / (max - min)` clamped to `[0, 1]`; a degenerate axis maps to 0.5.
    pub fn normalize(&self, axis: Axis, v: F) -> F {
        let i = axis as usize;
        match (self.min[i], self.max[i]) {
            (Some(lo), Some(hi)) if hi > lo => ((v - lo) / (hi - lo)).max(F::zero()).min(F::one()),
            _ => F::half(),
        }
    }

    /// Normalized positions of one entity on all eight axes.
    pub fn glyph(&self, m: &crate::measures::ActivityMeasures) -> Vec<Option<F>> {
        Axis::ALL
            .iter()
            .map(|&a| m.axis_value(a).map(|v| self.normalize(a, F::of_f64(v))))
            .collect()
    }
}

fn transform<F: Scalar>(series: Series, v: F, pre: Preprocessing) -> F {
    match pre {
        Preprocessing::LogMinMax if !series.key.is_time() => (F::one() + v.max(F::zero())).log10(),
        _ => v,
    }
}

/// Clusters the entities of `set` on `req.features` using measures from `table`.
pub fn cluster_entities<F: Scalar>(
    table: &MeasureTable,
    set: &EntitySet,
    req: &ClusterRequest,
    cancel: &dyn Fn() -> bool,
) -> Result<ClusterOutcome<F>> {
    req.validate()?;
    let dim = req.features.len();
    let mut included = Vec::new();
    let mut points: Vec<F> = Vec::new();
    let mut row: Vec<F> = Vec::with_capacity(dim);
    for e in set {
        row.clear();
        for &f in &req.features {
            match table.value::<F>(e, f) {
                Some(v) => row.push(transform(f, v, req.preprocessing)),
                None => break,
            }
        }
        if row.len() == dim {
            included.push(e);
            points.extend_from_slice(&row);
        }
    }
    let excluded = set.len() - included.len();
    if req.k > included.len() {
        return Err(Error::KTooLarge { k: req.k, usable: included.len() });
    }
    if req.preprocessing != Preprocessing::Raw {
        for j in 0..dim {
            let (lo, hi) = points
                .iter()
                .skip(j)
                .step_by(dim)
                .fold((F::infinity(), F::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            for v in points.iter_mut().skip(j).step_by(dim) {
                *v = if hi > lo { (*v - lo) / (hi - lo) } else { F::zero() };
            }
        }
    }

    let kmeans = KMeans {
        k: req.k,
        max_iterations: req.max_iterations,
        tolerance: F::of_f64(req.tolerance),
        seed: req.seed,
    };
    let fit = kmeans.fit(&points, dim, cancel)?;

    // relabel clusters by descending size, then by smallest member
    let mut order: Vec<(usize, usize, EntityId)> = (0..req.k)
        .map(|c| {
            let mut members = included.iter().zip(&fit.assignment).filter(|&(_, &a)| a == c);
            match members.next() {
                Some((&first, _)) => (c, 1 + members.count(), first),
                None => (c, 0, EntityId(u32::MAX)),
            }
        })
        .collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let mut relabel = vec![0; req.k];
    for (new, &(old, _, _)) in order.iter().enumerate() {
        relabel[old] = new;
    }
    let assignment: Vec<(EntityId, usize)> =
        included.iter().zip(&fit.assignment).map(|(&e, &c)| (e, relabel[c])).collect();

    let bounds = AxisBounds::<F>::of(table, set);
    let summaries = (0..req.k)
        .map(|c| {
            let members: Vec<EntityId> = assignment.iter().filter(|&&(_, a)| a == c).map(|&(e, _)| e).collect();
            summarize(c, &members, table, &bounds)
        })
        .collect();

    Ok(ClusterOutcome {
        request: req.clone(),
        summaries,
        assignment,
        excluded,
        iterations: fit.iterations,
        converged: fit.converged,
        inertia_history: fit.inertia_history,
    })
}

fn summarize<F: Scalar>(
    cluster: usize,
    members: &[EntityId],
    table: &MeasureTable,
    bounds: &AxisBounds<F>,
) -> ClusterSummary<F> {
    let axes = Axis::ALL
        .iter()
        .map(|&axis| {
            let values: Vec<F> = members
                .iter()
                .filter_map(|&e| table.get(e).and_then(|m| m.axis_value(axis)).map(F::of_f64))
                .collect();
            let (min, mean, max) = if values.is_empty() {
                (None, None, None)
            } else {
                let lo = values.iter().copied().fold(F::infinity(), F::min);
                let hi = values.iter().copied().fold(F::neg_infinity(), F::max);
                let mean = values.iter().copied().sum::<F>() / F::of_usize(values.len());
                // the mean can drift outside [lo, hi] by rounding
                (Some(lo), Some(mean.max(lo).min(hi)), Some(hi))
            };
            let norm = |v: Option<F>| v.map(|v| bounds.normalize(axis, v));
            AxisRange {
                axis,
                min,
                mean,
                max,
                norm_min: norm(min),
                norm_mean: norm(mean),
                norm_max: norm(max),
            }
        })
        .collect();
    ClusterSummary { cluster, count: members.len(), axes }
}
