//! Population indicators: single-linkage clusters, average absolute opinion,
//! density histograms, and the final-state pattern taxonomy.

use std::collections::HashMap;

use thiserror::Error;

use crate::engine::TrajectoryRecord;
use crate::model::{Attitude, Dimension, ModelParams};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndicatorError {
    #[error("cluster epsilon must be a finite value > 0 (got {0})")]
    Epsilon(f64),
    #[error("snapshot is empty")]
    EmptySnapshot,
    #[error("histogram needs at least 2 bins (got {0})")]
    TooFewBins(usize),
    #[error("histogram bounds on {0} are empty: [{1}, {2}]")]
    EmptyBounds(&'static str, f64, f64),
    #[error("trajectory needs at least 2 records (got {0})")]
    ShortTrajectory(usize),
    #[error("{0} must be a finite value in {1} (got {2})")]
    Threshold(&'static str, &'static str, f64),
}

/// Thresholds turning indicator values into pattern codes and trajectory
/// phases. These are calibration constants, all exposed in output metadata.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassifierThresholds<S> {
    /// Largest average absolute opinion still read as a moderate consensus.
    pub single_moderate_max: S,
    /// Tolerance above the several-cluster moderate baseline (0.4 odd, 0.5 even).
    pub moderate_margin: S,
    pub dip_threshold: S,
    pub rise_threshold: S,
}

impl<S: Scalar> Default for ClassifierThresholds<S> {
    fn default() -> Self {
        Self {
            single_moderate_max: S::lit(0.15),
            moderate_margin: S::lit(0.1),
            dip_threshold: S::lit(0.2),
            rise_threshold: S::lit(0.5),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndicatorConfig<S> {
    /// Single-linkage radius in the attitude plane.
    pub cluster_epsilon: S,
    /// A cluster is major when its share strictly exceeds this.
    pub major_share: S,
    /// Per-dimension grouping radius as a fraction of that dimension's
    /// confidence threshold.
    pub group_radius_fraction: S,
    pub thresholds: ClassifierThresholds<S>,
}

impl<S: Scalar> Default for IndicatorConfig<S> {
    fn default() -> Self {
        Self {
            cluster_epsilon: S::lit(0.02),
            major_share: S::lit(0.02),
            group_radius_fraction: S::lit(0.5),
            thresholds: ClassifierThresholds::default(),
        }
    }
}

impl<S: Scalar> IndicatorConfig<S> {
    pub fn validate(&self) -> Result<(), IndicatorError> {
        check_epsilon(self.cluster_epsilon)?;
        let unit = |name, v: S| {
            if v.is_finite() && v >= S::zero() && v < S::one() {
                Ok(())
            } else {
                Err(IndicatorError::Threshold(name, "[0, 1)", v.as_f64()))
            }
        };
        let nonneg = |name, v: S| {
            if v.is_finite() && v >= S::zero() {
                Ok(())
            } else {
                Err(IndicatorError::Threshold(name, "[0, inf)", v.as_f64()))
            }
        };
        let t = &self.thresholds;
        unit("major_share_threshold", self.major_share)?;
        nonneg("group_radius_fraction", self.group_radius_fraction)?;
        nonneg("single_moderate_max", t.single_moderate_max)?;
        nonneg("moderate_margin", t.moderate_margin)?;
        nonneg("dip_threshold", t.dip_threshold)?;
        nonneg("rise_threshold", t.rise_threshold)
    }
}

fn check_epsilon<S: Scalar>(epsilon: S) -> Result<(), IndicatorError> {
    if epsilon.is_finite() && epsilon > S::zero() {
        Ok(())
    } else {
        Err(IndicatorError::Epsilon(epsilon.as_f64()))
    }
}

/// A connected component of the linkage graph. Its centroid is the group's
/// norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster<S> {
    /// Ascending agent indices.
    pub members: Vec<usize>,
    pub centroid: Attitude<S>,
    pub share: S,
}

#[derive(Clone, Debug)]
struct DisjointSet {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != node {
            let parent = self.parent[node];
            self.parent[node] = root;
            node = parent;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.rank[a] < self.rank[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        if self.rank[a] == self.rank[b] {
            self.rank[a] = self.rank[a].saturating_add(1);
        }
    }
}

#[inline]
fn within<S: Scalar>(a: &Attitude<S>, b: &Attitude<S>, eps_sq: S) -> bool {
    let dm = a.main - b.main;
    let ds = a.secondary - b.secondary;
    dm * dm + ds * ds <= eps_sq
}

/// Single-linkage clusters under Euclidean distance: two agents are linked
/// when at most `epsilon` apart, and clusters are the connected components.
///
/// Points are bucketed on a grid of side `epsilon / sqrt(2)`, so every cell
/// is internally connected and only cells up to two steps away need to be
/// compared. Clusters come out sorted by descending share, then by smallest
/// member index.
pub fn detect_clusters<S, P>(points: &[P], epsilon: S) -> Result<Vec<Cluster<S>>, IndicatorError>
where
    S: Scalar,
    P: AsRef<Attitude<S>>,
{
    check_epsilon(epsilon)?;
    if points.is_empty() {
        return Err(IndicatorError::EmptySnapshot);
    }
    let side = epsilon.as_f64() / std::f64::consts::SQRT_2;
    let eps_sq = epsilon * epsilon;
    let key = |a: &Attitude<S>| {
        (
            (a.main.as_f64() / side).floor() as i64,
            (a.secondary.as_f64() / side).floor() as i64,
        )
    };

    let mut order: Vec<usize> = (0..points.len()).collect();
    let keys: Vec<(i64, i64)> = points.iter().map(|p| key(p.as_ref())).collect();
    order.sort_unstable_by_key(|&i| (keys[i], i));

    // cells as contiguous runs of `order`
    let mut cells: Vec<(usize, usize)> = Vec::new();
    let mut cell_of: HashMap<(i64, i64), usize> = HashMap::new();
    let mut start = 0;
    for pos in 1..=order.len() {
        if pos == order.len() || keys[order[pos]] != keys[order[start]] {
            cell_of.insert(keys[order[start]], cells.len());
            cells.push((start, pos));
            start = pos;
        }
    }

    const OFFSETS: [(i64, i64); 10] = [
        (0, 1),
        (0, 2),
        (1, -2),
        (1, -1),
        (1, 0),
        (1, 1),
        (1, 2),
        (2, -1),
        (2, 0),
        (2, 1),
    ];
    let mut dsu = DisjointSet::new(cells.len());
    for (cell, &(a0, a1)) in cells.iter().enumerate() {
        let (cm, cs) = keys[order[a0]];
        for (dm, ds) in OFFSETS {
            let Some(&other) = cell_of.get(&(cm + dm, cs + ds)) else {
                continue;
            };
            if dsu.find(cell) == dsu.find(other) {
                continue;
            }
            let (b0, b1) = cells[other];
            let linked = order[a0..a1].iter().any(|&i| {
                order[b0..b1]
                    .iter()
                    .any(|&j| within(points[i].as_ref(), points[j].as_ref(), eps_sq))
            });
            if linked {
                dsu.union(cell, other);
            }
        }
    }

    let mut by_root: HashMap<usize, Vec<usize>> = HashMap::new();
    for (cell, &(a0, a1)) in cells.iter().enumerate() {
        by_root
            .entry(dsu.find(cell))
            .or_default()
            .extend_from_slice(&order[a0..a1]);
    }
    let n = S::from_usize(points.len()).expect("population size representable");
    let mut clusters: Vec<Cluster<S>> = by_root
        .into_values()
        .map(|mut members| {
            members.sort_unstable();
            let size = S::from_usize(members.len()).expect("cluster size representable");
            let (sm, ss) = members.iter().fold((S::zero(), S::zero()), |(m, s), &i| {
                let a = points[i].as_ref();
                (m + a.main, s + a.secondary)
            });
            Cluster {
                centroid: Attitude::new(sm / size, ss / size),
                share: size / n,
                members,
            }
        })
        .collect();
    clusters.sort_by(|a, b| {
        b.members
            .len()
            .cmp(&a.members.len())
            .then(a.members[0].cmp(&b.members[0]))
    });
    Ok(clusters)
}

/// Major clusters merged along one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct DimensionGroup<S> {
    pub size: usize,
    /// Share of the whole population.
    pub share: S,
    /// Size-weighted mean of the merged cluster centroids.
    pub centroid: S,
}

/// Chains clusters whose centroids lie within `radius` of each other on
/// `dimension` into groups, ordered by centroid.
pub fn dimension_groups<S: Scalar>(
    clusters: &[ClusterSummary<S>],
    dimension: Dimension,
    radius: S,
) -> Vec<DimensionGroup<S>> {
    let mut sorted: Vec<&ClusterSummary<S>> = clusters.iter().collect();
    sorted.sort_by(|a, b| {
        a.centroid
            .get(dimension)
            .partial_cmp(&b.centroid.get(dimension))
            .expect("finite centroids")
            .then(a.first_member.cmp(&b.first_member))
    });
    let mut groups: Vec<DimensionGroup<S>> = Vec::new();
    let mut last: Option<S> = None;
    for c in sorted {
        let pos = c.centroid.get(dimension);
        let size = S::from_usize(c.size).expect("cluster size representable");
        match (last, groups.last_mut()) {
            (Some(prev), Some(g)) if pos - prev <= radius => {
                let total = S::from_usize(g.size + c.size).expect("group size representable");
                let before = S::from_usize(g.size).expect("group size representable");
                g.centroid = (g.centroid * before + pos * size) / total;
                g.size += c.size;
                g.share = g.share + c.share;
            }
            _ => groups.push(DimensionGroup {
                size: c.size,
                share: c.share,
                centroid: pos,
            }),
        }
        last = Some(pos);
    }
    groups
}

/// Per-dimension mean of absolute coordinate values.
pub fn avg_abs_opinion<S, P>(points: &[P]) -> Result<(S, S), IndicatorError>
where
    S: Scalar,
    P: AsRef<Attitude<S>>,
{
    if points.is_empty() {
        return Err(IndicatorError::EmptySnapshot);
    }
    let (m, s) = points.iter().fold((S::zero(), S::zero()), |(m, s), p| {
        let a = p.as_ref();
        (m + a.main.abs(), s + a.secondary.abs())
    });
    let n = S::from_usize(points.len()).expect("population size representable");
    Ok((m / n, s / n))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterSummary<S> {
    pub size: usize,
    pub share: S,
    pub centroid: Attitude<S>,
    pub first_member: usize,
}

/// Indicators of one population state.
///
/// Only major clusters (share strictly above the configured cutoff) are kept
/// in detail. `main_groups` and `secondary_groups` merge major clusters whose
/// centroids are close on that dimension, the linking radius being
/// `group_radius_fraction` times the dimension's confidence threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct IndicatorReport<S> {
    pub n_agents: usize,
    pub n_clusters: usize,
    pub major_clusters: Vec<ClusterSummary<S>>,
    pub n_major: usize,
    pub main_groups: Vec<DimensionGroup<S>>,
    pub secondary_groups: Vec<DimensionGroup<S>>,
    pub avg_abs_main: S,
    pub avg_abs_secondary: S,
    pub max_cluster_share: S,
}

impl<S: Scalar> IndicatorReport<S> {
    pub fn compute<P: AsRef<Attitude<S>>>(
        points: &[P],
        params: &ModelParams<S>,
        config: &IndicatorConfig<S>,
    ) -> Result<Self, IndicatorError> {
        let clusters = detect_clusters(points, config.cluster_epsilon)?;
        let (avg_abs_main, avg_abs_secondary) = avg_abs_opinion(points)?;
        let max_cluster_share = clusters.first().map_or(S::zero(), |c| c.share);
        let n_clusters = clusters.len();
        let major_clusters: Vec<ClusterSummary<S>> = clusters
            .iter()
            .take_while(|c| c.share > config.major_share)
            .map(|c| ClusterSummary {
                size: c.members.len(),
                share: c.share,
                centroid: c.centroid,
                first_member: c.members[0],
            })
            .collect();
        let f = config.group_radius_fraction;
        Ok(Self {
            n_agents: points.len(),
            n_clusters,
            n_major: major_clusters.len(),
            main_groups: dimension_groups(&major_clusters, Dimension::Main, f * params.u_m),
            secondary_groups: dimension_groups(
                &major_clusters,
                Dimension::Secondary,
                f * params.u_s,
            ),
            major_clusters,
            avg_abs_main,
            avg_abs_secondary,
            max_cluster_share,
        })
    }

    pub fn avg_abs(&self, dimension: Dimension) -> S {
        match dimension {
            Dimension::Main => self.avg_abs_main,
            Dimension::Secondary => self.avg_abs_secondary,
        }
    }

    /// Number of major groups seen along one dimension.
    pub fn n_major_on(&self, dimension: Dimension) -> usize {
        match dimension {
            Dimension::Main => self.main_groups.len(),
            Dimension::Secondary => self.secondary_groups.len(),
        }
    }
}

/// Final-state taxonomy on one dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PatternCode {
    SingleModerate = 0,
    SingleExtreme = 1,
    Bipolarization = 2,
    SeveralPolarized = 3,
    SeveralModerate = 4,
    /// No major cluster, e.g. perpetually fluctuating agents.
    Unclassified = 5,
}

impl PatternCode {
    pub const ALL: [PatternCode; 6] = [
        PatternCode::SingleModerate,
        PatternCode::SingleExtreme,
        PatternCode::Bipolarization,
        PatternCode::SeveralPolarized,
        PatternCode::SeveralModerate,
        PatternCode::Unclassified,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

/// Average absolute opinion expected from moderate clusters when there are
/// `n_groups >= 2` of them: 0.4 for an odd count, 0.5 for an even one.
pub fn moderate_baseline<S: Scalar>(n_groups: usize) -> S {
    if n_groups % 2 == 1 {
        S::lit(0.4)
    } else {
        S::lit(0.5)
    }
}

/// Reads the pattern on `dimension` from the number of major groups along
/// it and the dimension's average absolute opinion.
pub fn classify_pattern<S: Scalar>(
    report: &IndicatorReport<S>,
    dimension: Dimension,
    thresholds: &ClassifierThresholds<S>,
) -> PatternCode {
    classify_counts(report.n_major_on(dimension), report.avg_abs(dimension), thresholds)
}

pub fn classify_counts<S: Scalar>(
    n_major: usize,
    avg_abs: S,
    thresholds: &ClassifierThresholds<S>,
) -> PatternCode {
    match n_major {
        0 => PatternCode::Unclassified,
        1 if avg_abs <= thresholds.single_moderate_max => PatternCode::SingleModerate,
        1 => PatternCode::SingleExtreme,
        n if avg_abs <= moderate_baseline::<S>(n) + thresholds.moderate_margin => {
            PatternCode::SeveralModerate
        }
        2 => PatternCode::Bipolarization,
        _ => PatternCode::SeveralPolarized,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NormChange {
    NoChange,
    Moderated,
    PolarizedAfterModeration,
    PolarizedDirectly,
}

impl NormChange {
    pub fn name(self) -> &'static str {
        match self {
            NormChange::NoChange => "no_change",
            NormChange::Moderated => "moderated",
            NormChange::PolarizedAfterModeration => "polarized_after_moderation",
            NormChange::PolarizedDirectly => "polarized_directly",
        }
    }
}

/// Reads the phase sequence of a trajectory on one dimension from its
/// average absolute opinion.
pub fn interpret_norm_change<S: Scalar>(
    trajectory: &[TrajectoryRecord<S>],
    dimension: Dimension,
    thresholds: &ClassifierThresholds<S>,
) -> Result<NormChange, IndicatorError> {
    if trajectory.len() < 2 {
        return Err(IndicatorError::ShortTrajectory(trajectory.len()));
    }
    let value = |r: &TrajectoryRecord<S>| match dimension {
        Dimension::Main => r.avg_abs_main,
        Dimension::Secondary => r.avg_abs_secondary,
    };
    let last = value(&trajectory[trajectory.len() - 1]);
    let dipped = trajectory[1..]
        .iter()
        .any(|r| value(r) < thresholds.dip_threshold);
    Ok(if last > thresholds.rise_threshold {
        if dipped {
            NormChange::PolarizedAfterModeration
        } else {
            NormChange::PolarizedDirectly
        }
    } else if last < thresholds.dip_threshold {
        NormChange::Moderated
    } else {
        NormChange::NoChange
    })
}

/// Closed range used to bin one dimension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds<S> {
    pub lo: S,
    pub hi: S,
}

impl<S: Scalar> Bounds<S> {
    pub fn unit() -> Self {
        Self {
            lo: -S::one(),
            hi: S::one(),
        }
    }

    /// Bin of `v`; values outside the range land in the edge bins.
    fn bin(&self, v: S, bins: usize) -> usize {
        let t = ((v - self.lo) / (self.hi - self.lo)).as_f64() * bins as f64;
        if t <= 0.0 {
            0
        } else {
            (t as usize).min(bins - 1)
        }
    }

    pub fn edges(&self, bins: usize) -> Vec<S> {
        let width = (self.hi - self.lo) / S::from_usize(bins).expect("bin count representable");
        (0..=bins)
            .map(|k| self.lo + width * S::from_usize(k).expect("bin index representable"))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityHistogram<S> {
    pub bins: usize,
    pub main_bounds: Bounds<S>,
    pub secondary_bounds: Bounds<S>,
    pub main: Vec<u64>,
    pub secondary: Vec<u64>,
    /// Row-major `bins x bins` counts, rows indexed by the main bin.
    pub grid: Vec<u64>,
}

impl<S> DensityHistogram<S> {
    pub fn grid_at(&self, main_bin: usize, secondary_bin: usize) -> u64 {
        self.grid[main_bin * self.bins + secondary_bin]
    }
}

pub fn density_histogram<S, P>(
    points: &[P],
    bins: usize,
    main_bounds: Bounds<S>,
    secondary_bounds: Bounds<S>,
) -> Result<DensityHistogram<S>, IndicatorError>
where
    S: Scalar,
    P: AsRef<Attitude<S>>,
{
    if bins < 2 {
        return Err(IndicatorError::TooFewBins(bins));
    }
    for (name, b) in [("main", main_bounds), ("secondary", secondary_bounds)] {
        if !(b.lo.is_finite() && b.hi.is_finite() && b.lo < b.hi) {
            return Err(IndicatorError::EmptyBounds(name, b.lo.as_f64(), b.hi.as_f64()));
        }
    }
    let mut hist = DensityHistogram {
        bins,
        main_bounds,
        secondary_bounds,
        main: vec![0; bins],
        secondary: vec![0; bins],
        grid: vec![0; bins * bins],
    };
    for p in points {
        let a = p.as_ref();
        let bm = main_bounds.bin(a.main, bins);
        let bs = secondary_bounds.bin(a.secondary, bins);
        hist.main[bm] += 1;
        hist.secondary[bs] += 1;
        hist.grid[bm * bins + bs] += 1;
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(coords: &[(f64, f64)]) -> Vec<Attitude<f64>> {
        coords.iter().map(|&(m, s)| Attitude::new(m, s)).collect()
    }

    /// All-pairs union-find, independent of the grid bucketing.
    fn brute_force_partition(points: &[Attitude<f64>], eps: f64) -> Vec<Vec<usize>> {
        let n = points.len();
        let mut label: Vec<usize> = (0..n).collect();
        let mut changed = true;
        while changed {
            changed = false;
            for i in 0..n {
                for j in 0..n {
                    let d = ((points[i].main - points[j].main).powi(2)
                        + (points[i].secondary - points[j].secondary).powi(2))
                    .sqrt();
                    if d <= eps && label[j] < label[i] {
                        label[i] = label[j];
                        changed = true;
                    }
                }
            }
        }
        let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
        for (i, l) in label.into_iter().enumerate() {
            groups.entry(l).or_default().push(i);
        }
        let mut out: Vec<Vec<usize>> = groups.into_values().collect();
        out.sort();
        out
    }

    fn partition(clusters: &[Cluster<f64>]) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = clusters.iter().map(|c| c.members.clone()).collect();
        out.sort();
        out
    }

    #[test]
    fn transitive_linkage_on_three_points() {
        let p = pts(&[(0.0, 0.0), (0.005, 0.0), (0.5, 0.5)]);
        let c = detect_clusters(&p, 0.02).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].members, vec![0, 1]);
        assert!((c[0].share - 2.0 / 3.0).abs() < 1e-12);
        assert!((c[1].share - 1.0 / 3.0).abs() < 1e-12);
        assert!((c[0].centroid.main - 0.0025).abs() < 1e-12);
    }

    #[test]
    fn single_point_mass_is_one_cluster() {
        let p = pts(&[(0.3, -0.2); 50]);
        let c = detect_clusters(&p, 0.02).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].share, 1.0);
    }

    #[test]
    fn chaining_links_distant_endpoints() {
        let p = pts(&[(0.0, 0.0), (0.015, 0.0), (0.03, 0.0)]);
        assert_eq!(detect_clusters(&p, 0.02).unwrap().len(), 1);
    }

    #[test]
    fn cluster_errors() {
        let p = pts(&[(0.0, 0.0)]);
        assert_eq!(detect_clusters(&p, 0.0), Err(IndicatorError::Epsilon(0.0)));
        assert!(detect_clusters(&p, -1.0).is_err());
        assert_eq!(
            detect_clusters::<f64, Attitude<f64>>(&[], 0.1),
            Err(IndicatorError::EmptySnapshot)
        );
    }

    #[test]
    fn ordering_by_share_then_first_member() {
        let p = pts(&[(0.9, 0.9), (0.0, 0.0), (0.5, 0.5), (0.0, 0.001)]);
        let c = detect_clusters(&p, 0.02).unwrap();
        let firsts: Vec<usize> = c.iter().map(|c| c.members[0]).collect();
        assert_eq!(firsts, vec![1, 0, 2]);
    }

    #[test]
    fn avg_abs_examples() {
        let p = pts(&[(-0.5, 0.2), (0.5, -0.2)]);
        let (m, s) = avg_abs_opinion(&p).unwrap();
        assert!((m - 0.5).abs() < 1e-12 && (s - 0.2).abs() < 1e-12);
        let (m, s) = avg_abs_opinion(&pts(&[(0.8, 0.1); 7])).unwrap();
        assert!((m - 0.8).abs() < 1e-12 && (s - 0.1).abs() < 1e-12);
    }

    #[test]
    fn histogram_examples() {
        let unit = Bounds::unit();
        let h = density_histogram(&pts(&[(0.0, 0.0); 4]), 2, unit, unit).unwrap();
        assert_eq!(h.main.iter().sum::<u64>(), 4);
        assert!(h.main.contains(&4) && h.main.contains(&0));
        assert!(h.secondary.contains(&4));
        let h = density_histogram(&pts(&[(-0.9, 0.0), (0.9, 0.0)]), 2, unit, unit).unwrap();
        assert_eq!(h.main, vec![1, 1]);
        let h = density_histogram(&pts(&[(0.0, 1.5), (0.0, -3.0), (0.2, 0.2)]), 4, unit, unit).unwrap();
        assert_eq!(h.secondary, vec![1, 0, 1, 1]);
        assert_eq!(h.grid.iter().sum::<u64>(), 3);
        assert_eq!(h.grid_at(2, 3), 1);
    }

    #[test]
    fn histogram_errors() {
        let unit = Bounds::unit();
        let p = pts(&[(0.0, 0.0)]);
        assert_eq!(density_histogram(&p, 1, unit, unit), Err(IndicatorError::TooFewBins(1)));
        let empty = Bounds { lo: 1.0, hi: 1.0 };
        assert!(matches!(
            density_histogram(&p, 4, unit, empty),
            Err(IndicatorError::EmptyBounds("secondary", _, _))
        ));
    }

    fn report(n_main: usize, avg_main: f64) -> IndicatorReport<f64> {
        let g = |n| {
            (0..n)
                .map(|_| DimensionGroup {
                    size: 10,
                    share: 0.1,
                    centroid: 0.0,
                })
                .collect()
        };
        IndicatorReport {
            n_agents: 100,
            n_clusters: n_main,
            major_clusters: Vec::new(),
            n_major: n_main,
            main_groups: g(n_main),
            secondary_groups: g(1),
            avg_abs_main: avg_main,
            avg_abs_secondary: 0.0,
            max_cluster_share: 0.1,
        }
    }

    #[test]
    fn pattern_examples() {
        let t = ClassifierThresholds::default();
        let c = |n, a| classify_pattern(&report(n, a), Dimension::Main, &t);
        assert_eq!(c(1, 0.02), PatternCode::SingleModerate);
        assert_eq!(c(1, 0.8), PatternCode::SingleExtreme);
        assert_eq!(c(2, 0.5), PatternCode::SeveralModerate);
        assert_eq!(c(2, 0.75), PatternCode::Bipolarization);
        assert_eq!(c(3, 0.45), PatternCode::SeveralModerate);
        assert_eq!(c(3, 0.55), PatternCode::SeveralPolarized);
        assert_eq!(c(0, 0.3), PatternCode::Unclassified);
        assert_eq!(PatternCode::from_code(3), Some(PatternCode::SeveralPolarized));
        assert_eq!(PatternCode::from_code(6), None);
    }

    fn traj(values: &[f64]) -> Vec<TrajectoryRecord<f64>> {
        values
            .iter()
            .enumerate()
            .map(|(k, &v)| TrajectoryRecord {
                sweep: k as u64,
                avg_abs_main: v,
                avg_abs_secondary: 0.5,
                n_clusters: 1,
                max_cluster_share: 1.0,
            })
            .collect()
    }

    #[test]
    fn norm_change_examples() {
        let t = ClassifierThresholds::default();
        let i = |v: &[f64]| interpret_norm_change(&traj(v), Dimension::Main, &t);
        assert_eq!(i(&[0.5, 0.05, 0.6]), Ok(NormChange::PolarizedAfterModeration));
        assert_eq!(i(&[0.5, 0.04, 0.04]), Ok(NormChange::Moderated));
        assert_eq!(i(&[0.5, 0.45, 0.46]), Ok(NormChange::NoChange));
        assert_eq!(i(&[0.5, 0.7, 0.8]), Ok(NormChange::PolarizedDirectly));
        assert_eq!(i(&[0.5]), Err(IndicatorError::ShortTrajectory(1)));
    }

    #[test]
    fn uniform_state_is_not_single_cluster() {
        let mut rng = crate::engine::StreamRng::new(42);
        let p: Vec<Attitude<f64>> = (0..10_000)
            .map(|_| Attitude::new(2.0 * rng.unit() - 1.0, 2.0 * rng.unit() - 1.0))
            .collect();
        let cfg = IndicatorConfig::default();
        let r = IndicatorReport::compute(&p, &ModelParams::with_thresholds(0.5, 0.5), &cfg).unwrap();
        for d in Dimension::ALL {
            let code = classify_pattern(&r, d, &cfg.thresholds);
            assert!(!matches!(code, PatternCode::SingleModerate | PatternCode::SingleExtreme));
        }
    }

    fn summary(size: usize, first: usize, main: f64, secondary: f64) -> ClusterSummary<f64> {
        ClusterSummary {
            size,
            share: size as f64 / 100.0,
            centroid: Attitude::new(main, secondary),
            first_member: first,
        }
    }

    #[test]
    fn groups_merge_along_one_dimension() {
        // one column on main split into sub-clusters on secondary
        let c = vec![
            summary(70, 0, 0.01, -0.12),
            summary(12, 1, -0.03, 0.82),
            summary(10, 2, 0.05, -0.87),
        ];
        let main = dimension_groups(&c, Dimension::Main, 0.35);
        assert_eq!(main.len(), 1);
        assert_eq!(main[0].size, 92);
        assert!((main[0].share - 0.92).abs() < 1e-12);
        let expected: f64 = (70.0 * 0.01 - 12.0 * 0.03 + 10.0 * 0.05) / 92.0;
        assert!((main[0].centroid - expected).abs() < 1e-12);
        let secondary = dimension_groups(&c, Dimension::Secondary, 0.05);
        assert_eq!(secondary.len(), 3);
        assert_eq!(secondary[0].size, 10);
        assert!(dimension_groups(&[], Dimension::Main, 0.1).is_empty());
    }

    #[test]
    fn report_counts_groups_per_dimension() {
        let mut p = Vec::new();
        p.extend(std::iter::repeat_n(Attitude::new(0.0, 0.0), 60));
        p.extend(std::iter::repeat_n(Attitude::new(0.1, 0.9), 30));
        p.extend(std::iter::repeat_n(Attitude::new(0.9, 0.9), 9));
        p.push(Attitude::new(-0.9, -0.9));
        let params = ModelParams::<f64>::with_thresholds(0.4, 0.2);
        let r = IndicatorReport::compute(&p, &params, &IndicatorConfig::default()).unwrap();
        assert_eq!(r.n_clusters, 4);
        assert_eq!(r.n_major, 3);
        assert_eq!(r.major_clusters[0].size, 60);
        assert_eq!(r.main_groups.len(), 2);
        assert_eq!(r.secondary_groups.len(), 2);
        assert!((r.max_cluster_share - 0.6).abs() < 1e-12);
    }

    fn cloud() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec(
            prop_oneof![
                (-1.0f64..1.0, -1.0f64..1.0),
                // clumps to exercise dense cells
                (0.0f64..0.03, 0.0f64..0.03),
                (-0.5f64..-0.45, 0.7f64..0.72),
            ],
            1..120,
        )
    }

    proptest! {
        #[test]
        fn clusters_match_brute_force(points in cloud(), eps in 0.005f64..0.3) {
            let p = pts(&points);
            let c = detect_clusters(&p, eps).unwrap();
            prop_assert_eq!(partition(&c), brute_force_partition(&p, eps));
            let total: f64 = c.iter().map(|c| c.share).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn clusters_invariant_under_reordering(points in cloud(), seed in any::<u64>()) {
            let p = pts(&points);
            let mut perm: Vec<usize> = (0..p.len()).collect();
            let mut rng = crate::engine::StreamRng::new(seed);
            for k in (1..perm.len()).rev() {
                perm.swap(k, rng.index(k + 1));
            }
            let shuffled: Vec<Attitude<f64>> = perm.iter().map(|&i| p[i]).collect();
            let a = detect_clusters(&p, 0.05).unwrap();
            let b = detect_clusters(&shuffled, 0.05).unwrap();
            let mapped: Vec<Vec<usize>> = {
                let mut v: Vec<Vec<usize>> = b.iter().map(|c| {
                    let mut m: Vec<usize> = c.members.iter().map(|&i| perm[i]).collect();
                    m.sort();
                    m
                }).collect();
                v.sort();
                v
            };
            prop_assert_eq!(partition(&a), mapped);
            let mut ca: Vec<(usize, i64, i64)> = a.iter().map(|c| (c.members.len(), (c.centroid.main * 1e9).round() as i64, (c.centroid.secondary * 1e9).round() as i64)).collect();
            let mut cb: Vec<(usize, i64, i64)> = b.iter().map(|c| (c.members.len(), (c.centroid.main * 1e9).round() as i64, (c.centroid.secondary * 1e9).round() as i64)).collect();
            ca.sort();
            cb.sort();
            prop_assert_eq!(ca, cb);
        }

        #[test]
        fn avg_abs_sign_flip_invariant(points in cloud()) {
            let p = pts(&points);
            let flipped: Vec<Attitude<f64>> = p.iter().map(|a| Attitude::new(-a.main, a.secondary)).collect();
            let (m1, s1) = avg_abs_opinion(&p).unwrap();
            let (m2, s2) = avg_abs_opinion(&flipped).unwrap();
            prop_assert_eq!(m1, m2);
            prop_assert_eq!(s1, s2);
        }

        #[test]
        fn histogram_conserves_count(points in cloud(), scale in 0.5f64..4.0, bins in 2usize..40) {
            let p: Vec<Attitude<f64>> = pts(&points).into_iter().map(|a| Attitude::new(a.main * scale, a.secondary * scale)).collect();
            let h = density_histogram(&p, bins, Bounds::unit(), Bounds::unit()).unwrap();
            let n = p.len() as u64;
            prop_assert_eq!(h.main.iter().sum::<u64>(), n);
            prop_assert_eq!(h.secondary.iter().sum::<u64>(), n);
            prop_assert_eq!(h.grid.iter().sum::<u64>(), n);
        }

        #[test]
        fn classification_is_total_and_exclusive(n in 0usize..8, avg in 0.0f64..1.5) {
            let t = ClassifierThresholds::default();
            let code = classify_pattern(&report(n, avg), Dimension::Main, &t);
            if n >= 2 {
                let moderate = avg <= moderate_baseline::<f64>(n) + 0.1;
                prop_assert_eq!(code == PatternCode::SeveralModerate, moderate);
                prop_assert_eq!(matches!(code, PatternCode::Bipolarization | PatternCode::SeveralPolarized), !moderate);
            }
        }
    }
}
