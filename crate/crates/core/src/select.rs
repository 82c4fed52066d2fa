//! Instance prototype selection.
//!
//! Two per-bag candidates are produced: `b_ix`, the prototype used for the
//! layout and the initial classifier, and `b_iy`, the alternative an analyst
//! can switch to. Salience-based selection (`Method::Si`) compares the ends
//! of each bag's salience ranking against the opposite class; medoid-based
//! selection (`Method::Med`) clusters each bag's instances into two groups.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Bag, MilDataset};
use crate::error::{Error, Result};
use crate::kmedoids::two_medoids;
use crate::nj::{euclidean, euclidean_matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Si,
    Med,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Si => "si",
            Method::Med => "med",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "si" => Ok(Method::Si),
            "med" => Ok(Method::Med),
            other => Err(Error::InvalidArgument(format!("unknown method `{other}` (expected si or med)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Scaling factor of the positive-probability estimate.
    pub sigma: f64,
    /// Salient instances kept per positive bag.
    pub sal_num: usize,
    pub medoid_max_iter: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            sal_num: 2,
            medoid_max_iter: 100,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.sal_num == 0 {
            return Err(Error::InvalidArgument("sal_num must be >= 1".into()));
        }
        Ok(())
    }
}

/// Primary and alternative prototype of one bag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrototypePair {
    pub bag: usize,
    pub b_ix: usize,
    pub b_iy: usize,
    pub method: Method,
}

/// An instance addressed by bag index and position within the bag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InstanceRef {
    pub bag: usize,
    pub index: usize,
}

/// Sum of distances from instance `j` to every other instance of its bag.
pub fn salience(bag: &Bag, j: usize) -> Result<f64> {
    let x = bag.instance(j)?;
    Ok(bag
        .instances
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != j)
        .map(|(_, y)| euclidean(x, y))
        .sum())
}

/// Minimum Euclidean distance from `x` to any member of `set`.
pub fn min_dist_to_set<V: AsRef<[f64]>>(x: &[f64], set: &[V]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("distance to an empty set".into()));
    }
    Ok(set
        .iter()
        .map(|y| euclidean(x, y.as_ref()))
        .fold(f64::INFINITY, f64::min))
}

/// `1 - exp(-dist / sigma^2)`: how likely an instance at minimum distance
/// `dist` from the negative instances is to be positive.
pub fn positive_probability(dist: f64, sigma: f64) -> f64 {
    1.0 - (-dist / (sigma * sigma)).exp()
}

/// Instance indices sorted by descending salience, lower index first on ties.
pub fn salience_ranking(bag: &Bag) -> Vec<usize> {
    let n = bag.len();
    let mut sal = vec![0.0; n];
    for i in 0..n {
        for k in (i + 1)..n {
            let d = euclidean(&bag.instances[i], &bag.instances[k]);
            sal[i] += d;
            sal[k] += d;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sal[b].total_cmp(&sal[a]).then(a.cmp(&b)));
    order
}

fn partition(ds: &MilDataset, positive_class: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| ds.bag(i).label == positive_class);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Dataset(format!(
            "class {positive_class} needs both its own bags and other bags for selection"
        )));
    }
    Ok((pos, neg))
}

fn farthest<'a, I>(candidates: I, from: &[f64]) -> InstanceRef
where
    I: IntoIterator<Item = (InstanceRef, &'a [f64])>,
{
    let mut best = None;
    let mut best_d = f64::NEG_INFINITY;
    for (r, x) in candidates {
        let d = euclidean(x, from);
        if d > best_d {
            best_d = d;
            best = Some(r);
        }
    }
    best.expect("non-empty candidate set")
}

struct Salient {
    members: Vec<InstanceRef>,
}

/// Rough selection finds the optimal positive instance among the ranking
/// endpoints of every positive bag; fine selection orients each positive
/// bag's ranking against the negative instance farthest from it and keeps
/// `sal_num` instances from the nearer-to-far end.
fn salient_instances(ds: &MilDataset, positive_class: usize, sal_num: usize, clamp: bool) -> Result<Salient> {
    let (pos, neg) = partition(ds, positive_class)?;
    let negatives: Vec<(InstanceRef, &[f64])> = neg
        .iter()
        .flat_map(|&b| {
            ds.bag(b)
                .instances
                .iter()
                .enumerate()
                .map(move |(j, x)| (InstanceRef { bag: b, index: j }, x.as_slice()))
        })
        .collect();
    let neg_vectors: Vec<&[f64]> = negatives.iter().map(|(_, x)| *x).collect();

    let rankings: Vec<Vec<usize>> = pos.iter().map(|&b| salience_ranking(ds.bag(b))).collect();

    // Rough selection.
    let mut max_dist = 0.0;
    let mut opt_pos: Option<InstanceRef> = None;
    for (&b, order) in pos.iter().zip(&rankings) {
        let bag = ds.bag(b);
        let (first, last) = (order[0], order[order.len() - 1]);
        let d_first = min_dist_to_set(&bag.instances[first], &neg_vectors)?;
        let d_last = min_dist_to_set(&bag.instances[last], &neg_vectors)?;
        let (cand, d) = if d_last > d_first { (last, d_last) } else { (first, d_first) };
        if d > max_dist || opt_pos.is_none() {
            max_dist = d;
            opt_pos = Some(InstanceRef { bag: b, index: cand });
        }
    }
    let opt_pos = opt_pos.expect("at least one positive bag");
    let opt_pos_x = &ds.bag(opt_pos.bag).instances[opt_pos.index];

    // Fine selection.
    let opt_neg = farthest(negatives.iter().copied(), opt_pos_x);
    let opt_neg_x = &ds.bag(opt_neg.bag).instances[opt_neg.index];
    let mut members = Vec::new();
    for (&b, order) in pos.iter().zip(&rankings) {
        let bag = ds.bag(b);
        let m = order.len();
        let take = if sal_num > m {
            if clamp {
                m
            } else {
                return Err(Error::InvalidArgument(format!(
                    "sal_num {sal_num} exceeds the {m} instances of bag `{}`",
                    bag.id
                )));
            }
        } else {
            sal_num
        };
        let first = euclidean(&bag.instances[order[0]], opt_neg_x);
        let last = euclidean(&bag.instances[order[m - 1]], opt_neg_x);
        let chosen = if first > last { &order[..take] } else { &order[m - take..] };
        members.extend(chosen.iter().map(|&j| InstanceRef { bag: b, index: j }));
    }
    Ok(Salient { members })
}

/// Salient instances of the bags labeled `positive_class`, with every other
/// bag treated as negative. Fails if `cfg.sal_num` exceeds a positive bag.
pub fn milsis_select(ds: &MilDataset, positive_class: usize, cfg: &SelectionConfig) -> Result<Vec<InstanceRef>> {
    cfg.validate()?;
    Ok(salient_instances(ds, positive_class, cfg.sal_num, false)?.members)
}

fn orient(bag: &Bag, order: &[usize], reference: &[f64]) -> (usize, usize) {
    let m = order.len();
    if m == 1 {
        return (order[0], order[0]);
    }
    let first = euclidean(&bag.instances[order[0]], reference);
    let last = euclidean(&bag.instances[order[m - 1]], reference);
    if last > first {
        (order[m - 1], order[m - 2])
    } else {
        (order[0], order[1])
    }
}

/// Salience-based prototypes for every bag with `positive_class` against
/// the rest. `sal_num` is capped at each bag's size here.
pub fn select_si(ds: &MilDataset, positive_class: usize, cfg: &SelectionConfig) -> Result<Vec<PrototypePair>> {
    cfg.validate()?;
    let (pos, neg) = partition(ds, positive_class)?;
    let salient = salient_instances(ds, positive_class, cfg.sal_num, true)?;
    let truth: Vec<&[f64]> = salient
        .members
        .iter()
        .map(|r| ds.bag(r.bag).instances[r.index].as_slice())
        .collect();

    let rankings: Vec<Vec<usize>> = (0..ds.len()).map(|b| salience_ranking(ds.bag(b))).collect();

    // One true negative per negative bag: the ranking endpoint farther from
    // the true positives.
    let mut opt_neg: Option<(InstanceRef, f64)> = None;
    for &b in &neg {
        let bag = ds.bag(b);
        let order = &rankings[b];
        let (first, last) = (order[0], order[order.len() - 1]);
        let d_first = min_dist_to_set(&bag.instances[first], &truth)?;
        let d_last = min_dist_to_set(&bag.instances[last], &truth)?;
        let (j, d) = if d_last > d_first { (last, d_last) } else { (first, d_first) };
        if opt_neg.is_none_or(|(_, best)| d > best) {
            opt_neg = Some((InstanceRef { bag: b, index: j }, d));
        }
    }
    let opt_neg = opt_neg.expect("at least one negative bag").0;
    let opt_neg_x = ds.bag(opt_neg.bag).instances[opt_neg.index].as_slice();

    let opt_pos = farthest(
        pos.iter().flat_map(|&b| {
            ds.bag(b)
                .instances
                .iter()
                .enumerate()
                .map(move |(j, x)| (InstanceRef { bag: b, index: j }, x.as_slice()))
        }),
        opt_neg_x,
    );
    let opt_pos_x = ds.bag(opt_pos.bag).instances[opt_pos.index].as_slice();

    Ok((0..ds.len())
        .map(|b| {
            let bag = ds.bag(b);
            let reference = if bag.label == positive_class { opt_neg_x } else { opt_pos_x };
            let (b_ix, b_iy) = orient(bag, &rankings[b], reference);
            PrototypePair {
                bag: b,
                b_ix,
                b_iy,
                method: Method::Si,
            }
        })
        .collect())
}

/// Medoid-based prototypes of one bag: `b_ix` is the medoid of the larger of
/// two clusters, then the medoid nearer the bag centroid, then the lower
/// index. `bag` is reported as 0; callers fill in the bag index.
pub fn select_med(bag: &Bag, cfg: &SelectionConfig) -> PrototypePair {
    let pair = |b_ix, b_iy| PrototypePair {
        bag: 0,
        b_ix,
        b_iy,
        method: Method::Med,
    };
    let n = bag.len();
    if n == 1 {
        return pair(0, 0);
    }
    let d = euclidean_matrix(&bag.instances).expect("bag instances share a dimension");
    let fit = two_medoids(&d, cfg.medoid_max_iter.max(1));
    let (m0, m1) = fit.medoids;
    let size1 = fit.assignment.iter().filter(|&&c| c == 1).count();
    let size0 = n - size1;
    if size0 != size1 {
        return if size0 > size1 { pair(m0, m1) } else { pair(m1, m0) };
    }
    let dim = bag.instances[0].len();
    let centroid: Vec<f64> = (0..dim)
        .map(|k| bag.instances.iter().map(|x| x[k]).sum::<f64>() / n as f64)
        .collect();
    let c0 = euclidean(&bag.instances[m0], &centroid);
    let c1 = euclidean(&bag.instances[m1], &centroid);
    if c1 < c0 {
        pair(m1, m0)
    } else {
        pair(m0, m1)
    }
}

/// Prototype pairs for every bag, in bag order.
///
/// Binary datasets use one salience pass with class 1 as positive. With more
/// classes each bag takes the pair from the one-vs-all pass where its own
/// class is positive. Medoid selection is label-free and runs per bag.
pub fn select_prototypes(ds: &MilDataset, method: Method, cfg: &SelectionConfig) -> Result<Vec<PrototypePair>> {
    cfg.validate()?;
    match method {
        Method::Med => Ok(ds
            .bags()
            .iter()
            .enumerate()
            .map(|(b, bag)| PrototypePair {
                bag: b,
                ..select_med(bag, cfg)
            })
            .collect()),
        Method::Si if ds.n_classes() == 2 => select_si(ds, 1, cfg),
        Method::Si => {
            let mut out: Vec<Option<PrototypePair>> = vec![None; ds.len()];
            for class in 0..ds.n_classes() {
                if ds.bags().iter().all(|b| b.label != class) {
                    continue;
                }
                for p in select_si(ds, class, cfg)? {
                    if ds.bag(p.bag).label == class {
                        out[p.bag] = Some(p);
                    }
                }
            }
            Ok(out.into_iter().map(|p| p.expect("every bag has a class")).collect())
        }
    }
}

/// `bag_id,method,b_ix,b_iy` rows with a header.
pub fn prototypes_csv(ds: &MilDataset, pairs: &[PrototypePair]) -> String {
    let mut out = String::from("bag_id,method,b_ix,b_iy\n");
    for p in pairs {
        out.push_str(&format!("{},{},{},{}\n", ds.bag(p.bag).id, p.method, p.b_ix, p.b_iy));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bag1d(values: &[f64]) -> Bag {
        Bag::new("b", 0, values.iter().map(|&v| vec![v]).collect())
    }

    #[test]
    fn salience_examples() {
        let pair = Bag::new("p", 0, vec![vec![0.0, 0.0], vec![0.0, 4.0]]);
        assert_eq!(salience(&pair, 0).unwrap(), 4.0);
        assert_eq!(salience(&pair, 1).unwrap(), 4.0);
        let line = bag1d(&[0.0, 1.0, 3.0]);
        let s: Vec<f64> = (0..3).map(|j| salience(&line, j).unwrap()).collect();
        assert_eq!(s, vec![4.0, 3.0, 5.0]);
        assert_eq!(salience_ranking(&line), vec![2, 0, 1]);
        assert_eq!(salience(&bag1d(&[2.0]), 0).unwrap(), 0.0);
        assert!(salience(&line, 3).is_err());
    }

    #[test]
    fn min_dist_examples() {
        let s = vec![vec![3.0, 4.0], vec![6.0, 8.0]];
        assert_eq!(min_dist_to_set(&[0.0, 0.0], &s).unwrap(), 5.0);
        assert_eq!(min_dist_to_set(&[6.0, 8.0], &s).unwrap(), 0.0);
        assert!(min_dist_to_set::<Vec<f64>>(&[0.0], &[]).is_err());
    }

    #[test]
    fn probability_examples() {
        assert_eq!(positive_probability(0.0, 1.0), 0.0);
        assert!((positive_probability(4.0, 2.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert!((positive_probability(4.0, 2.0) - 0.6321).abs() < 1e-4);
        assert!(positive_probability(1e3, 1.0) > 1.0 - 1e-12);
        assert!(positive_probability(1e3, 1.0) <= 1.0);
    }

    #[test]
    fn forced_single_instance() {
        let ds = MilDataset::with_default_classes(
            "t",
            2,
            vec![
                Bag::new("p", 1, vec![vec![5.0, 5.0]]),
                Bag::new("n", 0, vec![vec![0.0, 0.0], vec![1.0, 0.0]]),
            ],
        )
        .unwrap();
        let cfg = SelectionConfig {
            sal_num: 1,
            ..Default::default()
        };
        assert_eq!(milsis_select(&ds, 1, &cfg).unwrap(), vec![InstanceRef { bag: 0, index: 0 }]);
        assert!(milsis_select(&ds, 1, &SelectionConfig::default()).is_err());
        let pairs = select_si(&ds, 1, &SelectionConfig::default()).unwrap();
        assert_eq!((pairs[0].b_ix, pairs[0].b_iy), (0, 0));
    }

    #[test]
    fn one_sided_datasets_fail() {
        let ds = MilDataset::with_default_classes("t", 2, vec![Bag::new("p", 1, vec![vec![1.0]])]).unwrap();
        assert!(milsis_select(&ds, 1, &SelectionConfig::default()).is_err());
        assert!(select_si(&ds, 1, &SelectionConfig::default()).is_err());
    }

    #[test]
    fn medoid_examples() {
        let cfg = SelectionConfig::default();
        let p = select_med(&bag1d(&[0.0, 0.1, 10.0, 10.1, 10.2]), &cfg);
        assert_eq!((p.b_ix, p.b_iy), (3, 0));
        assert_eq!(select_med(&bag1d(&[4.0]), &cfg).b_ix, 0);
        assert_eq!(select_med(&bag1d(&[4.0]), &cfg).b_iy, 0);
        let same = select_med(&bag1d(&[1.0, 1.0, 1.0, 1.0]), &cfg);
        assert_eq!((same.b_ix, same.b_iy), (0, 1));
        let two = select_med(&bag1d(&[1.0, 5.0]), &cfg);
        assert_eq!((two.b_ix, two.b_iy), (0, 1));
    }

    #[test]
    fn method_parsing() {
        assert_eq!("SI".parse::<Method>().unwrap(), Method::Si);
        assert_eq!("med".parse::<Method>().unwrap(), Method::Med);
        assert!("x".parse::<Method>().is_err());
        assert_eq!(serde_json::to_string(&Method::Med).unwrap(), "\"med\"");
    }
}
