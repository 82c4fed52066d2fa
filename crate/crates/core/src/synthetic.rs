//! Seeded synthetic MIL datasets with known ground truth.
//!
//! All generators draw from `ChaCha8Rng` (the ChaCha stream cipher with 8
//! rounds, a 64-bit block counter and a 64-bit seed expanded by
//! `seed_from_u64`), so output depends only on the seed.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Bag, MilDataset};
use crate::error::{Error, Result};

/// Binary dataset where every positive bag holds exactly one instance drawn
/// around `shift * (1, ..., 1)` and all other instances come from a shared
/// background Gaussian at the origin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub n_bags: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub dim: usize,
    pub shift: f64,
    pub noise_sigma: f64,
    /// Chance that a negative bag also carries one positive-component instance.
    pub contamination: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_bags: 40,
            min_instances: 3,
            max_instances: 8,
            dim: 8,
            shift: 6.0,
            noise_sigma: 1.0,
            contamination: 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthetic {
    pub dataset: MilDataset,
    /// Bag id to the index of its planted instance (positive bags only).
    pub planted: BTreeMap<String, usize>,
}

impl Synthetic {
    /// The `{bag_id: planted_index}` sidecar manifest.
    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&self.planted).expect("map of strings to integers serializes")
    }
}

fn gaussian(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64) -> Vec<f64> {
    center
        .iter()
        .map(|c| {
            let z: f64 = rng.sample(StandardNormal);
            c + sigma * z
        })
        .collect()
}

fn check_range(min: usize, max: usize) -> Result<()> {
    if min == 0 || min > max {
        return Err(Error::InvalidArgument(format!(
            "invalid instances-per-bag range {min}..={max}"
        )));
    }
    Ok(())
}

/// Bags alternate positive (even index) and negative (odd index).
pub fn generate_synthetic(cfg: &PlantedConfig) -> Result<Synthetic> {
    check_range(cfg.min_instances, cfg.max_instances)?;
    if cfg.n_bags == 0 || cfg.n_bags % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "n_bags must be even and positive, got {}",
            cfg.n_bags
        )));
    }
    if cfg.dim < 2 {
        return Err(Error::InvalidArgument("dimension must be >= 2".into()));
    }
    if !(cfg.shift >= 0.0) || !(cfg.noise_sigma > 0.0) || !(0.0..=1.0).contains(&cfg.contamination) {
        return Err(Error::InvalidArgument(
            "shift must be >= 0, noise sigma > 0 and contamination in [0, 1]".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let origin = vec![0.0; cfg.dim];
    let planted_center = vec![cfg.shift; cfg.dim];
    let mut bags = Vec::with_capacity(cfg.n_bags);
    let mut planted = BTreeMap::new();
    for i in 0..cfg.n_bags {
        let id = format!("bag{i:03}");
        let positive = i % 2 == 0;
        let n = rng.random_range(cfg.min_instances..=cfg.max_instances);
        let special = if positive {
            Some(rng.random_range(0..n))
        } else if rng.random::<f64>() < cfg.contamination {
            Some(rng.random_range(0..n))
        } else {
            None
        };
        let instances = (0..n)
            .map(|j| {
                if Some(j) == special {
                    gaussian(&mut rng, &planted_center, cfg.noise_sigma)
                } else {
                    gaussian(&mut rng, &origin, cfg.noise_sigma)
                }
            })
            .collect();
        if positive {
            planted.insert(id.clone(), special.expect("positive bags are planted"));
        }
        bags.push(Bag::new(id, usize::from(positive), instances));
    }
    let dataset = MilDataset::with_default_classes("synthetic", 2, bags)?;
    Ok(Synthetic { dataset, planted })
}

/// Multiclass dataset with intra-class substructure: each class has a
/// center, its `subclusters` centers are offset from it, and every bag holds
/// signal instances drawn around one sub-cluster center plus background
/// instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusteredConfig {
    pub classes: usize,
    pub bags_per_class: usize,
    pub subclusters: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub dim: usize,
    /// Norm of every class center.
    pub center_radius: f64,
    /// Distance of each sub-cluster center from its class center.
    pub subcluster_radius: f64,
    /// Spread of signal instances around their center.
    pub signal_sigma: f64,
    /// Spread of the shared background component at the origin.
    pub background_sigma: f64,
    /// Share of a bag's instances that carry the signal; at least one does.
    #[serde(default)]
    pub signal_share: f64,
    pub seed: u64,
}

impl Default for ClusteredConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            bags_per_class: 20,
            subclusters: 2,
            min_instances: 3,
            max_instances: 6,
            dim: 8,
            center_radius: 6.0,
            subcluster_radius: 3.0,
            signal_sigma: 1.0,
            background_sigma: 1.0,
            signal_share: 0.0,
            seed: 0,
        }
    }
}

impl ClusteredConfig {
    /// Image-collection shape: three classes of about 67 bags, most
    /// instances of a bag carrying its class signal, overlapping classes.
    pub fn image_like(seed: u64) -> Self {
        Self {
            classes: 3,
            bags_per_class: 67,
            subclusters: 3,
            min_instances: 2,
            max_instances: 8,
            dim: 8,
            center_radius: 3.0,
            subcluster_radius: 1.5,
            signal_sigma: 1.0,
            background_sigma: 1.0,
            signal_share: 0.6,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Clustered {
    pub dataset: MilDataset,
    /// Bag id to the index of its first signal instance.
    pub signal: BTreeMap<String, usize>,
    /// Bag id to the sub-cluster its signal instance was drawn from.
    pub subcluster: BTreeMap<String, usize>,
    /// Sub-cluster centers, indexed `[class][subcluster]`.
    pub centers: Vec<Vec<Vec<f64>>>,
}

/// Bags cycle through classes (`i % classes`) and, within a class, through
/// its sub-clusters.
pub fn generate_clustered(cfg: &ClusteredConfig) -> Result<Clustered> {
    check_range(cfg.min_instances, cfg.max_instances)?;
    if cfg.classes < 2 || cfg.bags_per_class == 0 || cfg.subclusters == 0 || cfg.dim < 2 {
        return Err(Error::InvalidArgument(
            "need >= 2 classes, >= 1 bag per class, >= 1 sub-cluster and dimension >= 2".into(),
        ));
    }
    if !(cfg.signal_sigma > 0.0)
        || !(cfg.background_sigma > 0.0)
        || !(cfg.center_radius >= 0.0)
        || !(cfg.subcluster_radius >= 0.0)
    {
        return Err(Error::InvalidArgument("spreads must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.signal_share) {
        return Err(Error::InvalidArgument("signal_share must be in [0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let origin = vec![0.0; cfg.dim];
    let direction = |rng: &mut ChaCha8Rng, radius: f64| -> Vec<f64> {
        let dir = gaussian(rng, &origin, 1.0);
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        dir.iter().map(|v| v * radius / norm).collect()
    };
    let centers: Vec<Vec<Vec<f64>>> = (0..cfg.classes)
        .map(|_| {
            let class_center = direction(&mut rng, cfg.center_radius);
            (0..cfg.subclusters)
                .map(|_| {
                    let offset = direction(&mut rng, cfg.subcluster_radius);
                    class_center.iter().zip(offset).map(|(c, o)| c + o).collect()
                })
                .collect()
        })
        .collect();
    let total = cfg.classes * cfg.bags_per_class;
    let mut bags = Vec::with_capacity(total);
    let mut signal = BTreeMap::new();
    let mut subcluster = BTreeMap::new();
    for i in 0..total {
        let id = format!("bag{i:03}");
        let class = i % cfg.classes;
        let sub = (i / cfg.classes) % cfg.subclusters;
        let n = rng.random_range(cfg.min_instances..=cfg.max_instances);
        let at = rng.random_range(0..n);
        let extra = ((cfg.signal_share * n as f64).round() as usize).clamp(1, n) - 1;
        let is_signal = |j: usize| (j + n - at) % n <= extra;
        let instances = (0..n)
            .map(|j| {
                if is_signal(j) {
                    gaussian(&mut rng, &centers[class][sub], cfg.signal_sigma)
                } else {
                    gaussian(&mut rng, &origin, cfg.background_sigma)
                }
            })
            .collect();
        signal.insert(id.clone(), at);
        subcluster.insert(id.clone(), sub);
        bags.push(Bag::new(id, class, instances));
    }
    let dataset = MilDataset::with_default_classes("clustered", cfg.classes, bags)?;
    Ok(Clustered {
        dataset,
        signal,
        subcluster,
        centers,
    })
}
