//! Bags, datasets, CSV ingestion and seeded train/test splitting.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A labeled set of instances. Every instance is a feature vector of the
/// dataset's dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bag {
    pub id: String,
    pub label: usize,
    pub instances: Vec<Vec<f64>>,
}

impl Bag {
    pub fn new(id: impl Into<String>, label: usize, instances: Vec<Vec<f64>>) -> Self {
        Self {
            id: id.into(),
            label,
            instances,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instance(&self, index: usize) -> Result<&[f64]> {
        self.instances
            .get(index)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InstanceIndex {
                bag: self.id.clone(),
                index,
                len: self.instances.len(),
            })
    }
}

/// An immutable multiple-instance dataset.
#[derive(Debug, Clone)]
pub struct MilDataset {
    name: String,
    dimension: usize,
    bags: Vec<Bag>,
    class_names: Vec<String>,
    index: HashMap<String, usize>,
}

impl MilDataset {
    /// Validates and builds a dataset. Fails on duplicate bag ids, empty bags,
    /// ragged or non-finite instances, labels outside the class set, or fewer
    /// than two classes.
    pub fn new(name: impl Into<String>, class_names: Vec<String>, bags: Vec<Bag>) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(Error::Dataset(format!(
                "need at least 2 classes, got {}",
                class_names.len()
            )));
        }
        let dimension = match bags.first().and_then(|b| b.instances.first()) {
            Some(first) => first.len(),
            None => return Err(Error::Dataset("dataset has no bags".into())),
        };
        if dimension == 0 {
            return Err(Error::Dataset("feature dimension must be >= 1".into()));
        }
        let mut index = HashMap::with_capacity(bags.len());
        for (i, bag) in bags.iter().enumerate() {
            if index.insert(bag.id.clone(), i).is_some() {
                return Err(Error::Dataset(format!("duplicate bag id `{}`", bag.id)));
            }
            if bag.instances.is_empty() {
                return Err(Error::Dataset(format!("bag `{}` has no instances", bag.id)));
            }
            if bag.label >= class_names.len() {
                return Err(Error::Dataset(format!(
                    "bag `{}` has label {} outside {} classes",
                    bag.id,
                    bag.label,
                    class_names.len()
                )));
            }
            for inst in &bag.instances {
                if inst.len() != dimension {
                    return Err(Error::Dimension {
                        expected: dimension,
                        got: inst.len(),
                    });
                }
                if inst.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Dataset(format!(
                        "bag `{}` has a non-finite feature",
                        bag.id
                    )));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            dimension,
            bags,
            class_names,
            index,
        })
    }

    /// Builds a dataset with default class names: `negative`/`positive` for
    /// two classes, `class{k}` otherwise.
    pub fn with_default_classes(name: impl Into<String>, n_classes: usize, bags: Vec<Bag>) -> Result<Self> {
        Self::new(name, default_class_names(n_classes), bags)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn bags(&self) -> &[Bag] {
        &self.bags
    }

    pub fn bag(&self, index: usize) -> &Bag {
        &self.bags[index]
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn instance_count(&self) -> usize {
        self.bags.iter().map(Bag::len).sum()
    }

    /// Number of bags per class id.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for bag in &self.bags {
            counts[bag.label] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<usize> {
        self.bags.iter().map(|b| b.label).collect()
    }

    pub fn bag_index(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownBag(id.to_string()))
    }

    /// Copy of the dataset under a new name.
    pub fn renamed(&self, name: impl Into<String>) -> Self {
        let mut ds = self.clone();
        ds.name = name.into();
        ds
    }

    /// SHA-256 over ids, labels and the exact bit patterns of every feature.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.dimension as u64).to_le_bytes());
        for name in &self.class_names {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
        }
        for bag in &self.bags {
            hasher.update(bag.id.as_bytes());
            hasher.update([0u8]);
            hasher.update((bag.label as u64).to_le_bytes());
            hasher.update((bag.instances.len() as u64).to_le_bytes());
            for inst in &bag.instances {
                for v in inst {
                    hasher.update(v.to_bits().to_le_bytes());
                }
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = dataset_name_from_path(path);
        let file = File::open(path)?;
        read_csv(BufReader::new(file), name)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write_csv(self, &mut w)?;
        w.flush()?;
        Ok(())
    }
}

pub fn default_class_names(n_classes: usize) -> Vec<String> {
    if n_classes == 2 {
        vec!["negative".to_string(), "positive".to_string()]
    } else {
        (0..n_classes).map(|k| format!("class{k}")).collect()
    }
}

/// File stem, lowercased.
pub fn dataset_name_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().to_lowercase())
        .unwrap_or_else(|| "dataset".to_string())
}

fn lines_of<R: BufRead>(reader: R) -> impl Iterator<Item = (usize, std::io::Result<String>)> {
    reader.lines().enumerate().map(|(i, l)| {
        (
            i + 1,
            l.map(|mut s| {
                if s.ends_with('\r') {
                    s.pop();
                }
                s
            }),
        )
    })
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Groups rows into bags by id, keeping first-appearance order of bags and
/// row order within a bag.
struct BagAccumulator {
    order: Vec<(String, usize, Vec<Vec<f64>>)>,
    lookup: HashMap<String, usize>,
}

impl BagAccumulator {
    fn new() -> Self {
        Self {
            order: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    fn push(&mut self, line: usize, id: &str, label: usize, features: Vec<f64>) -> Result<()> {
        match self.lookup.get(id) {
            Some(&i) => {
                let entry = &mut self.order[i];
                if entry.1 != label {
                    return Err(parse_err(
                        line,
                        format!("bag `{id}` has inconsistent labels {} and {label}", entry.1),
                    ));
                }
                entry.2.push(features);
            }
            None => {
                self.lookup.insert(id.to_string(), self.order.len());
                self.order.push((id.to_string(), label, vec![features]));
            }
        }
        Ok(())
    }

    fn finish(self, name: String) -> Result<MilDataset> {
        if self.order.is_empty() {
            return Err(Error::Dataset("no data rows".into()));
        }
        let max_label = self.order.iter().map(|b| b.1).max().unwrap_or(0);
        let bags = self
            .order
            .into_iter()
            .map(|(id, label, instances)| Bag::new(id, label, instances))
            .collect();
        MilDataset::with_default_classes(name, (max_label + 1).max(2), bags)
    }
}

fn parse_feature(line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("non-numeric feature `{field}`")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("non-finite feature `{field}`")));
    }
    Ok(v)
}

/// Reads the canonical `bag_id,label,f0,...,f{d-1}` layout.
pub fn read_csv<R: BufRead>(reader: R, name: impl Into<String>) -> Result<MilDataset> {
    let mut lines = lines_of(reader).filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
    let (hline, header) = match lines.next() {
        Some((n, l)) => (n, l?),
        None => return Err(Error::Dataset("empty file".into())),
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "bag_id" || cols[1] != "label" {
        return Err(parse_err(hline, "header must start with `bag_id,label,f0`"));
    }
    for (k, c) in cols[2..].iter().enumerate() {
        if *c != format!("f{k}") {
            return Err(parse_err(hline, format!("expected column `f{k}`, found `{c}`")));
        }
    }
    let d = cols.len() - 2;
    let mut acc = BagAccumulator::new();
    for (n, line) in lines {
        let line = line?;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(parse_err(
                n,
                format!("expected {} fields, found {}", d + 2, fields.len()),
            ));
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(parse_err(n, "empty bag id"));
        }
        let label: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(n, format!("label `{}` is not a non-negative integer", fields[1])))?;
        let features = fields[2..]
            .iter()
            .map(|f| parse_feature(n, f))
            .collect::<Result<Vec<_>>>()?;
        acc.push(n, id, label, features)?;
    }
    acc.finish(name.into())
}

pub fn write_csv<W: Write>(ds: &MilDataset, w: &mut W) -> Result<()> {
    write!(w, "bag_id,label")?;
    for k in 0..ds.dimension() {
        write!(w, ",f{k}")?;
    }
    writeln!(w)?;
    for bag in ds.bags() {
        for inst in &bag.instances {
            write!(w, "{},{}", bag.id, bag.label)?;
            for v in inst {
                // `{}` on f64 prints the shortest string that parses back exactly.
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Converts the UCI Musk `.data` layout
/// (`molecule,conformation,f1..f166,class`, no header) into a dataset.
/// Molecule names become bag ids; the class column maps to {0, 1}.
pub fn read_musk_uci<R: Read>(reader: R, name: impl Into<String>) -> Result<MilDataset> {
    let reader = BufReader::new(reader);
    let mut acc = BagAccumulator::new();
    let mut width = None;
    for (n, line) in lines_of(reader) {
        let line = line?;
        let line = line.trim().trim_end_matches('.');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 4 {
            return Err(parse_err(n, "expected molecule, conformation, features and class"));
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(parse_err(n, format!("expected {w} fields, found {}", fields.len())))
            }
            _ => {}
        }
        let class = parse_feature(n, fields[fields.len() - 1])?;
        let label = match class {
            c if c == 0.0 => 0,
            c if c == 1.0 => 1,
            _ => return Err(parse_err(n, format!("class `{class}` is not 0 or 1"))),
        };
        let features = fields[2..fields.len() - 1]
            .iter()
            .map(|f| parse_feature(n, f))
            .collect::<Result<Vec<_>>>()?;
        acc.push(n, fields[0], label, features)?;
    }
    acc.finish(name.into())
}

/// Parameters for a seeded train/test partition of the bags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        Self {
            train_fraction,
            seed,
            stratified: true,
        }
    }
}

/// Bag indices of each side of a split, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Distributes `total` across `quotas` by floor plus largest remainder.
/// Ties in the remainder go to the lower index.
pub(crate) fn largest_remainder(quotas: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Seeded partition of the bags. Stratified mode rounds the overall train
/// size and apportions it across classes by largest remainder.
pub fn split(ds: &MilDataset, spec: &SplitSpec) -> Result<Split> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {} not in (0, 1)",
            spec.train_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = ds.len();
    let total = (spec.train_fraction * n as f64).round() as usize;
    let mut train = Vec::with_capacity(total);
    if spec.stratified {
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
        for (i, bag) in ds.bags().iter().enumerate() {
            per_class[bag.label].push(i);
        }
        let quotas: Vec<f64> = per_class
            .iter()
            .map(|c| spec.train_fraction * c.len() as f64)
            .collect();
        let counts = largest_remainder(&quotas, total);
        for (mut members, take) in per_class.into_iter().zip(counts) {
            members.shuffle(&mut rng);
            train.extend(members.into_iter().take(take));
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        train.extend(all.into_iter().take(total));
    }
    train.sort_unstable();
    let mut present = vec![false; ds.n_classes()];
    for &i in &train {
        present[ds.bag(i).label] = true;
    }
    let counts = ds.class_counts();
    if let Some(missing) = (0..ds.n_classes()).find(|&c| counts[c] > 0 && !present[c]) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {} leaves class {missing} without training bags",
            spec.train_fraction
        )));
    }
    let test = complement(n, &train);
    Ok(Split { train, test })
}

/// Indices in `0..n` not present in the sorted slice `taken`.
pub(crate) fn complement(n: usize, taken: &[usize]) -> Vec<usize> {
    let mut mask = vec![false; n];
    for &i in taken {
        mask[i] = true;
    }
    (0..n).filter(|&i| !mask[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<MilDataset> {
        read_csv(s.as_bytes(), "t")
    }

    #[test]
    fn single_row_file() {
        let ds = parse("bag_id,label,f0\nb0,1,0.5\n").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.instance_count(), 1);
        assert_eq!(ds.dimension(), 1);
        assert_eq!(ds.bag(0).instances[0], vec![0.5]);
    }

    #[test]
    fn crlf_and_grouping() {
        let ds = parse("bag_id,label,f0,f1\r\na,0,1,2\r\nb,1,3,4\r\na,0,5,6\r\n").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.bag(0).id, "a");
        assert_eq!(ds.bag(0).instances, vec![vec![1.0, 2.0], vec![5.0, 6.0]]);
        assert_eq!(ds.class_counts(), vec![1, 1]);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(parse(""), Err(Error::Dataset(_))));
        assert!(matches!(parse("id,label,f0\na,0,1\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("bag_id,label,f0,f2\na,0,1,2\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("bag_id,label,f0\na,0,1,2\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("bag_id,label,f0\na,0,x\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse("bag_id,label,f0\na,-1,1\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            parse("bag_id,label,f0\na,0,1\na,1,2\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(parse("bag_id,label,f0\n"), Err(Error::Dataset(_))));
    }

    #[test]
    fn musk_uci_conversion() {
        let raw = "MUSK-188,188_1_1,46,-108,1.\nMUSK-188,188_1_2,41,-188,1.\nNON-MUSK-j146,j146_2+1,40,-173,0.\n";
        let ds = read_musk_uci(raw.as_bytes(), "musk").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.dimension(), 2);
        assert_eq!(ds.bag(0).id, "MUSK-188");
        assert_eq!(ds.bag(0).label, 1);
        assert_eq!(ds.bag(0).len(), 2);
        assert_eq!(ds.bag(1).label, 0);
        assert_eq!(ds.bag(1).instances[0], vec![40.0, -173.0]);
        assert!(read_musk_uci("m,c,1,2\n".as_bytes(), "x").is_err());
    }

    #[test]
    fn invalid_datasets() {
        let b = |id: &str, label, inst: Vec<Vec<f64>>| Bag::new(id, label, inst);
        let names = default_class_names(2);
        assert!(MilDataset::new("x", vec!["a".into()], vec![b("a", 0, vec![vec![1.0]])]).is_err());
        assert!(MilDataset::new("x", names.clone(), vec![b("a", 0, vec![])]).is_err());
        assert!(MilDataset::new(
            "x",
            names.clone(),
            vec![b("a", 0, vec![vec![1.0]]), b("a", 1, vec![vec![1.0]])]
        )
        .is_err());
        assert!(MilDataset::new("x", names.clone(), vec![b("a", 2, vec![vec![1.0]])]).is_err());
        assert!(MilDataset::new("x", names.clone(), vec![b("a", 0, vec![vec![1.0], vec![1.0, 2.0]])]).is_err());
        assert!(MilDataset::new("x", names, vec![b("a", 0, vec![vec![f64::NAN]])]).is_err());
    }

    #[test]
    fn largest_remainder_rounding() {
        assert_eq!(largest_remainder(&[14.1, 13.5], 28), vec![14, 14]);
        assert_eq!(largest_remainder(&[0.5, 0.5], 1), vec![1, 0]);
        assert_eq!(largest_remainder(&[2.0, 3.0], 5), vec![2, 3]);
    }

    fn toy(n_pos: usize, n_neg: usize) -> MilDataset {
        let bags = (0..n_pos + n_neg)
            .map(|i| Bag::new(format!("b{i}"), usize::from(i < n_pos), vec![vec![i as f64]]))
            .collect();
        MilDataset::with_default_classes("toy", 2, bags).unwrap()
    }

    #[test]
    fn stratified_split_counts() {
        let ds = toy(47, 45);
        let s = split(&ds, &SplitSpec::new(0.3, 9)).unwrap();
        assert_eq!(s.train.len(), 28);
        assert_eq!(s.test.len(), 64);
        let pos = s.train.iter().filter(|&&i| ds.bag(i).label == 1).count();
        assert_eq!(pos, 14);
        assert_eq!(split(&ds, &SplitSpec::new(0.3, 9)).unwrap(), s);
    }

    #[test]
    fn degenerate_split_errors() {
        let ds = toy(1, 1);
        assert!(split(&ds, &SplitSpec::new(0.5, 1)).is_err());
        assert!(split(&ds, &SplitSpec::new(1.0, 1)).is_err());
        assert!(split(&ds, &SplitSpec::new(0.0, 1)).is_err());
    }
}
