use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::nnkernel::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitKind {
    /// One single-class shard per user.
    Split1,
    /// Two single-class shards per user.
    Split2,
    /// Three single-class shards per user.
    Split3,
    /// Three users holding classes {0,1}, {2,3,4} and {5,...,9}.
    Setup1,
    /// Explicit class list per user. A class listed for several users is split
    /// evenly between them.
    Custom(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub kind: SplitKind,
    pub num_users: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(kind: SplitKind, num_users: usize, seed: u64) -> Self {
        Self {
            kind,
            num_users,
            seed,
        }
    }

    pub fn setup1(seed: u64) -> Self {
        Self::new(SplitKind::Setup1, 3, seed)
    }

    fn shards_per_user(&self) -> Option<usize> {
        match self.kind {
            SplitKind::Split1 => Some(1),
            SplitKind::Split2 => Some(2),
            SplitKind::Split3 => Some(3),
            _ => None,
        }
    }
}

/// Sample indices of `ds` held by each user.
///
/// For Split-k the data is cut into `users * k` single-class shards: shard `j`
/// holds class `j mod C`, each class's samples (seed-shuffled) divided evenly
/// across its shards. A seeded permutation of shards then hands user `u` the
/// shards at positions `u*k .. (u+1)*k`. Setup-1 and custom assignments give a
/// user every sample of its classes.
pub fn partition_indices(ds: &LabeledDataset, spec: &SplitSpec) -> Result<Vec<Vec<usize>>> {
    let mut rng = Rng::new(spec.seed);
    let classes = ds.class_count();
    let mut by_class = ds.indices_by_class();
    for idx in &mut by_class {
        rng.shuffle(idx);
    }

    if let Some(k) = spec.shards_per_user() {
        let shards = spec.num_users * k;
        if spec.num_users == 0 || shards < classes {
            return Err(Error::config(format!(
                "{shards} shards cannot cover {classes} classes"
            )));
        }
        let mut shard_members = vec![Vec::new(); shards];
        for (c, idx) in by_class.iter().enumerate() {
            let owners: Vec<usize> = (c..shards).step_by(classes).collect();
            for (slot, chunk) in split_even(idx, owners.len()).into_iter().enumerate() {
                shard_members[owners[slot]] = chunk;
            }
        }
        let mut order: Vec<usize> = (0..shards).collect();
        rng.shuffle(&mut order);
        let users = order
            .chunks(k)
            .map(|chunk| {
                let mut v: Vec<usize> = chunk
                    .iter()
                    .flat_map(|&s| shard_members[s].iter().copied())
                    .collect();
                v.sort_unstable();
                v
            })
            .collect();
        return Ok(users);
    }

    let assignment: Vec<Vec<usize>> = match &spec.kind {
        SplitKind::Setup1 => {
            if classes < 10 {
                return Err(Error::config("setup1 needs 10 classes"));
            }
            if spec.num_users != 3 {
                return Err(Error::config("setup1 has exactly 3 users"));
            }
            vec![vec![0, 1], vec![2, 3, 4], vec![5, 6, 7, 8, 9]]
        }
        SplitKind::Custom(a) => {
            if a.len() != spec.num_users {
                return Err(Error::config(format!(
                    "custom split lists {} users, expected {}",
                    a.len(),
                    spec.num_users
                )));
            }
            a.clone()
        }
        _ => unreachable!("split-k handled above"),
    };
    let mut holders = vec![Vec::new(); classes];
    for (u, cls) in assignment.iter().enumerate() {
        for &c in cls {
            if c >= classes {
                return Err(Error::config(format!(
                    "user {u} assigned class {c} outside {classes} classes"
                )));
            }
            if holders[c].contains(&u) {
                return Err(Error::config(format!("user {u} lists class {c} twice")));
            }
            holders[c].push(u);
        }
    }
    let mut users = vec![Vec::new(); spec.num_users];
    for (c, idx) in by_class.iter().enumerate() {
        if holders[c].is_empty() {
            continue;
        }
        for (slot, chunk) in split_even(idx, holders[c].len()).into_iter().enumerate() {
            users[holders[c][slot]].extend(chunk);
        }
    }
    for v in &mut users {
        v.sort_unstable();
    }
    Ok(users)
}

/// One dataset per user; see [`partition_indices`].
pub fn partition(ds: &LabeledDataset, spec: &SplitSpec) -> Result<Vec<LabeledDataset>> {
    Ok(partition_indices(ds, spec)?
        .iter()
        .map(|idx| ds.subset(idx))
        .collect())
}

/// `parts` contiguous chunks whose sizes differ by at most one.
fn split_even(items: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(items[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Stratified, seeded sample of `ceil(fraction * n_c)` rows from each class
/// `c`. Returns `(cloud, rest)` as index lists into `ds`; cloud indices are
/// grouped by class, the rest keep dataset order.
pub fn take_cloud_fraction(
    ds: &LabeledDataset,
    fraction: f64,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("cloud fraction {fraction} not in (0, 1]")));
    }
    let mut in_cloud = vec![false; ds.len()];
    let mut cloud = Vec::new();
    for mut idx in ds.indices_by_class() {
        rng.shuffle(&mut idx);
        // Guard against products like 0.07 * 100 landing just above an integer.
        let take = ((fraction * idx.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        for &i in &idx[..take.min(idx.len())] {
            in_cloud[i] = true;
            cloud.push(i);
        }
    }
    let rest = (0..ds.len()).filter(|&i| !in_cloud[i]).collect();
    Ok((cloud, rest))
}
