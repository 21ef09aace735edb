use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Shuffles the rows and deals them into `n_clients` shards whose sizes
/// differ by at most one; earlier shards take the remainder.
pub fn split_domain(ds: &Dataset, n_clients: usize, rng: &mut Rng) -> Result<Vec<Dataset>> {
    if n_clients == 0 {
        return Err(Error::Input("n_clients must be at least 1".into()));
    }
    if n_clients > ds.len() {
        return Err(Error::Input(format!(
            "cannot split {} samples across {n_clients} clients",
            ds.len()
        )));
    }
    if n_clients == 1 {
        return Ok(vec![ds.clone()]);
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(rng);
    let (base, extra) = (ds.len() / n_clients, ds.len() % n_clients);
    let mut shards = Vec::with_capacity(n_clients);
    let mut start = 0;
    for c in 0..n_clients {
        let size = base + usize::from(c < extra);
        shards.push(ds.select(&idx[start..start + size], format!("{}#{c}", ds.domain_tag)));
        start += size;
    }
    Ok(shards)
}

/// Class-stratified split. The test side receives `round(N * test_fraction)`
/// rows allotted to classes by largest remainder (ties to the lower class
/// index); rows keep their original order within each side.
pub fn train_test_split(ds: &Dataset, test_fraction: f64, rng: &mut Rng) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test_fraction {test_fraction} outside (0,1)")));
    }
    let groups: Vec<Vec<usize>> = match ds.labels() {
        Some(labels) => {
            let mut g = vec![Vec::new(); ds.num_classes()];
            for (i, &y) in labels.iter().enumerate() {
                g[y].push(i);
            }
            g.retain(|v| !v.is_empty());
            g
        }
        None => vec![(0..ds.len()).collect()],
    };
    let total_test = (ds.len() as f64 * test_fraction).round() as usize;
    let quotas: Vec<f64> = groups.iter().map(|g| g.len() as f64 * test_fraction).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.sort_by(|&a, &b| {
        (quotas[b] - quotas[b].floor())
            .total_cmp(&(quotas[a] - quotas[a].floor()))
            .then(a.cmp(&b))
    });
    let mut missing = total_test.saturating_sub(alloc.iter().sum());
    for &c in order.iter().cycle().take(groups.len() * 2) {
        if missing == 0 {
            break;
        }
        if alloc[c] < groups[c].len() {
            alloc[c] += 1;
            missing -= 1;
        }
    }

    let mut test = Vec::new();
    let mut train = Vec::new();
    for (mut members, n_test) in groups.into_iter().zip(alloc) {
        let n = members.len();
        if n_test == 0 || n_test == n {
            return Err(Error::Config(format!(
                "test_fraction {test_fraction} leaves a class of {n} samples empty on one side"
            )));
        }
        members.shuffle(rng);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((
        ds.select(&train, ds.domain_tag.clone()),
        ds.select(&test, format!("{}-test", ds.domain_tag)),
    ))
}
