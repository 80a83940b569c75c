#![allow(dead_code)]

use clusternorm::tensor::{Dims, FeatureMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Groups of the first-neighbor graph computed with plain loops over the raw
/// buffer and a union-find, sorted by smallest member.
pub fn oracle_partition(f: &FeatureMap<f64>) -> Vec<Vec<usize>> {
    let d = f.dims();
    let (n, c, l) = (d.batch, d.channels, d.height * d.width);
    let data = f.data();
    if n < 2 {
        return vec![(0..n).collect()];
    }

    let mut means = vec![vec![0.0f64; c]; n];
    for b in 0..n {
        for ch in 0..c {
            let mut s = 0.0;
            for k in 0..l {
                s += data[(b * c + ch) * l + k];
            }
            means[b][ch] = s / l as f64;
        }
    }
    let norm = |v: &[f64]| {
        let mut s = 0.0;
        for x in v {
            s += x * x;
        }
        s.sqrt().max(1e-12)
    };
    let norms: Vec<f64> = means.iter().map(|m| norm(m)).collect();
    let mut sim = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut dot = 0.0;
            for ch in 0..c {
                dot += means[i][ch] * means[j][ch];
            }
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            sim[i][j] = (dot / (norms[a] * norms[b])).clamp(-1.0, 1.0);
        }
    }

    let mut first = vec![0usize; n];
    for i in 0..n {
        let mut best: Option<usize> = None;
        for j in 0..n {
            if j == i {
                continue;
            }
            match best {
                Some(k) if sim[i][j] <= sim[i][k] => {}
                _ => best = Some(j),
            }
        }
        first[i] = best.unwrap();
    }

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && (first[i] == j || first[j] == i || first[i] == first[j]) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_group = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_group[r] == usize::MAX {
            root_group[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_group[r]].push(i);
    }
    groups
}

/// Random batch with clustered instance means, exact duplicates and the
/// occasional all-zero sample, so ties and the norm floor get exercised.
pub fn clustered_batch(rng: &mut ChaCha8Rng, max_batch: usize, max_channels: usize) -> FeatureMap<f64> {
    let b = rng.random_range(1..=max_batch);
    let c = rng.random_range(1..=max_channels);
    let h = rng.random_range(1..=3);
    let w = rng.random_range(1..=3);
    let l = h * w;
    let k = rng.random_range(1..=6);
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..c).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect())
        .collect();
    let spread: f64 = rng.random_range(0.05..1.0);
    let mut data: Vec<f64> = Vec::with_capacity(b * c * l);
    for i in 0..b {
        let roll: f64 = rng.random();
        if i > 0 && roll < 0.1 {
            let src = rng.random_range(0..i);
            let copy = data[src * c * l..(src + 1) * c * l].to_vec();
            data.extend(copy);
        } else if roll < 0.13 {
            data.extend(std::iter::repeat_n(0.0, c * l));
        } else {
            let center = &centers[rng.random_range(0..k)];
            for ch in 0..c {
                for _ in 0..l {
                    data.push(center[ch] + spread * rng.sample::<f64, _>(StandardNormal));
                }
            }
        }
    }
    FeatureMap::new(Dims::new(b, c, h, w), data).unwrap()
}

/// Random feature map with entries `N(shift, scale^2)` per channel.
pub fn gaussian_map(rng: &mut ChaCha8Rng, dims: Dims) -> FeatureMap<f32> {
    let shifts: Vec<f64> = (0..dims.channels).map(|_| rng.random_range(-3.0..3.0)).collect();
    let scales: Vec<f64> = (0..dims.channels).map(|_| rng.random_range(0.5..3.0)).collect();
    FeatureMap::from_fn(dims, |_, c, _| {
        (shifts[c] + scales[c] * rng.sample::<f64, _>(StandardNormal)) as f32
    })
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mean and population variance of `xs` in f64.
pub fn moments(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.into_iter().collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
}
