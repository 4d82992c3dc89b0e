//! Synthetic interaction streams with rotating item popularity and drifting
//! user preferences.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{ensure, Result};
use asmg_core::data::Interaction;
use asmg_core::rng::{purpose, rng_for};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const SECONDS_PER_DAY: i64 = 86_400;
const LATENT_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDriftSpec {
    pub users: usize,
    pub items: usize,
    pub periods: usize,
    pub interactions_per_period: usize,
    /// Fraction of the hot-item window the popularity peak moves per period.
    pub rotation: f64,
    /// Weight of the fresh random direction mixed into every user's
    /// preference each period.
    pub drift: f64,
    /// Probability that an interaction picks a uniformly random item.
    pub noise: f64,
    pub categories: usize,
    /// Width of the hot-item window as a fraction of the catalog.
    pub hot_fraction: f64,
    /// Strength of popularity and preference in the item choice.
    pub popularity_weight: f64,
    pub preference_weight: f64,
    pub seed: u64,
}

impl Default for SyntheticDriftSpec {
    fn default() -> Self {
        SyntheticDriftSpec {
            users: 10_000,
            items: 1_000,
            periods: 31,
            interactions_per_period: 4_000,
            rotation: 0.3,
            drift: 0.1,
            noise: 0.1,
            categories: 20,
            hot_fraction: 0.1,
            popularity_weight: 4.0,
            preference_weight: 3.0,
            seed: 2020,
        }
    }
}

impl SyntheticDriftSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.users > 0 && self.items > 1 && self.periods > 0,
            "synthetic stream needs users, at least two items and periods"
        );
        ensure!(
            self.interactions_per_period > 0,
            "synthetic stream needs interactions per period"
        );
        ensure!(
            self.categories > 0 && self.categories <= self.items,
            "category count must be in 1..=items"
        );
        for (name, v) in [
            ("rotation", self.rotation),
            ("drift", self.drift),
            ("noise", self.noise),
        ] {
            ensure!((0.0..=1.0).contains(&v), "{name} must lie in [0, 1], got {v}");
        }
        ensure!(
            self.hot_fraction > 0.0 && self.hot_fraction <= 1.0,
            "hot fraction must lie in (0, 1]"
        );
        ensure!(
            self.popularity_weight >= 0.0 && self.preference_weight >= 0.0,
            "choice weights must be non-negative"
        );
        Ok(())
    }
}

fn unit(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

fn gaussian(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Positive interactions, one calendar day per period, with an `i_cat`
/// item feature.
pub fn generate(spec: &SyntheticDriftSpec) -> Result<Vec<Interaction>> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, &[purpose::SYNTH]);
    let n = spec.items;

    let category: Vec<usize> = (0..n).map(|i| i % spec.categories).collect();
    let centers: Vec<Vec<f64>> = (0..spec.categories)
        .map(|_| {
            let mut c = gaussian(&mut rng, LATENT_DIM);
            unit(&mut c);
            c
        })
        .collect();
    let item_vec: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut v = gaussian(&mut rng, LATENT_DIM);
            unit(&mut v);
            let mut out: Vec<f64> = centers[category[i]]
                .iter()
                .zip(&v)
                .map(|(c, e)| c + 0.5 * e)
                .collect();
            unit(&mut out);
            out
        })
        .collect();
    // position of every item on the popularity circle
    let mut ring: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ring.swap(i, rng.gen_range(0..=i));
    }
    let mut slot = vec![0usize; n];
    for (pos, &item) in ring.iter().enumerate() {
        slot[item] = pos;
    }
    let hot = (spec.hot_fraction * n as f64).max(1.0);
    let sigma = hot / 2.0;
    let start = rng.gen_range(0.0..n as f64);

    let mut users: Vec<Vec<f64>> = (0..spec.users)
        .map(|_| {
            let mut u = gaussian(&mut rng, LATENT_DIM);
            unit(&mut u);
            u
        })
        .collect();

    let mut out = Vec::with_capacity(spec.periods * spec.interactions_per_period);
    let mut logits = vec![0.0; n];
    let mut cumulative = vec![0.0; n];
    for t in 0..spec.periods {
        if t > 0 && spec.drift > 0.0 {
            for u in &mut users {
                let fresh = gaussian(&mut rng, LATENT_DIM);
                for (x, f) in u.iter_mut().zip(&fresh) {
                    *x = (1.0 - spec.drift) * *x + spec.drift * f / (LATENT_DIM as f64).sqrt();
                }
                unit(u);
            }
        }
        let center = start + t as f64 * spec.rotation * hot;
        let popularity: Vec<f64> = (0..n)
            .map(|i| {
                let raw = (slot[i] as f64 - center).rem_euclid(n as f64);
                let d = raw.min(n as f64 - raw);
                spec.popularity_weight * (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();

        let mut draws: Vec<(i64, usize, usize)> = (0..spec.interactions_per_period)
            .map(|_| {
                let user = rng.gen_range(0..spec.users);
                let ts = t as i64 * SECONDS_PER_DAY + rng.gen_range(0..SECONDS_PER_DAY);
                (ts, user, 0)
            })
            .collect();
        draws.sort_unstable();
        for (_, user, item) in &mut draws {
            if rng.gen_bool(spec.noise) {
                *item = rng.gen_range(0..n);
                continue;
            }
            let u = &users[*user];
            let mut max = f64::NEG_INFINITY;
            for i in 0..n {
                let affinity: f64 = u.iter().zip(&item_vec[i]).map(|(a, b)| a * b).sum();
                logits[i] = popularity[i] + spec.preference_weight * affinity;
                max = max.max(logits[i]);
            }
            let mut acc = 0.0;
            for i in 0..n {
                acc += (logits[i] - max).exp();
                cumulative[i] = acc;
            }
            let r = rng.gen_range(0.0..acc);
            *item = cumulative.partition_point(|&c| c <= r).min(n - 1);
        }
        for (ts, user, item) in draws {
            out.push(
                Interaction::new(format!("u{user}"), format!("i{item}"), 1, ts)
                    .with_feature("i_cat", &format!("c{}", category[item])),
            );
        }
    }
    Ok(out)
}

/// Writes interactions in the comma-separated input format.
pub fn write_interactions(path: &Path, rows: &[Interaction]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "user_id,item_id,label,timestamp")?;
    let mut line = String::new();
    for x in rows {
        line.clear();
        write!(line, "{},{},{},{}", x.user_id, x.item_id, x.label, x.timestamp)?;
        for (k, v) in &x.side_features {
            write!(line, ",{k}={v}")?;
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}
