//! Evaluation statistics: return normalization, the running-mean-of-last-8-
//! evaluations reporting protocol, pooled within/across-seed standard
//! deviation, and latent export for external visualization.

use crate::data::{build_sets, PreferenceDataset};
use crate::encoder::{Category, GroupLatent, SetEncoder};
use crate::error::{Error, Result};
use crate::nn::cosine;
use serde::Serialize;

/// One seed's evaluation events: `(epoch, episode returns)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedTrace {
    pub events: Vec<(usize, Vec<f64>)>,
}

/// Evaluation events for every seed; epochs must line up across seeds and
/// the per-event episode count must be constant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalTrace {
    pub seeds: Vec<SeedTrace>,
}

impl EvalTrace {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Empty("eval trace"));
        }
        let epochs: Vec<usize> = self.seeds[0].events.iter().map(|(e, _)| *e).collect();
        let n = self
            .seeds
            .first()
            .and_then(|s| s.events.first())
            .map(|(_, r)| r.len())
            .ok_or(Error::Empty("eval events"))?;
        for (i, seed) in self.seeds.iter().enumerate() {
            let e: Vec<usize> = seed.events.iter().map(|(e, _)| *e).collect();
            if e != epochs {
                return Err(Error::Invalid {
                    what: "eval trace",
                    why: format!("seed {i} epochs differ"),
                });
            }
            if seed.events.iter().any(|(_, r)| r.len() != n) {
                return Err(Error::Invalid {
                    what: "eval trace",
                    why: format!("seed {i} episode count varies"),
                });
            }
        }
        Ok(())
    }

    pub fn n_episodes_per_event(&self) -> usize {
        self.seeds[0].events[0].1.len()
    }

    pub fn epochs(&self) -> Vec<usize> {
        self.seeds[0].events.iter().map(|(e, _)| *e).collect()
    }
}

/// `100 * (ret - random_ref) / (expert_ref - random_ref)`. May leave
/// [0, 100] on either side.
pub fn normalized_score(ret: f64, random_ref: f64, expert_ref: f64) -> Result<f64> {
    if expert_ref == random_ref {
        return Err(Error::Invalid {
            what: "score references",
            why: "expert and random references are equal".into(),
        });
    }
    Ok(100.0 * (ret - random_ref) / (expert_ref - random_ref))
}

/// Windowed reporting protocol: at each epoch from the `window`-th event on,
/// average the last `window * n` episode returns per seed, then average
/// across seeds; report that curve and its maximum. Seed-averaging happens
/// before the max.
pub fn running_metric(trace: &EvalTrace, window: usize) -> Result<(Vec<(usize, f64)>, f64)> {
    trace.validate()?;
    if window == 0 {
        return Err(Error::Invalid {
            what: "running metric window",
            why: "zero".into(),
        });
    }
    let n_events = trace.seeds[0].events.len();
    if n_events < window {
        return Err(Error::Invalid {
            what: "eval trace",
            why: format!("{n_events} events < window {window}"),
        });
    }
    let epochs = trace.epochs();
    let mut curve = Vec::with_capacity(n_events - window + 1);
    for end in window..=n_events {
        let mut seed_sum = 0.0;
        for seed in &trace.seeds {
            let mut pooled_sum = 0.0;
            let mut pooled_count = 0usize;
            for (_, returns) in &seed.events[end - window..end] {
                pooled_sum += returns.iter().sum::<f64>();
                pooled_count += returns.len();
            }
            seed_sum += pooled_sum / pooled_count as f64;
        }
        curve.push((epochs[end - 1], seed_sum / trace.seeds.len() as f64));
    }
    let max = curve
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((curve, max))
}

/// Pooled standard deviation over final-window returns per seed:
/// population std per seed with Bessel's correction, within-seed variance as
/// the mean of corrected variances, across-seed variance as the unbiased
/// variance of seed means, total as the root of their sum.
pub fn pooled_std(per_seed: &[Vec<f64>]) -> Result<(f64, f64, f64)> {
    let s = per_seed.len();
    if s < 2 {
        return Err(Error::Invalid {
            what: "pooled std",
            why: "need at least 2 seeds".into(),
        });
    }
    let n = per_seed[0].len();
    if n < 2 || per_seed.iter().any(|r| r.len() != n) {
        return Err(Error::Invalid {
            what: "pooled std",
            why: "need at least 2 episodes per seed, constant across seeds".into(),
        });
    }
    let nf = n as f64;
    let mut within_acc = 0.0;
    let mut means = Vec::with_capacity(s);
    for returns in per_seed {
        let mu = returns.iter().sum::<f64>() / nf;
        let pop_var = returns.iter().map(|r| (r - mu) * (r - mu)).sum::<f64>() / nf;
        // corrected std sigma * sqrt(n / (n - 1)); accumulate its square
        within_acc += pop_var * nf / (nf - 1.0);
        means.push(mu);
    }
    let within_var = within_acc / s as f64;
    let grand = means.iter().sum::<f64>() / s as f64;
    let across_var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (s as f64 - 1.0);
    Ok((within_var.sqrt(), across_var.sqrt(), (within_var + across_var).sqrt()))
}

/// One exported latent row.
#[derive(Debug, Clone, Serialize)]
pub struct LatentRow {
    pub id: usize,
    pub category: String,
    pub z: Vec<f64>,
    pub cos_to_zp: f64,
    pub cos_to_zn: f64,
    pub true_return: Option<f64>,
}

/// Latent table for external embedding/visualization: one row per set
/// member plus reference rows for the two group latents.
#[derive(Debug, Clone, Serialize)]
pub struct LatentTable {
    pub rows: Vec<LatentRow>,
    pub refs: Vec<LatentRow>,
}

impl LatentTable {
    /// Delimited text with one z column per latent dimension.
    pub fn to_csv(&self) -> String {
        let z_dim = self
            .rows
            .first()
            .or(self.refs.first())
            .map(|r| r.z.len())
            .unwrap_or(0);
        let mut out = String::from("id,category");
        for i in 0..z_dim {
            out.push_str(&format!(",z{i}"));
        }
        out.push_str(",cos_to_zp,cos_to_zn,true_return\n");
        for row in self.rows.iter().chain(self.refs.iter()) {
            out.push_str(&format!("{},{}", row.id, row.category));
            for v in &row.z {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{},{}", row.cos_to_zp, row.cos_to_zn));
            match row.true_return {
                Some(r) => out.push_str(&format!(",{r}\n")),
                None => out.push_str(",\n"),
            }
        }
        out
    }
}

/// Export per-trajectory latents with similarities to both group latents.
/// Row count equals `|preferred| + |non_preferred|` of the dataset's sets.
pub fn export_latents(
    enc: &SetEncoder,
    zp: &GroupLatent,
    zn: &GroupLatent,
    dataset: &PreferenceDataset,
) -> Result<LatentTable> {
    let sets = build_sets(dataset)?;
    let mut rows = Vec::new();
    let mut id = 0usize;
    for (category, trajs) in [
        (Category::Preferred, &sets.preferred),
        (Category::NonPreferred, &sets.non_preferred),
    ] {
        let latents = crate::par::map_slice(trajs, |t| enc.trajectory_latent(t));
        for (traj, z) in trajs.iter().zip(latents) {
            let z = z?;
            rows.push(LatentRow {
                id,
                category: category.as_str().to_string(),
                cos_to_zp: cosine(z.view(), zp.z_star.view()),
                cos_to_zn: cosine(z.view(), zn.z_star.view()),
                z: z.to_vec(),
                true_return: traj.total_return(),
            });
            id += 1;
        }
    }
    let refs = vec![
        LatentRow {
            id,
            category: "zstar_p".into(),
            cos_to_zp: 1.0,
            cos_to_zn: cosine(zp.z_star.view(), zn.z_star.view()),
            z: zp.z_star.to_vec(),
            true_return: None,
        },
        LatentRow {
            id: id + 1,
            category: "zstar_n".into(),
            cos_to_zp: cosine(zn.z_star.view(), zp.z_star.view()),
            cos_to_zn: 1.0,
            z: zn.z_star.to_vec(),
            true_return: None,
        },
    ];
    Ok(LatentTable { rows, refs })
}
