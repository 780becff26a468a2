//! Planted-structure dataset generator.
//!
//! Users and items fall into taste clusters. Users mostly interact with items
//! of their own cluster. "Relevant" KG relations point items at tails owned
//! by their cluster, so their co-relations connect same-cluster items;
//! "noise" relations point at tails shared across clusters at random.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    pub relevant_relations: usize,
    pub noise_relations: usize,
    /// Tails per cluster for each relevant relation.
    pub relevant_tails: usize,
    /// Global tails for each noise relation.
    pub noise_tails: usize,
    pub interactions_per_user: usize,
    /// Probability an interaction stays inside the user's cluster.
    pub in_cluster: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 240,
            items: 360,
            clusters: 6,
            relevant_relations: 4,
            noise_relations: 4,
            relevant_tails: 6,
            noise_tails: 18,
            interactions_per_user: 8,
            in_cluster: 0.9,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub(crate) fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let Some(field) = key.strip_prefix("synth_") else {
            return Ok(false);
        };
        let bad = || Error::Config(format!("invalid value `{value}` for `{key}`"));
        let uint = || value.parse::<usize>().map_err(|_| bad());
        match field {
            "users" => self.users = uint()?,
            "items" => self.items = uint()?,
            "clusters" => self.clusters = uint()?,
            "relevant_relations" => self.relevant_relations = uint()?,
            "noise_relations" => self.noise_relations = uint()?,
            "relevant_tails" => self.relevant_tails = uint()?,
            "noise_tails" => self.noise_tails = uint()?,
            "interactions_per_user" => self.interactions_per_user = uint()?,
            "in_cluster" => self.in_cluster = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub(crate) fn write_kv(&self, out: &mut String) {
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            writeln!(out, "synth_{k} = {v}").expect("write to String");
        };
        kv("users", &self.users);
        kv("items", &self.items);
        kv("clusters", &self.clusters);
        kv("relevant_relations", &self.relevant_relations);
        kv("noise_relations", &self.noise_relations);
        kv("relevant_tails", &self.relevant_tails);
        kv("noise_tails", &self.noise_tails);
        kv("interactions_per_user", &self.interactions_per_user);
        kv("in_cluster", &self.in_cluster);
        kv("seed", &self.seed);
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.items < self.clusters || self.users == 0 {
            return Err(Error::Config("synthetic data needs users ≥ 1 and items ≥ clusters ≥ 1".into()));
        }
        if self.interactions_per_user == 0 || self.interactions_per_user >= self.items / self.clusters {
            return Err(Error::Config(
                "synth_interactions_per_user must be in [1, items/clusters)".into(),
            ));
        }
        if self.relevant_tails == 0 || self.noise_tails == 0 {
            return Err(Error::Config("tail counts must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.in_cluster) {
            return Err(Error::Config("synth_in_cluster must be a probability".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticDataset {
    pub triples: Vec<(String, String, String)>,
    pub interactions: Vec<(String, String)>,
    pub item_cluster: Vec<usize>,
    pub user_cluster: Vec<usize>,
}

impl SyntheticDataset {
    pub fn triples_tsv(&self) -> String {
        self.triples.iter().map(|(h, r, t)| format!("{h}\t{r}\t{t}\n")).collect()
    }

    pub fn interactions_tsv(&self) -> String {
        self.interactions.iter().map(|(u, i)| format!("{u}\t{i}\n")).collect()
    }

    /// Writes `kg.tsv` and `interactions.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("kg.tsv", self.triples_tsv()), ("interactions.tsv", self.interactions_tsv())] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

pub fn item_name(i: usize) -> String {
    format!("i{i}")
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, &[0x5e7d]);
    let item_cluster: Vec<usize> = (0..cfg.items).map(|i| i % cfg.clusters).collect();
    let user_cluster: Vec<usize> = (0..cfg.users).map(|u| u % cfg.clusters).collect();
    let members: Vec<Vec<usize>> = (0..cfg.clusters)
        .map(|c| (0..cfg.items).filter(|&i| item_cluster[i] == c).collect())
        .collect();

    let mut interactions = Vec::new();
    for (u, &c) in user_cluster.iter().enumerate() {
        let mut chosen = Vec::with_capacity(cfg.interactions_per_user);
        while chosen.len() < cfg.interactions_per_user {
            let item = if rng.gen_bool(cfg.in_cluster) {
                *members[c].choose(&mut rng).expect("non-empty cluster")
            } else {
                rng.gen_range(0..cfg.items)
            };
            if !chosen.contains(&item) {
                chosen.push(item);
            }
        }
        interactions.extend(chosen.into_iter().map(|i| (format!("u{u}"), item_name(i))));
    }

    // Shuffled so relation ids carry no hint of which relations are relevant.
    let mut relations: Vec<(usize, bool)> = (0..cfg.relevant_relations)
        .map(|r| (r, true))
        .chain((0..cfg.noise_relations).map(|r| (r, false)))
        .collect();
    relations.shuffle(&mut rng);
    let mut triples = Vec::new();
    for i in 0..cfg.items {
        let c = item_cluster[i];
        for &(r, relevant) in &relations {
            if relevant {
                let t = rng.gen_range(0..cfg.relevant_tails);
                triples.push((item_name(i), format!("rel{r}"), format!("rel{r}_c{c}_t{t}")));
            } else {
                let t = rng.gen_range(0..cfg.noise_tails);
                triples.push((item_name(i), format!("noise{r}"), format!("noise{r}_t{t}")));
            }
        }
    }

    Ok(SyntheticDataset {
        triples,
        interactions,
        item_cluster,
        user_cluster,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_shaped() {
        let cfg = SyntheticConfig::default();
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        assert_eq!(a.interactions.len(), cfg.users * cfg.interactions_per_user);
        assert_eq!(a.triples.len(), cfg.items * (cfg.relevant_relations + cfg.noise_relations));
    }

    #[test]
    fn relevant_tails_stay_in_cluster() {
        let a = generate(&SyntheticConfig::default()).unwrap();
        for (h, r, t) in &a.triples {
            if r.starts_with("rel") {
                let i: usize = h[1..].parse().unwrap();
                assert!(t.contains(&format!("_c{}_", a.item_cluster[i])));
            }
        }
    }
}
