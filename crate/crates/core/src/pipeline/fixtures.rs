//! Synthetic inputs in the external file formats.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::rng::{rng, stream};

/// Users are node type 0, items type 1; relation 0 is user→item and
/// relation 1 its reverse.
pub const SCHEMA_TSV: &str = "# relation\tsrc_type\tdst_type\n0\t0\t1\n1\t1\t0\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FixtureSpec {
    PlantedBipartite {
        communities: usize,
        users: usize,
        items: usize,
        p_in: f64,
        p_out: f64,
        feature_dim: usize,
    },
    SwissRoll {
        points: usize,
        noise: f64,
    },
    DriftStream {
        communities: usize,
        users: usize,
        items: usize,
        p_in: f64,
        p_out: f64,
        feature_dim: usize,
        batches: usize,
        new_users_per_batch: usize,
        /// Existing users per batch that start clicking the next community.
        drifting_users_per_batch: usize,
    },
}

impl FixtureSpec {
    pub fn planted_default() -> Self {
        FixtureSpec::PlantedBipartite {
            communities: 4,
            users: 400,
            items: 200,
            p_in: 0.2,
            p_out: 0.002,
            feature_dim: 8,
        }
    }

    pub fn swiss_roll_default() -> Self {
        FixtureSpec::SwissRoll { points: 200, noise: 0.0 }
    }

    pub fn drift_default() -> Self {
        FixtureSpec::DriftStream {
            communities: 4,
            users: 400,
            items: 200,
            p_in: 0.2,
            p_out: 0.002,
            feature_dim: 8,
            batches: 4,
            new_users_per_batch: 40,
            drifting_users_per_batch: 20,
        }
    }

    fn check(&self) -> Result<()> {
        let p_ok = |p: f64| (0.0..=1.0).contains(&p);
        match *self {
            FixtureSpec::PlantedBipartite {
                communities,
                users,
                items,
                p_in,
                p_out,
                ..
            }
            | FixtureSpec::DriftStream {
                communities,
                users,
                items,
                p_in,
                p_out,
                ..
            } => {
                if communities == 0 || users < communities || items < communities || !p_ok(p_in) || !p_ok(p_out) {
                    return Err(Error::Config("fixture needs ≥ 1 community, ≥ 1 user and item per community, and probabilities in [0, 1]".into()));
                }
            }
            FixtureSpec::SwissRoll { points, noise } => {
                if points == 0 || !(noise >= 0.0) {
                    return Err(Error::Config("swiss roll needs points ≥ 1 and noise ≥ 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// What was written, relative to the output directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FixtureFiles {
    pub edges: Option<PathBuf>,
    pub features: PathBuf,
    pub schema: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// `(edges, features)` per increment batch.
    pub increments: Vec<(PathBuf, PathBuf)>,
    /// Held-out test interactions after each batch, cumulative.
    pub increment_tests: Vec<PathBuf>,
    pub n_edges: usize,
}

fn edge_line(out: &mut String, u: usize, i: usize, ts: i64) {
    let _ = writeln!(out, "0\t{u}\t1\t{i}\t0\t{ts}");
    let _ = writeln!(out, "1\t{i}\t0\t{u}\t1\t{ts}");
}

fn feature_line(out: &mut String, t: usize, id: usize, vals: &[f64]) {
    let v: Vec<String> = vals.iter().map(|x| format!("{x}")).collect();
    let _ = writeln!(out, "{t}\t{id}\t{}", v.join(","));
}

/// Noise features with a faint community signal in the first coordinate.
fn features(r: &mut impl Rng, community: usize, dim: usize) -> Vec<f64> {
    let n = Normal::new(0.0, 1.0).expect("unit normal");
    (0..dim)
        .map(|j| if j == 0 { community as f64 * 0.1 + 0.5 * n.sample(r) } else { n.sample(r) })
        .collect()
}

fn write(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    atomic_write(&dir.join(name), body.as_bytes())?;
    Ok(PathBuf::from(name))
}

/// Items of community `c` are the ids `i` with `i % communities == c`.
fn community_items(items: usize, communities: usize, c: usize) -> Vec<usize> {
    (c..items).step_by(communities).collect()
}

/// Edges of one user; at least one in-community edge is forced so no user is
/// isolated.
fn user_edges(r: &mut impl Rng, items: usize, communities: usize, c: usize, p_in: f64, p_out: f64) -> Vec<usize> {
    let mut out: Vec<usize> = (0..items)
        .filter(|&i| r.random::<f64>() < if i % communities == c { p_in } else { p_out })
        .collect();
    if !out.iter().any(|&i| i % communities == c) {
        let own = community_items(items, communities, c);
        out.push(own[r.random_range(0..own.len())]);
        out.sort_unstable();
    }
    out
}

/// Writes the fixture into `dir` (created if needed). Deterministic in `seed`.
pub fn gen_fixture(spec: &FixtureSpec, dir: &Path, seed: u64) -> Result<FixtureFiles> {
    spec.check()?;
    let mut r = rng(seed, stream::FIXTURE);
    match *spec {
        FixtureSpec::SwissRoll { points, noise } => {
            let n = Normal::new(0.0, 1.0).expect("unit normal");
            let mut f = String::new();
            for p in 0..points {
                let t = 1.5 * std::f64::consts::PI * (1.0 + 2.0 * r.random::<f64>());
                let h = 21.0 * r.random::<f64>();
                let v = [t * t.cos() + noise * n.sample(&mut r), h + noise * n.sample(&mut r), t * t.sin() + noise * n.sample(&mut r)];
                feature_line(&mut f, 0, p, &v);
            }
            Ok(FixtureFiles {
                features: write(dir, "features.tsv", &f)?,
                ..FixtureFiles::default()
            })
        }
        FixtureSpec::PlantedBipartite {
            communities,
            users,
            items,
            p_in,
            p_out,
            feature_dim,
        } => {
            let (mut e, mut f, mut test) = (String::new(), String::new(), String::new());
            let mut n_edges = 0;
            for u in 0..users {
                let c = u % communities;
                let mine = user_edges(&mut r, items, communities, c, p_in, p_out);
                for &i in &mine {
                    edge_line(&mut e, u, i, r.random_range(0..1000));
                }
                n_edges += mine.len();
                let pick = mine[r.random_range(0..mine.len())];
                let _ = writeln!(test, "0\t{u}\t1\t{pick}\t0\t1000");
            }
            for u in 0..users {
                feature_line(&mut f, 0, u, &features(&mut r, u % communities, feature_dim));
            }
            for i in 0..items {
                feature_line(&mut f, 1, i, &features(&mut r, i % communities, feature_dim));
            }
            Ok(FixtureFiles {
                edges: Some(write(dir, "edges.tsv", &e)?),
                features: write(dir, "features.tsv", &f)?,
                schema: Some(write(dir, "schema.tsv", SCHEMA_TSV)?),
                test: Some(write(dir, "test.tsv", &test)?),
                n_edges,
                ..FixtureFiles::default()
            })
        }
        FixtureSpec::DriftStream {
            communities,
            users,
            items,
            p_in,
            p_out,
            feature_dim,
            batches,
            new_users_per_batch,
            drifting_users_per_batch,
        } => {
            let (mut e, mut f, mut test) = (String::new(), String::new(), String::new());
            let mut n_edges = 0;
            let mut owned: Vec<Vec<usize>> = Vec::with_capacity(users);
            for u in 0..users {
                let c = u % communities;
                let mine = user_edges(&mut r, items, communities, c, p_in, p_out);
                for &i in &mine {
                    edge_line(&mut e, u, i, r.random_range(0..1000));
                }
                n_edges += mine.len();
                let pick = mine[r.random_range(0..mine.len())];
                let _ = writeln!(test, "0\t{u}\t1\t{pick}\t0\t1000");
                owned.push(mine);
            }
            for u in 0..users {
                feature_line(&mut f, 0, u, &features(&mut r, u % communities, feature_dim));
            }
            for i in 0..items {
                feature_line(&mut f, 1, i, &features(&mut r, i % communities, feature_dim));
            }
            let mut out = FixtureFiles {
                edges: Some(write(dir, "edges.tsv", &e)?),
                features: write(dir, "features.tsv", &f)?,
                schema: Some(write(dir, "schema.tsv", SCHEMA_TSV)?),
                test: Some(write(dir, "test.tsv", &test)?),
                n_edges,
                ..FixtureFiles::default()
            };
            let mut held = String::new();
            let mut next_user = users;
            let mut drift_cursor = 0;
            for b in 0..batches {
                let ts = 1000 * (b as i64 + 2);
                let (mut be, mut bf) = (String::new(), String::new());
                for _ in 0..new_users_per_batch {
                    let u = next_user;
                    next_user += 1;
                    let c = u % communities;
                    let mut mine = user_edges(&mut r, items, communities, c, p_in, p_out);
                    // keep one in-community click back as the test target
                    let own: Vec<usize> = mine.iter().copied().filter(|i| i % communities == c).collect();
                    if own.len() >= 2 {
                        let hold = own[r.random_range(0..own.len())];
                        mine.retain(|&i| i != hold);
                        let _ = writeln!(held, "0\t{u}\t1\t{hold}\t0\t{ts}");
                    }
                    for &i in &mine {
                        edge_line(&mut be, u, i, ts);
                    }
                    feature_line(&mut bf, 0, u, &features(&mut r, c, feature_dim));
                }
                for _ in 0..drifting_users_per_batch.min(users) {
                    let u = drift_cursor % users;
                    drift_cursor += 1;
                    let c = (u % communities + 1 + b) % communities;
                    let pool: Vec<usize> = community_items(items, communities, c).into_iter().filter(|i| !owned[u].contains(i)).collect();
                    if pool.len() < 4 {
                        continue;
                    }
                    let picks = rand::seq::index::sample(&mut r, pool.len(), 4).into_vec();
                    for &p in &picks[..3] {
                        edge_line(&mut be, u, pool[p], ts);
                        owned[u].push(pool[p]);
                    }
                    let _ = writeln!(held, "0\t{u}\t1\t{}\t0\t{ts}", pool[picks[3]]);
                    owned[u].push(pool[picks[3]]);
                }
                out.increments.push((write(dir, &format!("increment_{b}.tsv"), &be)?, write(dir, &format!("increment_{b}_features.tsv"), &bf)?));
                out.increment_tests.push(write(dir, &format!("test_{b}.tsv"), &held)?);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{load_graph_files, read_edge_records};

    #[test]
    fn planted_counts_within_binomial_band() {
        let dir = tempfile::tempdir().unwrap();
        let files = gen_fixture(&FixtureSpec::planted_default(), dir.path(), 11).unwrap();
        // per user: 50 in-community at 0.2, 150 outside at 0.002
        let mean = 400.0 * (50.0 * 0.2 + 150.0 * 0.002);
        let var: f64 = 400.0 * (50.0 * 0.2 * 0.8 + 150.0 * 0.002 * 0.998);
        let n = files.n_edges as f64;
        assert!((n - mean).abs() <= 4.0 * var.sqrt(), "{n} vs {mean}");
        let lines = std::fs::read_to_string(dir.path().join("edges.tsv")).unwrap().lines().count();
        assert_eq!(lines, 2 * files.n_edges);
        let g = load_graph_files(&dir.path().join("edges.tsv"), Some(&dir.path().join("features.tsv")), &dir.path().join("schema.tsv")).unwrap();
        assert_eq!(g.type_counts(), vec![400, 200]);
    }

    #[test]
    fn swiss_roll_has_no_edges() {
        let dir = tempfile::tempdir().unwrap();
        let files = gen_fixture(&FixtureSpec::swiss_roll_default(), dir.path(), 1).unwrap();
        assert!(files.edges.is_none());
        let text = std::fs::read_to_string(dir.path().join(&files.features)).unwrap();
        assert_eq!(text.lines().count(), 200);
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        gen_fixture(&FixtureSpec::drift_default(), a.path(), 5).unwrap();
        let files = gen_fixture(&FixtureSpec::drift_default(), b.path(), 5).unwrap();
        for name in ["edges.tsv", "features.tsv", "test.tsv", "increment_3.tsv", "test_3.tsv"] {
            assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
        }
        assert_eq!(files.increments.len(), 4);
        let held = std::fs::read_to_string(b.path().join("test_3.tsv")).unwrap();
        let recs = read_edge_records(held.as_bytes(), "t").unwrap();
        assert!(recs.len() > 100);
    }
}
