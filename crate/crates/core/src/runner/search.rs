//! Grid and random hyperparameter search over `name=[v1,v2,...]` spaces.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::index;
use rand::{Rng as _, RngCore};

use super::config::{canonical_key, check_value, Config};
use super::experiment::{run_experiment, RunOptions};
use super::{Result, RunError};
use crate::eval::Report;
use crate::rng::{self, Purpose};

/// Candidate values per parameter, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchSpace {
    pub params: Vec<(String, Vec<String>)>,
}

impl SearchSpace {
    /// Number of combinations, saturating.
    pub fn size(&self) -> usize {
        self.params
            .iter()
            .fold(1usize, |acc, (_, v)| acc.saturating_mul(v.len()))
    }

    /// Mixed-radix decoding of a combination index; the last parameter
    /// varies fastest.
    pub fn combination(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.params.len()];
        for (slot, (_, values)) in out.iter_mut().zip(&self.params).rev() {
            *slot = idx % values.len();
            idx /= values.len();
        }
        out
    }

    pub fn assignment(&self, choice: &[usize]) -> Vec<(String, String)> {
        self.params
            .iter()
            .zip(choice)
            .map(|((k, v), &c)| (k.clone(), v[c].clone()))
            .collect()
    }
}

/// Parses range lines such as `lr=[0.01,0.1]`. Parameter names may be
/// config keys or their aliases; values are checked against the key type.
pub fn parse_range_text(text: &str) -> Result<SearchSpace> {
    let mut params: Vec<(String, Vec<String>)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: &str| RunError::RangeSyntax {
            line: n + 1,
            reason: reason.to_string(),
        };
        let (name, list) = line.split_once('=').ok_or_else(|| err("expected `name=[v1,v2,...]`"))?;
        let list = list
            .trim()
            .strip_prefix('[')
            .and_then(|l| l.strip_suffix(']'))
            .ok_or_else(|| err("values must be enclosed in [ ]"))?;
        let key = canonical_key(name)?;
        if params.iter().any(|(k, _)| k == key) {
            return Err(err(&format!("duplicate parameter `{key}`")));
        }
        let values: Vec<String> = list.split(',').map(|v| v.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(err("empty value"));
        }
        for v in &values {
            check_value(key, v)?;
        }
        params.push((key.to_string(), values));
    }
    if params.is_empty() {
        return Err(RunError::EmptySpace);
    }
    Ok(SearchSpace { params })
}

pub fn parse_range_file(path: &Path) -> Result<SearchSpace> {
    let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_range_text(&text)
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub index: usize,
    pub assignment: Vec<(String, String)>,
    pub seed: u64,
    pub best_valid: f64,
    pub test: Report,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchOptions {
    /// Run trials on worker threads. Each trial then uses a seed derived
    /// from the config seed and its trial index, so results do not depend
    /// on scheduling.
    pub parallel: bool,
}

/// Combination indices of `n_trials` seeded draws; the whole space, in
/// order, when it has at most `n_trials` points.
pub fn draw_combinations(space: &SearchSpace, n_trials: usize, seed: u64) -> Vec<usize> {
    let total = space.size();
    if n_trials >= total {
        return (0..total).collect();
    }
    let mut rng = rng::stream(seed, Purpose::Search, 0);
    if total <= 1 << 24 {
        return index::sample(&mut rng, total, n_trials).into_vec();
    }
    // too large to deduplicate: independent uniform draws per parameter
    (0..n_trials)
        .map(|_| {
            space.params.iter().fold(0usize, |acc, (_, v)| {
                acc.wrapping_mul(v.len()) + rng.random_range(0..v.len())
            })
        })
        .collect()
}

fn run_trials(cfg: &Config, space: &SearchSpace, combos: &[usize], opts: &SearchOptions) -> Result<Vec<TrialResult>> {
    let out_root = cfg.path("output.dir").unwrap_or_else(|| "output".into());
    let run_one = |index: usize, combo: usize| -> Result<TrialResult> {
        let assignment = space.assignment(&space.combination(combo));
        let seed = if opts.parallel {
            rng::stream(cfg.seed(), Purpose::Search, 1 + index as u64).next_u64() >> 1
        } else {
            cfg.seed()
        };
        let dir = out_root.join(format!("trial_{index:03}"));
        let overrides = assignment.iter().cloned().chain([
            ("output.dir".to_string(), dir.to_string_lossy().into_owned()),
            ("seed".to_string(), seed.to_string()),
        ]);
        let trial_cfg = cfg.with_overrides(overrides)?;
        let started = Instant::now();
        let outcome = run_experiment(&trial_cfg, &RunOptions::default())?;
        Ok(TrialResult {
            index,
            assignment,
            seed,
            best_valid: outcome.best_valid.unwrap_or(0.0),
            test: outcome.report.expect("uninterrupted runs report"),
            wall_time: started.elapsed().as_secs_f64(),
        })
    };
    let mut results = if opts.parallel {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<TrialResult>>>> = Mutex::new((0..combos.len()).map(|_| None).collect());
        let workers = std::thread::available_parallelism()
            .map_or(1, |n| n.get())
            .min(combos.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= combos.len() {
                        break;
                    }
                    let r = run_one(i, combos[i]);
                    slots.lock().expect("no poisoned lock")[i] = Some(r);
                });
            }
        });
        slots
            .into_inner()
            .expect("no poisoned lock")
            .into_iter()
            .map(|r| r.expect("every trial ran"))
            .collect::<Result<Vec<_>>>()?
    } else {
        combos
            .iter()
            .enumerate()
            .map(|(i, &c)| run_one(i, c))
            .collect::<Result<Vec<_>>>()?
    };
    // best validation metric first; ties keep trial order
    results.sort_by(|a, b| b.best_valid.total_cmp(&a.best_valid).then(a.index.cmp(&b.index)));
    write_summary(&out_root, &results)?;
    Ok(results)
}

fn write_summary(dir: &Path, results: &[TrialResult]) -> Result<()> {
    let mut text = String::from("rank\ttrial\tseed\tbest_valid\tassignment\n");
    for (rank, t) in results.iter().enumerate() {
        let assignment: Vec<String> = t.assignment.iter().map(|(k, v)| format!("{k}={v}")).collect();
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            rank + 1,
            t.index,
            t.seed,
            t.best_valid,
            assignment.join(" ")
        ));
    }
    std::fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let path = dir.join("search.tsv");
    std::fs::write(&path, text).map_err(|source| RunError::Io { path, source })
}

/// Runs every combination of the space; results are ranked by validation
/// metric, best first.
pub fn grid_search(cfg: &Config, space: &SearchSpace, opts: &SearchOptions) -> Result<Vec<TrialResult>> {
    if space.params.is_empty() {
        return Err(RunError::EmptySpace);
    }
    let combos: Vec<usize> = (0..space.size()).collect();
    run_trials(cfg, space, &combos, opts)
}

/// Runs `n_trials` seeded draws from the space (see
/// [`draw_combinations`]), ranked like [`grid_search`].
pub fn random_search(
    cfg: &Config,
    space: &SearchSpace,
    n_trials: usize,
    seed: u64,
    opts: &SearchOptions,
) -> Result<Vec<TrialResult>> {
    if space.params.is_empty() {
        return Err(RunError::EmptySpace);
    }
    let combos = draw_combinations(space, n_trials.max(1), seed);
    run_trials(cfg, space, &combos, opts)
}
