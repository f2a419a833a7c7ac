//! Locally optimal hyperparameter search on a discrete grid.
//!
//! Starting from the best evaluated point, every in-grid neighbor (one step
//! along one dimension) is evaluated; the search moves when some neighbor is
//! strictly better and stops, certified, when none is. Ties keep the current
//! point. Failed evaluations count as `+inf`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arena;

pub type Coord = Vec<usize>;
pub type Params = Vec<(String, f64)>;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("no seed coordinates")]
    NoSeeds,
    #[error("coordinate {0:?} is outside the grid")]
    OutOfGrid(Coord),
    #[error("checkpoint was written for a different grid")]
    GridMismatch,
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dim {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: Vec<Dim>,
    /// Optional inclusive `(min, max)` index bounds per dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<(usize, usize)>>,
}

impl Grid {
    pub fn new(dims: Vec<Dim>) -> Result<Self, SearchError> {
        let g = Self { dims, bounds: None };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.dims.is_empty() {
            return Err(SearchError::InvalidGrid("grid has no dimensions".into()));
        }
        for (i, d) in self.dims.iter().enumerate() {
            if d.values.is_empty() {
                return Err(SearchError::InvalidGrid(format!("dimension {} is empty", d.name)));
            }
            if d.values.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(SearchError::InvalidGrid(format!(
                    "values of {} are not strictly increasing",
                    d.name
                )));
            }
            if self.dims[..i].iter().any(|o| o.name == d.name) {
                return Err(SearchError::InvalidGrid(format!("duplicate dimension {}", d.name)));
            }
        }
        if let Some(b) = &self.bounds {
            if b.len() != self.dims.len() {
                return Err(SearchError::InvalidGrid("bounds do not match dimensions".into()));
            }
            for (d, &(lo, hi)) in self.dims.iter().zip(b) {
                if lo > hi || hi >= d.values.len() {
                    return Err(SearchError::InvalidGrid(format!("bad bounds for {}", d.name)));
                }
            }
        }
        Ok(())
    }

    /// Learning rate, weight decay, real epochs and mixing fraction.
    pub fn paper() -> Self {
        let dim = |name: &str, values: &[f64]| Dim {
            name: name.into(),
            values: values.to_vec(),
        };
        Self {
            dims: vec![
                dim("lr", &[0.001, 0.003, 0.01]),
                dim("weight_decay", &[0.1, 0.4, 0.8, 1.6]),
                dim("epochs", &[1.0, 2.0, 4.0, 8.0, 16.0, 32.0]),
                dim("mixing", &[0.5, 0.75, 0.9]),
            ],
            bounds: None,
        }
    }

    pub fn bound(&self, d: usize) -> (usize, usize) {
        self.bounds
            .as_ref()
            .map_or((0, self.dims[d].values.len() - 1), |b| b[d])
    }

    pub fn contains(&self, coord: &[usize]) -> bool {
        coord.len() == self.dims.len()
            && coord.iter().enumerate().all(|(d, &i)| {
                let (lo, hi) = self.bound(d);
                lo <= i && i <= hi
            })
    }

    pub fn size(&self) -> usize {
        (0..self.dims.len())
            .map(|d| {
                let (lo, hi) = self.bound(d);
                hi - lo + 1
            })
            .product()
    }

    pub fn params(&self, coord: &[usize]) -> Params {
        self.dims
            .iter()
            .zip(coord)
            .map(|(d, &i)| (d.name.clone(), d.values[i]))
            .collect()
    }

    /// Coordinate of a point given by value; every dimension must be named.
    pub fn coord_of(&self, point: &[(String, f64)]) -> Option<Coord> {
        self.dims
            .iter()
            .map(|d| {
                let v = point.iter().find(|(n, _)| n == &d.name)?.1;
                d.values.iter().position(|&x| (x - v).abs() <= 1e-12 * x.abs().max(1.0))
            })
            .collect()
    }

    /// Every in-bounds coordinate, last dimension fastest.
    pub fn all_coords(&self) -> Vec<Coord> {
        let mut out = vec![Vec::new()];
        for d in 0..self.dims.len() {
            let (lo, hi) = self.bound(d);
            out = out
                .into_iter()
                .flat_map(|c: Coord| {
                    (lo..=hi).map(move |i| {
                        let mut n = c.clone();
                        n.push(i);
                        n
                    })
                })
                .collect();
        }
        out
    }
}

/// One-step moves in dimension order, `-1` before `+1`, clipped to bounds.
pub fn neighbors(coord: &[usize], grid: &Grid) -> Vec<Coord> {
    let mut out = Vec::with_capacity(2 * coord.len());
    for d in 0..coord.len() {
        let (lo, hi) = grid.bound(d);
        if coord[d] > lo {
            let mut c = coord.to_vec();
            c[d] -= 1;
            out.push(c);
        }
        if coord[d] < hi {
            let mut c = coord.to_vec();
            c[d] += 1;
            out.push(c);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Searching,
    Certified,
    BudgetExhausted,
    /// Every evaluation failed, so there is nothing to search from.
    AllFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub coord: Coord,
    pub params: Params,
    /// `None` when the evaluation failed.
    pub loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn effective_loss(&self) -> f64 {
        self.loss.unwrap_or(f64::INFINITY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub grid: Grid,
    pub budget: usize,
    /// In evaluation order.
    pub evaluations: Vec<EvalRecord>,
    pub frontier: Option<Coord>,
    pub frontier_loss: Option<f64>,
    pub status: Status,
    pub boundary_clipped: Vec<String>,
    /// Neighbors that matched the frontier's loss when it was certified.
    pub ties: Vec<Coord>,
    /// Point whose neighbors are being evaluated, so a resumed search
    /// finishes that batch before picking a new frontier.
    #[serde(default)]
    pub expanding: Option<Coord>,
    #[serde(skip)]
    index: HashMap<Coord, usize>,
}

impl SearchState {
    pub fn new(grid: Grid, budget: usize) -> Self {
        Self {
            grid,
            budget,
            evaluations: Vec::new(),
            frontier: None,
            frontier_loss: None,
            status: Status::Searching,
            boundary_clipped: Vec::new(),
            ties: Vec::new(),
            expanding: None,
            index: HashMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, SearchError> {
        let mut s: Self = serde_json::from_slice(&fs::read(path)?)?;
        s.reindex();
        Ok(s)
    }

    fn reindex(&mut self) {
        self.index = self
            .evaluations
            .iter()
            .enumerate()
            .map(|(i, e)| (e.coord.clone(), i))
            .collect();
    }

    pub fn save(&self, path: &Path) -> Result<(), SearchError> {
        arena::write_atomic(path, &serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn get(&self, coord: &[usize]) -> Option<&EvalRecord> {
        self.index.get(coord).map(|&i| &self.evaluations[i])
    }

    pub fn loss(&self, coord: &[usize]) -> Option<f64> {
        self.get(coord).map(EvalRecord::effective_loss)
    }

    fn push(&mut self, record: EvalRecord) {
        self.index.insert(record.coord.clone(), self.evaluations.len());
        self.evaluations.push(record);
    }

    /// Lowest finite loss; the earliest evaluation wins ties.
    pub fn best(&self) -> Option<&EvalRecord> {
        self.evaluations
            .iter()
            .filter(|e| e.loss.is_some_and(f64::is_finite))
            .fold(None, |acc: Option<&EvalRecord>, e| match acc {
                Some(a) if a.effective_loss() <= e.effective_loss() => Some(a),
                _ => Some(e),
            })
    }

    /// True when every in-grid neighbor of the frontier is evaluated and no
    /// better than it.
    pub fn verify_certificate(&self) -> bool {
        let (Some(f), Some(fl)) = (&self.frontier, self.frontier_loss) else {
            return false;
        };
        fl.is_finite()
            && neighbors(f, &self.grid)
                .iter()
                .all(|n| self.loss(n).is_some_and(|l| l >= fl))
    }
}

pub trait Evaluator: Send + Sync {
    fn evaluate(&self, params: &[(String, f64)]) -> Result<f64, String>;
}

impl<F> Evaluator for F
where
    F: Fn(&[(String, f64)]) -> Result<f64, String> + Send + Sync,
{
    fn evaluate(&self, params: &[(String, f64)]) -> Result<f64, String> {
        self(params)
    }
}

#[derive(Debug, Clone, Default)]
pub struct SearchOptions {
    /// Concurrent evaluations per frontier; 0 means one.
    pub parallelism: usize,
    /// Where to write state after every evaluation.
    pub checkpoint: Option<PathBuf>,
}

/// Runs the search, resuming from `resume` when given.
pub fn local_search(
    grid: &Grid,
    seeds: &[Coord],
    evaluator: &dyn Evaluator,
    budget: usize,
    options: &SearchOptions,
    resume: Option<SearchState>,
) -> Result<SearchState, SearchError> {
    grid.validate()?;
    if seeds.is_empty() {
        return Err(SearchError::NoSeeds);
    }
    if let Some(bad) = seeds.iter().find(|s| !grid.contains(s)) {
        return Err(SearchError::OutOfGrid(bad.clone()));
    }
    let mut state = match resume {
        Some(s) if &s.grid != grid => return Err(SearchError::GridMismatch),
        Some(mut s) => {
            s.reindex();
            s.budget = budget;
            s.status = Status::Searching;
            s
        }
        None => SearchState::new(grid.clone(), budget),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism.max(1))
        .build()
        .map_err(|e| SearchError::Pool(e.to_string()))?;

    let mut seed_list: Vec<Coord> = Vec::new();
    for s in seeds {
        if !seed_list.contains(s) {
            seed_list.push(s.clone());
        }
    }
    if !run_batch(&mut state, &seed_list, evaluator, &pool, options)? {
        return finish(state, Status::BudgetExhausted, options);
    }

    loop {
        let (frontier, frontier_loss) = match state.expanding.take() {
            Some(c) => {
                let l = state.loss(&c).unwrap_or(f64::INFINITY);
                (c, l)
            }
            None => match state.best() {
                Some(b) => (b.coord.clone(), b.effective_loss()),
                None => return finish(state, Status::AllFailed, options),
            },
        };
        state.frontier = Some(frontier.clone());
        state.frontier_loss = Some(frontier_loss);

        let pending: Vec<Coord> = neighbors(&frontier, grid)
            .into_iter()
            .filter(|n| state.get(n).is_none())
            .collect();
        if pending.is_empty() {
            state.ties = neighbors(&frontier, grid)
                .into_iter()
                .filter(|n| state.loss(n) == Some(frontier_loss))
                .collect();
            return finish(state, Status::Certified, options);
        }
        state.expanding = Some(frontier);
        if !run_batch(&mut state, &pending, evaluator, &pool, options)? {
            let best = state.best().map(|b| (b.coord.clone(), b.effective_loss()));
            if let Some((c, l)) = best {
                state.frontier = Some(c);
                state.frontier_loss = Some(l);
            }
            return finish(state, Status::BudgetExhausted, options);
        }
        state.expanding = None;
    }
}

/// Evaluates the unevaluated coordinates of `coords`. Returns `false` if the
/// budget ran out before all of them were done.
fn run_batch(
    state: &mut SearchState,
    coords: &[Coord],
    evaluator: &dyn Evaluator,
    pool: &rayon::ThreadPool,
    options: &SearchOptions,
) -> Result<bool, SearchError> {
    let todo: Vec<&Coord> = coords.iter().filter(|c| state.get(c).is_none()).collect();
    let room = state.budget.saturating_sub(state.evaluations.len());
    let take = todo.len().min(room);
    let grid = &state.grid;
    let results: Vec<EvalRecord> = pool.install(|| {
        todo[..take]
            .par_iter()
            .map(|c| {
                let params = grid.params(c);
                let (loss, error) = match evaluator.evaluate(&params) {
                    Ok(l) if l.is_nan() => (None, Some("evaluator returned NaN".to_string())),
                    Ok(l) => (Some(l), None),
                    Err(e) => (None, Some(e)),
                };
                if let Some(e) = &error {
                    log::warn!("evaluation failed at {params:?}: {e}");
                }
                EvalRecord {
                    coord: (*c).clone(),
                    params,
                    loss,
                    error,
                }
            })
            .collect()
    });
    for r in results {
        state.push(r);
        if let Some(p) = &options.checkpoint {
            state.save(p)?;
        }
    }
    Ok(take == todo.len())
}

fn finish(mut state: SearchState, status: Status, options: &SearchOptions) -> Result<SearchState, SearchError> {
    state.status = status;
    state.boundary_clipped = match &state.frontier {
        Some(f) => state
            .grid
            .dims
            .iter()
            .enumerate()
            .filter(|&(d, dim)| {
                let (lo, hi) = state.grid.bound(d);
                dim.values.len() > 1 && (f[d] == lo || f[d] == hi)
            })
            .map(|(_, dim)| dim.name.clone())
            .collect(),
        None => Vec::new(),
    };
    if let Some(p) = &options.checkpoint {
        state.save(p)?;
    }
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePlan {
    pub params: Params,
    /// Whether the doubled value is itself a grid value.
    pub on_grid: bool,
}

/// Hyperparameters for ensemble members: a certified point with its epoch
/// count doubled.
pub fn derive_ensemble_plan(grid: &Grid, coord: &[usize], epochs_dim: &str) -> Result<EnsemblePlan, SearchError> {
    if !grid.contains(coord) {
        return Err(SearchError::OutOfGrid(coord.to_vec()));
    }
    let d = grid
        .dims
        .iter()
        .position(|x| x.name == epochs_dim)
        .ok_or_else(|| SearchError::InvalidGrid(format!("no dimension named {epochs_dim}")))?;
    let mut params = grid.params(coord);
    params[d].1 *= 2.0;
    let on_grid = grid.dims[d].values.contains(&params[d].1);
    Ok(EnsemblePlan { params, on_grid })
}

/// Runs a shell command per evaluation and reads the loss from a JSON file.
///
/// `{name}` in the template is replaced by the value of dimension `name`
/// and `{output}` by the path the command must write. The file holds either
/// a bare number or an object with a `loss` field.
pub struct ExternalEvaluator {
    template: String,
    output_dir: PathBuf,
    spawns: AtomicUsize,
}

impl ExternalEvaluator {
    pub fn new(template: &str, grid: &Grid, output_dir: &Path) -> Result<Self, SearchError> {
        for d in &grid.dims {
            if !template.contains(&format!("{{{}}}", d.name)) {
                return Err(SearchError::InvalidGrid(format!(
                    "command template has no {{{}}} placeholder",
                    d.name
                )));
            }
        }
        if !template.contains("{output}") {
            return Err(SearchError::InvalidGrid("command template has no {output} placeholder".into()));
        }
        fs::create_dir_all(output_dir)?;
        Ok(Self {
            template: template.to_string(),
            output_dir: output_dir.to_path_buf(),
            spawns: AtomicUsize::new(0),
        })
    }

    pub fn spawn_count(&self) -> usize {
        self.spawns.load(Ordering::SeqCst)
    }

    fn output_path(&self, params: &[(String, f64)]) -> PathBuf {
        let key: BTreeMap<&str, String> = params.iter().map(|(n, v)| (n.as_str(), v.to_string())).collect();
        let digest = arena::sha256_hex(serde_json::to_string(&key).unwrap_or_default().as_bytes());
        self.output_dir.join(format!("eval-{}.json", &digest[..16]))
    }

    pub fn render(&self, params: &[(String, f64)], output: &Path) -> String {
        let mut cmd = self.template.replace("{output}", &output.display().to_string());
        for (name, v) in params {
            cmd = cmd.replace(&format!("{{{name}}}"), &v.to_string());
        }
        cmd
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum LossFile {
    Bare(f64),
    Object { loss: f64 },
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, params: &[(String, f64)]) -> Result<f64, String> {
        let out = self.output_path(params);
        let _ = fs::remove_file(&out);
        let cmd = self.render(params, &out);
        self.spawns.fetch_add(1, Ordering::SeqCst);
        let status = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .status()
            .map_err(|e| format!("failed to spawn: {e}"))?;
        if !status.success() {
            return Err(format!("command exited with {status}"));
        }
        let bytes = fs::read(&out).map_err(|e| format!("missing output {}: {e}", out.display()))?;
        match serde_json::from_slice::<LossFile>(&bytes) {
            Ok(LossFile::Bare(l)) | Ok(LossFile::Object { loss: l }) => Ok(l),
            Err(e) => Err(format!("malformed output {}: {e}", out.display())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn grid(sizes: &[usize]) -> Grid {
        Grid::new(
            sizes
                .iter()
                .enumerate()
                .map(|(i, &n)| Dim {
                    name: format!("x{i}"),
                    values: (0..n).map(|v| v as f64).collect(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn bowl(center: Vec<f64>) -> impl Fn(&[(String, f64)]) -> Result<f64, String> + Send + Sync {
        move |p: &[(String, f64)]| Ok(p.iter().zip(&center).map(|((_, v), c)| (v - c) * (v - c)).sum())
    }

    #[test]
    fn neighbor_counts() {
        let g = Grid::paper();
        assert_eq!(neighbors(&[1, 1, 2, 1], &g).len(), 8);
        assert_eq!(neighbors(&[0, 0], &grid(&[3, 3])).len(), 2);
        let top = neighbors(&[1, 1, 5, 1], &g);
        assert_eq!(top.iter().filter(|c| c[2] != 5).count(), 1);
        assert_eq!(neighbors(&[1, 2], &grid(&[3, 4]))[0], vec![0, 2]);
    }

    #[test]
    fn convex_bowl_matches_brute_force() {
        let g = grid(&[5, 5]);
        let f = bowl(vec![3.2, 1.1]);
        let s = local_search(&g, &[vec![0, 4]], &f, 100, &SearchOptions::default(), None).unwrap();
        assert_eq!(s.status, Status::Certified);
        let argmin = g
            .all_coords()
            .into_iter()
            .min_by(|a, b| f(&g.params(a)).unwrap().total_cmp(&f(&g.params(b)).unwrap()))
            .unwrap();
        assert_eq!(s.frontier.as_ref(), Some(&argmin));
        assert!(s.verify_certificate());
    }

    #[test]
    fn single_cell_grid() {
        let g = grid(&[1]);
        let s = local_search(&g, &[vec![0]], &bowl(vec![0.0]), 10, &SearchOptions::default(), None).unwrap();
        assert_eq!(s.status, Status::Certified);
        assert_eq!(s.evaluations.len(), 1);
        assert!(s.boundary_clipped.is_empty());
    }

    #[test]
    fn budget_and_no_repeats() {
        let g = grid(&[6, 6]);
        let calls = Mutex::new(Vec::new());
        let f = |p: &[(String, f64)]| {
            calls.lock().unwrap().push(p.to_vec());
            Ok(-(p[0].1 + p[1].1))
        };
        let s = local_search(&g, &[vec![0, 0]], &f, 5, &SearchOptions::default(), None).unwrap();
        assert_eq!(s.status, Status::BudgetExhausted);
        assert_eq!(s.evaluations.len(), 5);
        let c = calls.into_inner().unwrap();
        let mut uniq = c.clone();
        uniq.dedup();
        assert_eq!(uniq.len(), c.len());
    }

    #[test]
    fn ties_do_not_move() {
        let g = grid(&[3]);
        let f = |p: &[(String, f64)]| Ok(if p[0].1 < 0.5 { 2.0 } else { 1.0 });
        let s = local_search(&g, &[vec![1]], &f, 10, &SearchOptions::default(), None).unwrap();
        assert_eq!(s.frontier, Some(vec![1]));
        assert_eq!(s.ties, vec![vec![2]]);
    }

    #[test]
    fn failures_are_infinite() {
        let g = grid(&[4]);
        let f = |p: &[(String, f64)]| if p[0].1 == 2.0 { Err("boom".to_string()) } else { Ok(-p[0].1) };
        let s = local_search(&g, &[vec![0]], &f, 10, &SearchOptions::default(), None).unwrap();
        assert_eq!(s.status, Status::Certified);
        assert_eq!(s.frontier, Some(vec![1]));
        assert!(s.get(&[2]).unwrap().error.is_some());

        let all_bad = |_: &[(String, f64)]| Err::<f64, _>("no".to_string());
        let s = local_search(&g, &[vec![0]], &all_bad, 10, &SearchOptions::default(), None).unwrap();
        assert_eq!(s.status, Status::AllFailed);
        assert!(!s.verify_certificate());
    }

    #[test]
    fn seeds_first_then_global_best() {
        let g = grid(&[7]);
        let order = Mutex::new(Vec::new());
        let f = |p: &[(String, f64)]| {
            order.lock().unwrap().push(p[0].1 as usize);
            Ok((p[0].1 - 5.0).abs())
        };
        let s = local_search(&g, &[vec![0], vec![6]], &f, 20, &SearchOptions::default(), None).unwrap();
        assert_eq!(&order.lock().unwrap()[..2], &[0, 6]);
        assert_eq!(s.frontier, Some(vec![5]));
    }

    #[test]
    fn boundary_clipping_reported() {
        let g = Grid::paper();
        let f = |p: &[(String, f64)]| Ok(-p[2].1 + (p[0].1 - 0.003).abs() + (p[1].1 - 0.4).abs() + (p[3].1 - 0.75).abs());
        let s = local_search(&g, &[vec![1, 1, 2, 1]], &f, 200, &SearchOptions::default(), None).unwrap();
        assert_eq!(s.frontier, Some(vec![1, 1, 5, 1]));
        assert_eq!(s.boundary_clipped, vec!["epochs".to_string()]);
    }

    #[test]
    fn checkpoint_resume() {
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("state.json");
        let g = grid(&[6, 6]);
        let f = bowl(vec![4.0, 4.0]);
        let opts = SearchOptions {
            parallelism: 2,
            checkpoint: Some(ck.clone()),
        };
        let partial = local_search(&g, &[vec![0, 0]], &f, 4, &opts, None).unwrap();
        assert_eq!(partial.status, Status::BudgetExhausted);
        let loaded = SearchState::load(&ck).unwrap();
        assert_eq!(loaded.evaluations, partial.evaluations);
        let done = local_search(&g, &[vec![0, 0]], &f, 100, &opts, Some(loaded)).unwrap();
        let fresh = local_search(&g, &[vec![0, 0]], &f, 100, &SearchOptions::default(), None).unwrap();
        assert_eq!(done.frontier, fresh.frontier);
        assert_eq!(done.evaluations, fresh.evaluations);
    }

    #[test]
    fn ensemble_plan_doubles_epochs() {
        let g = Grid::paper();
        let p = derive_ensemble_plan(&g, &[1, 1, 3, 1], "epochs").unwrap();
        assert_eq!(p.params[2].1, 16.0);
        assert!(p.on_grid);
        let p = derive_ensemble_plan(&g, &[1, 1, 5, 1], "epochs").unwrap();
        assert_eq!(p.params[2].1, 64.0);
        assert!(!p.on_grid);
    }

    #[test]
    fn external_evaluator() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid(&[5, 5]);
        let ev = ExternalEvaluator::new(
            "python3 -c 'import json,sys; a,b=float(sys.argv[1]),float(sys.argv[2]); json.dump({\"loss\": (a-2)**2 + (b-3)**2 + 1.5}, open(sys.argv[3],\"w\"))' {x0} {x1} {output}",
            &g,
            dir.path(),
        )
        .unwrap();
        assert_eq!(ev.evaluate(&g.params(&[1, 1])).unwrap(), 1.0 + 4.0 + 1.5);
        let s = local_search(&g, &[vec![0, 0]], &ev, 100, &SearchOptions::default(), None).unwrap();
        assert_eq!(s.frontier, Some(vec![2, 3]));
        assert_eq!(s.frontier_loss, Some(1.5));
        assert_eq!(ev.spawn_count(), 1 + s.evaluations.len());

        // resuming a finished search spawns nothing
        let before = ev.spawn_count();
        local_search(&g, &[vec![0, 0]], &ev, 100, &SearchOptions::default(), Some(s)).unwrap();
        assert_eq!(ev.spawn_count(), before);

        let bad = ExternalEvaluator::new("echo nope > {output} # {x0} {x1}", &g, dir.path()).unwrap();
        assert!(bad.evaluate(&g.params(&[0, 0])).unwrap_err().contains("malformed"));
        let fail = ExternalEvaluator::new("exit 3 # {x0} {x1} {output}", &g, dir.path()).unwrap();
        assert!(fail.evaluate(&g.params(&[0, 0])).is_err());
        assert!(ExternalEvaluator::new("run {x0} {output}", &g, dir.path()).is_err());
    }
}
