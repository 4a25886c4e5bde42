//! Task-parallel execution layer.
//!
//! Two layers of parallelism are exposed. The coarse layer
//! ([`Runtime::map_balanced`]) distributes independent component-function
//! builds over worker groups using a static longest-processing-time
//! partition. The fine layer ([`Runtime::map`], [`Runtime::try_map`]) spreads
//! grid-point evaluations inside one refinement level over the same pool, so
//! idle coarse workers pick up fine tasks.
//!
//! Every method returns results in task order, and all reductions downstream
//! are performed by the caller in that order, so numerical output never
//! depends on the worker count. Without the `parallel` feature every method
//! runs sequentially on the calling thread.

use std::panic::{catch_unwind, AssertUnwindSafe};
#[cfg(feature = "parallel")]
use std::sync::Arc;

use crate::error::{DdsgError, Result};

/// Environment variable consulted by [`Runtime::from_env`].
pub const WORKERS_ENV: &str = "DDSG_WORKERS";

#[derive(Clone)]
pub struct Runtime {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime").field("workers", &self.workers).finish()
    }
}

/// A failed task inside [`Runtime::try_map`].
#[derive(Debug)]
pub struct TaskFailure<E> {
    /// Lowest failing task id.
    pub task: usize,
    /// Number of failing tasks.
    pub failures: usize,
    pub error: E,
}

/// Static partition of coarse tasks over worker groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub groups: Vec<Vec<usize>>,
    pub loads: Vec<u64>,
}

impl Assignment {
    pub fn max_load(&self) -> u64 {
        self.loads.iter().copied().max().unwrap_or(0)
    }

    pub fn mean_load(&self) -> f64 {
        if self.loads.is_empty() {
            return 0.0;
        }
        self.loads.iter().sum::<u64>() as f64 / self.loads.len() as f64
    }
}

/// Greedy longest-processing-time partition. Ties go to the lower task id
/// and the lower worker id, so the result is deterministic.
pub fn load_balance(costs: &[u64], workers: usize) -> Assignment {
    let workers = workers.max(1);
    let mut order: Vec<usize> = (0..costs.len()).collect();
    order.sort_by(|&a, &b| costs[b].cmp(&costs[a]).then(a.cmp(&b)));
    let mut groups = vec![Vec::new(); workers];
    let mut loads = vec![0u64; workers];
    for task in order {
        let (w, _) = loads
            .iter()
            .enumerate()
            .min_by(|(i, a), (j, b)| a.cmp(b).then(i.cmp(j)))
            .expect("at least one worker");
        groups[w].push(task);
        loads[w] += costs[task];
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    Assignment { groups, loads }
}

impl Runtime {
    /// A runtime with `workers` threads. `workers == 1` runs inline.
    pub fn new(workers: usize) -> Result<Self> {
        if workers == 0 {
            return Err(DdsgError::InvalidArgument("worker count must be >= 1".into()));
        }
        #[cfg(feature = "parallel")]
        {
            let pool = if workers > 1 {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .thread_name(|i| format!("ddsg-worker-{i}"))
                    .build()
                    .map_err(|e| DdsgError::InvalidArgument(e.to_string()))?;
                Some(Arc::new(pool))
            } else {
                None
            };
            Ok(Self { workers, pool })
        }
        #[cfg(not(feature = "parallel"))]
        {
            Ok(Self { workers })
        }
    }

    pub fn sequential() -> Self {
        Self::new(1).expect("one worker is always valid")
    }

    /// Worker count from `DDSG_WORKERS`, falling back to the available
    /// hardware parallelism.
    pub fn from_env() -> Result<Self> {
        let workers = match std::env::var(WORKERS_ENV) {
            Ok(s) => s
                .trim()
                .parse::<usize>()
                .map_err(|_| DdsgError::InvalidArgument(format!("{WORKERS_ENV}={s:?} is not a positive integer")))?,
            Err(_) => default_workers(),
        };
        Self::new(workers)
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn is_parallel(&self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self.pool.is_some()
        }
        #[cfg(not(feature = "parallel"))]
        {
            false
        }
    }

    /// Fine-layer map. Results are in task order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect());
        }
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }

    /// Map over `0..n`.
    pub fn map_range<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
        (0..n).map(f).collect()
    }

    /// Fallible fine-layer map. Every task runs; the lowest failing task id is
    /// reported together with the number of failures.
    pub fn try_map<T, R, E, F>(&self, items: &[T], f: F) -> std::result::Result<Vec<R>, TaskFailure<E>>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(usize, &T) -> std::result::Result<R, E> + Sync + Send,
    {
        collect_results(self.map(items, f))
    }

    /// Coarse-layer map: tasks are partitioned by [`load_balance`] on `costs`
    /// and each worker group processes its tasks in ascending id order.
    pub fn map_balanced<T, R, F>(&self, items: &[T], costs: &[u64], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        assert_eq!(items.len(), costs.len(), "one cost per task");
        let assignment = load_balance(costs, self.workers.min(items.len().max(1)));
        let per_group: Vec<Vec<(usize, R)>> = self.map(&assignment.groups, |_, group| {
            group.iter().map(|&t| (t, f(t, &items[t]))).collect()
        });
        let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
        for (t, r) in per_group.into_iter().flatten() {
            slots[t] = Some(r);
        }
        slots
            .into_iter()
            .map(|r| r.expect("every task assigned exactly once"))
            .collect()
    }

    pub fn try_map_balanced<T, R, E, F>(
        &self,
        items: &[T],
        costs: &[u64],
        f: F,
    ) -> std::result::Result<Vec<R>, TaskFailure<E>>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(usize, &T) -> std::result::Result<R, E> + Sync + Send,
    {
        collect_results(self.map_balanced(items, costs, f))
    }
}

impl Default for Runtime {
    fn default() -> Self {
        Self::new(default_workers()).unwrap_or_else(|_| Self::sequential())
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn collect_results<R, E>(results: Vec<std::result::Result<R, E>>) -> std::result::Result<Vec<R>, TaskFailure<E>> {
    let failures = results.iter().filter(|r| r.is_err()).count();
    if failures == 0 {
        return Ok(results.into_iter().map(|r| r.ok().expect("checked")).collect());
    }
    let (task, error) = results
        .into_iter()
        .enumerate()
        .find_map(|(i, r)| r.err().map(|e| (i, e)))
        .expect("at least one failure");
    Err(TaskFailure { task, failures, error })
}

/// Runs `f` over `tasks` on a fresh pool of `worker_count` threads. Task
/// panics and errors are aggregated into a single [`DdsgError::Task`] that
/// names the lowest failing task id.
pub fn parallel_map<T, R, F>(tasks: &[T], worker_count: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let rt = Runtime::new(worker_count)?;
    let outcome = rt.try_map(tasks, |_, t| match catch_unwind(AssertUnwindSafe(|| f(t))) {
        Ok(Ok(r)) => Ok(r),
        Ok(Err(e)) => Err(e.to_string()),
        Err(panic) => Err(panic_message(panic.as_ref())),
    });
    outcome.map_err(|fail| DdsgError::Task {
        task: fail.task,
        failures: fail.failures,
        message: fail.error,
    })
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = payload.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic".to_string()
    }
}
