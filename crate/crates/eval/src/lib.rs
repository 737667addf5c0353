//! Symbolic-music evaluation: per-piece quality metrics, attribute-control
//! accuracy against references, and information-theoretic analysis of
//! tokenized corpora.

pub mod control;
pub mod metrics;
pub mod mi;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluation input: {0}")]
    Input(String),
}

/// Map `f` over `items` on up to `available_parallelism` threads, keeping
/// input order. Shared by the metric passes here and by per-file batch
/// work in downstream tools.
pub fn parallel_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = std::thread::available_parallelism()
        .map(usize::from)
        .unwrap_or(1)
        .min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(|| part.iter().map(&f).collect::<Vec<R>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("metric worker panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::parallel_map;

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<usize> = (0..1000).collect();
        let doubled = parallel_map(&items, |&x| 2 * x);
        assert_eq!(doubled, items.iter().map(|x| 2 * x).collect::<Vec<_>>());
        assert!(parallel_map::<usize, usize, _>(&[], |&x| x).is_empty());
    }
}
