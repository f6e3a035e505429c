//! Data-parallel helpers. With the `parallel` feature these run on the rayon
//! pool; without it they are plain sequential loops with identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a helper distributes its work. `Parallel` degrades to `Sequential`
/// when the crate is built without the `parallel` feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Sequential,
    Parallel,
}

impl Default for Strategy {
    fn default() -> Self {
        if is_parallel() {
            Strategy::Parallel
        } else {
            Strategy::Sequential
        }
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    map_range(items.len(), |i| f(&items[i]))
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    map_range_with(Strategy::default(), n, f)
}

pub fn map_range_with<U, F>(strategy: Strategy, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    match strategy {
        #[cfg(feature = "parallel")]
        Strategy::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Maps `f(index, item)` over mutable items, preserving order.
pub fn map_mut_with<T, U, F>(strategy: Strategy, items: &mut [T], f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(usize, &mut T) -> U + Sync + Send,
{
    match strategy {
        #[cfg(feature = "parallel")]
        Strategy::Parallel => items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect(),
        _ => items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree() {
        let f = |i: usize| (i * i) as f64 / 3.0;
        let seq = map_range_with(Strategy::Sequential, 1000, f);
        assert_eq!(map_range_with(Strategy::Parallel, 1000, f), seq);
        assert_eq!(map_range(1000, f), seq);
        let items: Vec<usize> = (0..50).collect();
        assert_eq!(map(&items, |&i| f(i)), seq[..50].to_vec());
        let mut a: Vec<u64> = (0..64).collect();
        let mut b = a.clone();
        let ra = map_mut_with(Strategy::Sequential, &mut a, |i, x| {
            *x += i as u64;
            *x * 2
        });
        let rb = map_mut_with(Strategy::Parallel, &mut b, |i, x| {
            *x += i as u64;
            *x * 2
        });
        assert_eq!((a, ra), (b, rb));
    }
}
