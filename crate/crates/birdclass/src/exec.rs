//! Data-parallel execution helpers.
//!
//! Every per-item closure in the pipeline derives its randomness from the
//! item itself (seed, id, ordinal), never from iteration order, so the
//! rayon path and the sequential path produce identical outputs. The
//! `parallel` feature (on by default) selects which one the dispatching
//! functions use; the `*_seq` / `*_par` variants stay available so the
//! bench suite can compare both.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, in parallel when the `parallel` feature is enabled.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_par(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_seq(items, f)
    }
}

/// Fallible [`map`]: stops at the first error.
pub fn try_map<T, U, E, F>(items: &[T], f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(&T) -> Result<U, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        try_map_par(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        try_map_seq(items, f)
    }
}

/// [`map`] with the item index passed to the closure.
pub fn map_indexed<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

/// Sequential reference path.
pub fn map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Sequential reference path for fallible maps.
pub fn try_map_seq<T, U, E, F>(items: &[T], f: F) -> Result<Vec<U>, E>
where
    F: Fn(&T) -> Result<U, E>,
{
    items.iter().map(f).collect()
}

/// Rayon path; output order matches input order.
#[cfg(feature = "parallel")]
pub fn map_par<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Rayon path for fallible maps.
#[cfg(feature = "parallel")]
pub fn try_map_par<T, U, E, F>(items: &[T], f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(&T) -> Result<U, E> + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        let out = map(&items, |x| x * 2);
        assert_eq!(out, map_seq(&items, |x| x * 2));
    }

    #[test]
    fn try_map_stops_on_error() {
        let items = vec![1, 2, 3];
        let res: Result<Vec<i32>, String> =
            try_map(&items, |x| if *x == 2 { Err("boom".into()) } else { Ok(*x) });
        assert!(res.is_err());
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn par_and_seq_agree() {
        let items: Vec<u64> = (0..512).collect();
        let f = |x: &u64| x.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17);
        assert_eq!(map_par(&items, f), map_seq(&items, f));
    }
}
