//! Cell-level execution backend.
//!
//! Every hot loop in the crate is a map over independent spatial cells. The
//! `Parallel` backend hands those to rayon when the `parallel` feature is on;
//! otherwise it degrades to the sequential loop. Results are collected in cell
//! order either way, so reductions downstream see the same summation order.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            Exec::Parallel => par_map(n, f),
        }
    }

    /// Runs `f(chunk_index, chunk)` over consecutive chunks of `data`.
    pub fn for_each_chunk<F>(self, data: &mut [f64], chunk: usize, f: F)
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        assert!(chunk > 0 && data.len().is_multiple_of(chunk));
        match self {
            Exec::Sequential => data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c)),
            Exec::Parallel => par_chunks(data, chunk, f),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
fn par_chunks<F>(data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    use rayon::prelude::*;
    data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(not(feature = "parallel"))]
fn par_chunks<F>(data: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Runs `f` on a pool with the requested thread count (`None` keeps the global pool).
#[cfg(feature = "parallel")]
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<R: Send>(_threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backends_agree() {
        let a = Exec::Sequential.map(17, |i| (i as f64).sqrt());
        let b = Exec::Parallel.map(17, |i| (i as f64).sqrt());
        assert_eq!(a, b);
        let mut x = vec![1.0; 12];
        let mut y = x.clone();
        Exec::Sequential.for_each_chunk(&mut x, 3, |i, c| c.iter_mut().for_each(|v| *v *= i as f64));
        Exec::Parallel.for_each_chunk(&mut y, 3, |i, c| c.iter_mut().for_each(|v| *v *= i as f64));
        assert_eq!(x, y);
    }
}
