//! Order-preserving data-parallel map. Output order never depends on
//! scheduling, so reductions over the result are deterministic.

use alloc::vec::Vec;

#[cfg(feature = "std")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "std"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Sum per-item gradient contributions. Items are split into a fixed number
/// of contiguous chunks summed in order, so the floating-point result does
/// not depend on the thread count. Per-item return values are kept in order.
pub fn sum_grads_with<T, F>(
    store: &crate::params::ParamStore,
    n: usize,
    f: F,
) -> (crate::params::Grads, Vec<T>)
where
    T: Send,
    F: Fn(usize, &mut crate::params::Grads) -> T + Sync + Send,
{
    use crate::params::Grads;
    const CHUNKS: usize = 8;
    let per = n.div_ceil(CHUNKS).max(1);
    let parts = map_indexed(n.div_ceil(per), |c| {
        let mut g = Grads::for_store(store);
        let out: Vec<T> = (c * per..((c + 1) * per).min(n))
            .map(|i| f(i, &mut g))
            .collect();
        (g, out)
    });
    let mut total = Grads::for_store(store);
    let mut values = Vec::with_capacity(n);
    for (g, out) in parts {
        total.add_assign(&g);
        values.extend(out);
    }
    (total, values)
}

pub fn sum_grads<F>(store: &crate::params::ParamStore, n: usize, f: F) -> crate::params::Grads
where
    F: Fn(usize, &mut crate::params::Grads) + Sync + Send,
{
    sum_grads_with(store, n, f).0
}
