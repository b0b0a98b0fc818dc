//! Chunked map/reduce helpers shared by the numeric kernels.
//!
//! Reductions split the input at fixed chunk boundaries and combine the
//! partial sums in chunk order, so a parallel run produces the same bits as
//! any other parallel run. (Sequential builds fold left over the whole slice
//! instead; the two modes are numerically equivalent but not bit-equal.)

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length for parallel reductions and elementwise maps.
pub(crate) const CHUNK: usize = 16 * 1024;

/// Sum of `f(x)` over `data`.
pub(crate) fn sum_map<F>(data: &[f64], f: F) -> f64
where
    F: Fn(f64) -> f64 + Sync,
{
    #[cfg(feature = "parallel")]
    if data.len() > CHUNK {
        let partials: Vec<f64> = data
            .par_chunks(CHUNK)
            .map(|c| c.iter().map(|&v| f(v)).sum::<f64>())
            .collect();
        return partials.into_iter().sum();
    }
    data.iter().map(|&v| f(v)).sum()
}

/// Sum of `f(a_i, b_i)` over two equal-length slices.
pub(crate) fn sum_zip<F>(a: &[f64], b: &[f64], f: F) -> f64
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    debug_assert_eq!(a.len(), b.len());
    #[cfg(feature = "parallel")]
    if a.len() > CHUNK {
        let partials: Vec<f64> = a
            .par_chunks(CHUNK)
            .zip(b.par_chunks(CHUNK))
            .map(|(ca, cb)| {
                ca.iter()
                    .zip(cb)
                    .map(|(&x, &y)| f(x, y))
                    .sum::<f64>()
            })
            .collect();
        return partials.into_iter().sum();
    }
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).sum()
}

/// Elementwise `f(a_i, b_i)` into a fresh vector.
pub(crate) fn zip_map<F>(a: &[f64], b: &[f64], f: F) -> Vec<f64>
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    debug_assert_eq!(a.len(), b.len());
    #[cfg(feature = "parallel")]
    if a.len() > CHUNK {
        let mut out = vec![0.0; a.len()];
        out.par_chunks_mut(CHUNK)
            .zip(a.par_chunks(CHUNK).zip(b.par_chunks(CHUNK)))
            .for_each(|(co, (ca, cb))| {
                for ((o, &x), &y) in co.iter_mut().zip(ca).zip(cb) {
                    *o = f(x, y);
                }
            });
        return out;
    }
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Elementwise `f(a_i, b_i, c_i)` into a fresh vector.
pub(crate) fn zip3_map<F>(a: &[f64], b: &[f64], c: &[f64], f: F) -> Vec<f64>
where
    F: Fn(f64, f64, f64) -> f64 + Sync,
{
    debug_assert_eq!(a.len(), b.len());
    debug_assert_eq!(a.len(), c.len());
    #[cfg(feature = "parallel")]
    if a.len() > CHUNK {
        let mut out = vec![0.0; a.len()];
        out.par_chunks_mut(CHUNK)
            .zip(a.par_chunks(CHUNK))
            .zip(b.par_chunks(CHUNK).zip(c.par_chunks(CHUNK)))
            .for_each(|((co, ca), (cb, cc))| {
                for (i, o) in co.iter_mut().enumerate() {
                    *o = f(ca[i], cb[i], cc[i]);
                }
            });
        return out;
    }
    (0..a.len()).map(|i| f(a[i], b[i], c[i])).collect()
}

/// Apply `f(row_index, row)` to disjoint fixed-length rows of `out`.
pub(crate) fn for_rows<F>(out: &mut [f64], row_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert!(row_len > 0 && out.len().is_multiple_of(row_len));
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    for (i, row) in out.chunks_mut(row_len).enumerate() {
        f(i, row);
    }
}
