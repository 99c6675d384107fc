//! Execution mode switch.
//!
//! Row-parallel kernels only split work across output rows, so every output
//! element is accumulated in the same order in both modes and results are
//! bit-identical. Without the `parallel` feature every kernel runs the
//! sequential path regardless of the selected mode.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Sequential,
    Parallel,
}

static MODE: AtomicU8 = AtomicU8::new(1);

/// Rows below this count are never split across threads.
pub const PAR_MIN_ROWS: usize = 64;

pub fn set_mode(mode: ExecMode) {
    MODE.store(
        match mode {
            ExecMode::Sequential => 0,
            ExecMode::Parallel => 1,
        },
        Ordering::Relaxed,
    );
}

pub fn mode() -> ExecMode {
    match MODE.load(Ordering::Relaxed) {
        0 => ExecMode::Sequential,
        _ => ExecMode::Parallel,
    }
}

/// Whether kernels will actually fan out to rayon.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && mode() == ExecMode::Parallel
}

/// Runs `f` with the mode temporarily set, restoring the previous one.
pub fn with_mode<R>(mode: ExecMode, f: impl FnOnce() -> R) -> R {
    let prev = self::mode();
    set_mode(mode);
    let out = f();
    set_mode(prev);
    out
}

/// Applies `f(first_row, block)` to blocks of `rows_per_block` rows of
/// width `width`, in parallel when enabled and worthwhile.
pub(crate) fn for_each_block<T: Send>(
    out: &mut [T],
    width: usize,
    rows_per_block: usize,
    f: impl Fn(usize, &mut [T]) + Send + Sync,
) {
    if width == 0 {
        return;
    }
    let chunk = width * rows_per_block.max(1);
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() && out.len() / width >= PAR_MIN_ROWS {
            use rayon::prelude::*;
            out.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(b, block)| f(b * rows_per_block.max(1), block));
            return;
        }
    }
    out.chunks_mut(chunk)
        .enumerate()
        .for_each(|(b, block)| f(b * rows_per_block.max(1), block));
}

/// Caps worker threads at `n`. One thread selects the sequential path.
/// Must run before the first parallel kernel; later calls only switch modes.
pub fn set_threads(n: usize) -> crate::Result<()> {
    if n == 0 {
        return Err(crate::error::config_err!("thread count must be positive"));
    }
    if n == 1 {
        set_mode(ExecMode::Sequential);
        return Ok(());
    }
    #[cfg(feature = "parallel")]
    {
        // Fails only if the global pool already exists, which keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    set_mode(ExecMode::Parallel);
    Ok(())
}
