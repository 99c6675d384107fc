//! Multiply-add accounting of fully connected layers.

use crate::error::{config_err, Result};

use super::ModelSpec;

fn rows_per_group(spec: &ModelSpec, extents: &[usize]) -> Result<(Vec<u128>, u128, u128)> {
    if extents.is_empty() || extents.contains(&0) {
        return Err(config_err!("extents must be positive"));
    }
    let n: u128 = extents.iter().map(|&b| b as u128).product();
    if !spec.is_split() {
        return Ok((vec![n], n, n));
    }
    if extents.len() != spec.num_branches() {
        return Err(config_err!(
            "{} extents for a model with {} branches",
            extents.len(),
            spec.num_branches()
        ));
    }
    let per: Vec<u128> = extents.iter().map(|&b| b as u128).collect();
    let sum = per.iter().sum();
    Ok((per, sum, n))
}

/// Exact multiply-adds of every FC layer when evaluating the lattice whose
/// branch row counts are `extents` (`N = Π B_i` points).
///
/// Pre-fusion layers see `Σ B_i` rows, post-fusion layers see `N`. For a
/// baseline spec every layer sees `N` rows.
pub fn count_fc_ops(spec: &ModelSpec, extents: &[usize]) -> Result<u128> {
    let plan = spec.plan()?;
    let (per_branch, pre_rows, n) = rows_per_group(spec, extents)?;
    let mac = |(i, o): (usize, usize)| (i * o) as u128;
    let first: u128 = per_branch
        .iter()
        .zip(&plan.first)
        .map(|(&b, &l)| b * mac(l))
        .sum();
    let trunk: u128 = plan.trunk.iter().map(|&l| pre_rows * mac(l)).sum();
    let tail: u128 = plan.tail.iter().map(|&l| n * mac(l)).sum();
    Ok(first + trunk + tail)
}

/// Multiply-adds under the equal-cost assumption: every layer costs `M²`
/// per row it processes, whatever its true fan-in and fan-out.
pub fn count_fc_ops_uniform(spec: &ModelSpec, extents: &[usize]) -> Result<u128> {
    let plan = spec.plan()?;
    let (_, pre_rows, n) = rows_per_group(spec, extents)?;
    let m2 = (spec.width * spec.width) as u128;
    let pre_layers = 1 + plan.trunk.len() as u128;
    Ok(pre_layers * pre_rows * m2 + plan.tail.len() as u128 * n * m2)
}
