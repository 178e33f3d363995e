//! Layer widths for funnel-shaped MLPs and shaped ResNets.
//!
//! Widths shrink linearly from `n_max` to `n_out`. Intermediate widths are
//! computed exactly in rational arithmetic and rounded half-up; the first and
//! last widths are pinned to `n_max` and `n_out`.

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("{0} must be strictly positive")]
    NonPositive(&'static str),
    #[error("n_max ({n_max}) is smaller than n_out ({n_out}); widths would increase")]
    Widening { n_max: u64, n_out: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FunnelShape {
    pub n_max: u64,
    pub n_layers: u64,
    pub n_out: u64,
}

impl FunnelShape {
    pub fn new(n_max: u64, n_layers: u64, n_out: u64) -> Result<Self, ShapeError> {
        let shape = Self { n_max, n_layers, n_out };
        shape.check()?;
        Ok(shape)
    }

    fn check(&self) -> Result<(), ShapeError> {
        if self.n_max == 0 {
            return Err(ShapeError::NonPositive("n_max"));
        }
        if self.n_layers == 0 {
            return Err(ShapeError::NonPositive("n_layers"));
        }
        if self.n_out == 0 {
            return Err(ShapeError::NonPositive("n_out"));
        }
        if self.n_layers >= 2 && self.n_max < self.n_out {
            return Err(ShapeError::Widening {
                n_max: self.n_max,
                n_out: self.n_out,
            });
        }
        Ok(())
    }
}

/// Hidden-layer widths of a funnel MLP.
///
/// A single layer gets the full `n_max` width.
pub fn funnel_widths(shape: FunnelShape) -> Result<Vec<u64>, ShapeError> {
    shape.check()?;
    if shape.n_layers == 1 {
        return Ok(vec![shape.n_max]);
    }
    let den = (shape.n_layers - 1) as u128;
    let drop = (shape.n_max - shape.n_out) as u128;
    let top = shape.n_max as u128 * den;
    let widths = (0..shape.n_layers as u128)
        .map(|i| {
            // n_max - i * drop / den, rounded half-up
            let num = top - i * drop;
            ((2 * num + den) / (2 * den)) as u64
        })
        .collect();
    Ok(widths)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResNetWidths {
    /// Output width of each group.
    pub groups: Vec<u64>,
    /// Group widths replicated once per block.
    pub blocks: Vec<u64>,
}

/// Per-group output widths of a shaped ResNet; groups follow the funnel rule
/// with one "layer" per group.
pub fn resnet_group_widths(
    n_max: u64,
    n_groups: u64,
    blocks_per_group: u64,
    n_out: u64,
) -> Result<ResNetWidths, ShapeError> {
    if blocks_per_group == 0 {
        return Err(ShapeError::NonPositive("blocks_per_group"));
    }
    let groups = funnel_widths(FunnelShape {
        n_max,
        n_layers: n_groups,
        n_out,
    })?;
    let blocks = groups
        .iter()
        .flat_map(|&w| std::iter::repeat_n(w, blocks_per_group as usize))
        .collect();
    Ok(ResNetWidths { groups, blocks })
}
