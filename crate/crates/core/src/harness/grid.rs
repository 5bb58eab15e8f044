//! Interpolation grids: one row of `T` frames between the styles of two
//! references, with source and reference thumbnails.

use std::path::Path;

use tch::Tensor;

use crate::data::write_png;
use crate::error::{ensure_arg, Result};
use crate::latent::interpolate_batch;
use crate::networks::Translator;

/// Frames of one path. Every frame is generated with batch size one, so the
/// endpoints are bit-identical to direct translations of the source with
/// the references' styles.
#[derive(Debug)]
pub struct InterpolationGrid {
    /// `T` tensors of shape `[1, C, H, W]`.
    pub frames: Vec<Tensor>,
    pub source: Tensor,
    pub ref_a: Tensor,
    pub ref_b: Tensor,
}

impl InterpolationGrid {
    /// The row laid out as `source | ref_a | frames… | ref_b`, shape
    /// `[C, H, (T + 3)·W]`.
    pub fn row(&self) -> Tensor {
        let mut tiles = vec![self.source.shallow_clone(), self.ref_a.shallow_clone()];
        tiles.extend(self.frames.iter().map(Tensor::shallow_clone));
        tiles.push(self.ref_b.shallow_clone());
        Tensor::cat(&tiles, 3).squeeze_dim(0)
    }
}

fn as_batch(x: &Tensor) -> Tensor {
    if x.dim() == 3 {
        x.unsqueeze(0)
    } else {
        x.shallow_clone()
    }
}

/// Generates the `T` frames of the path `E(ref_a) → E(ref_b)` for `source`.
pub fn interpolation_frames(
    translator: &Translator,
    source: &Tensor,
    ref_a: &Tensor,
    ref_b: &Tensor,
    steps: usize,
) -> Result<InterpolationGrid> {
    ensure_arg!(steps >= 2, "a grid needs at least two frames, got {steps}");
    let (source, ref_a, ref_b) = (as_batch(source), as_batch(ref_a), as_batch(ref_b));
    for t in [&source, &ref_a, &ref_b] {
        ensure_arg!(t.size()[0] == 1, "grid inputs must be single images, got {:?}", t.size());
    }
    let frames = tch::no_grad(|| -> Result<Vec<Tensor>> {
        let s_a = translator.encoder.encode(&ref_a)?;
        let s_b = translator.encoder.encode(&ref_b)?;
        let codes = interpolate_batch(&s_a, &s_b, steps)?;
        (0..steps as i64).map(|k| translator.generate(&source, &codes.get(k))).collect()
    })?;
    Ok(InterpolationGrid { frames, source, ref_a, ref_b })
}

/// Renders the path to a PNG at `out` and returns the frames.
pub fn render_interpolation_grid(
    translator: &Translator,
    source: &Tensor,
    ref_a: &Tensor,
    ref_b: &Tensor,
    steps: usize,
    out: &Path,
) -> Result<InterpolationGrid> {
    let grid = interpolation_frames(translator, source, ref_a, ref_b, steps)?;
    write_png(&grid.row(), out)?;
    Ok(grid)
}

/// [`render_interpolation_grid`] for two references of the same domain.
pub fn intra_domain_grid(
    translator: &Translator,
    source: &Tensor,
    ref_a: (&Tensor, usize),
    ref_b: (&Tensor, usize),
    steps: usize,
    out: &Path,
) -> Result<InterpolationGrid> {
    ensure_arg!(
        ref_a.1 == ref_b.1,
        "intra-domain grid needs references from one domain, got {} and {}",
        ref_a.1,
        ref_b.1
    );
    render_interpolation_grid(translator, source, ref_a.0, ref_b.0, steps, out)
}
