use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};

/// Splits `(C, H, W)` or `(N, C, H, W)` into four non-overlapping quadrants,
/// row-major: top-left, top-right, bottom-left, bottom-right.
pub fn patchify(g: &mut Graph, feature: Var) -> Result<[Var; 4]> {
    let shape = g.shape(feature).to_vec();
    if shape.len() < 3 {
        return Err(Error::shape("patchify", &[&shape]));
    }
    let (h_axis, w_axis) = (shape.len() - 2, shape.len() - 1);
    let (h, w) = (shape[h_axis], shape[w_axis]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid("patchify", format!("spatial size {h}x{w} is not even")));
    }
    let top = g.slice(feature, h_axis, 0, h / 2)?;
    let bottom = g.slice(feature, h_axis, h / 2, h)?;
    Ok([
        g.slice(top, w_axis, 0, w / 2)?,
        g.slice(top, w_axis, w / 2, w)?,
        g.slice(bottom, w_axis, 0, w / 2)?,
        g.slice(bottom, w_axis, w / 2, w)?,
    ])
}

/// Inverse of [`patchify`].
pub fn unpatchify(g: &mut Graph, patches: &[Var; 4]) -> Result<Var> {
    let rank = g.shape(patches[0]).len();
    if rank < 3 {
        return Err(Error::shape("unpatchify", &[g.shape(patches[0])]));
    }
    let top = g.concat(&[patches[0], patches[1]], rank - 1)?;
    let bottom = g.concat(&[patches[2], patches[3]], rank - 1)?;
    g.concat(&[top, bottom], rank - 2)
}
