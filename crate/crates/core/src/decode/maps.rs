use posepyr_tensor::{kernels, Element, Tensor};

use crate::error::{Error, Result};

/// `(K, h, w)` of a `K x h x w` or `1 x K x h x w` map.
pub(crate) fn khw<T: Element>(t: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [k, h, w] | [1, k, h, w] => Ok((k, h, w)),
        ref s => Err(Error::InvalidArgument(format!(
            "expected a K x H x W map, got {s:?}"
        ))),
    }
}

/// Bilinearly resizes a single-image map to `K x out_h x out_w`.
pub fn resize_map<T: Element>(t: &Tensor<T>, out: (usize, usize)) -> Result<Tensor<T>> {
    let (k, h, w) = khw(t)?;
    let data = if (h, w) == out {
        t.data().to_vec()
    } else {
        kernels::bilinear_resize(t.data(), k, h, w, out.0, out.1)
    };
    Ok(Tensor::from_vec(&[k, out.0, out.1], data)?)
}

/// Upsamples every level to `out` and averages them.
pub fn aggregate<T: Element>(levels: &[Tensor<T>], out: (usize, usize)) -> Result<Tensor<T>> {
    let Some(first) = levels.first() else {
        return Err(Error::InvalidArgument(
            "aggregate needs at least one level".into(),
        ));
    };
    let (k, _, _) = khw(first)?;
    let mut acc = vec![T::zero(); k * out.0 * out.1];
    for level in levels {
        if khw(level)?.0 != k {
            return Err(Error::InvalidArgument(
                "levels differ in channel count".into(),
            ));
        }
        let up = resize_map(level, out)?;
        acc.iter_mut().zip(up.data()).for_each(|(a, &b)| *a += b);
    }
    let n = T::lit(levels.len() as f64);
    acc.iter_mut().for_each(|a| *a = *a / n);
    Ok(Tensor::from_vec(&[k, out.0, out.1], acc)?)
}

/// Averages `maps` with the prediction on the mirrored image, after mirroring
/// it back and permuting its channels by `flip_index`.
pub fn flip_merge<T: Element>(
    maps: &Tensor<T>,
    flipped: &Tensor<T>,
    flip_index: &[usize],
) -> Result<Tensor<T>> {
    let (k, h, w) = khw(maps)?;
    if khw(flipped)? != (k, h, w) || flip_index.len() != k {
        return Err(Error::InvalidArgument(format!(
            "flip_merge: shapes {:?} / {:?} with a {}-entry flip table",
            maps.shape(),
            flipped.shape(),
            flip_index.len()
        )));
    }
    let half = T::lit(0.5);
    let (a, b) = (maps.data(), flipped.data());
    let mut out = vec![T::zero(); k * h * w];
    for c in 0..k {
        let src = flip_index[c];
        for y in 0..h {
            for x in 0..w {
                out[(c * h + y) * w + x] =
                    (a[(c * h + y) * w + x] + b[(src * h + y) * w + (w - 1 - x)]) * half;
            }
        }
    }
    Ok(Tensor::from_vec(&[k, h, w], out)?)
}
