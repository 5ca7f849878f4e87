use crate::data::DepthImage;
use crate::error::{Error, Result};

/// Fills every pixel with the depth of its nearest valid (> 0) pixel.
///
/// Distance is Euclidean in pixel units; ties go to the smaller row, then
/// the smaller column. The search grows square rings around each pixel and
/// stops once the ring radius exceeds the best distance found, so it is
/// exact and cheap when measurements are spread over the image.
pub fn nearest_neighbor_complete(sparse: &DepthImage) -> Result<DepthImage> {
    let (h, w) = sparse.shape();
    if sparse.nonzero_count() == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let valid = |r: isize, c: isize| -> bool {
        r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && sparse.get(r as usize, c as usize) > 0.0
    };
    let max_radius = h.max(w) as isize;
    let mut out = DepthImage::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            let (ri, ci) = (r as isize, c as isize);
            // (squared distance, row, col)
            let mut best: Option<(isize, isize, isize)> = None;
            for radius in 0..=max_radius {
                if let Some((d2, _, _)) = best {
                    if radius * radius > d2 {
                        break;
                    }
                }
                for (dr, dc) in ring(radius) {
                    let (rr, cc) = (ri + dr, ci + dc);
                    if valid(rr, cc) {
                        let cand = (dr * dr + dc * dc, rr, cc);
                        if best.is_none_or(|b| cand < b) {
                            best = Some(cand);
                        }
                    }
                }
            }
            let (_, rr, cc) = best.expect("at least one valid pixel");
            out.set(r, c, sparse.get(rr as usize, cc as usize));
        }
    }
    Ok(out)
}

/// Offsets at Chebyshev distance exactly `radius`.
fn ring(radius: isize) -> impl Iterator<Item = (isize, isize)> {
    let span = -radius..=radius;
    span.clone()
        .flat_map(move |dr| span.clone().map(move |dc| (dr, dc)))
        .filter(move |&(dr, dc)| dr.abs().max(dc.abs()) == radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(sparse: &DepthImage) -> DepthImage {
        let (h, w) = sparse.shape();
        let mut points = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if sparse.get(r, c) > 0.0 {
                    points.push((r as i64, c as i64));
                }
            }
        }
        DepthImage::from_fn(h, w, |r, c| {
            let (r, c) = (r as i64, c as i64);
            let &(br, bc) = points
                .iter()
                .min_by_key(|&&(pr, pc)| ((pr - r).pow(2) + (pc - c).pow(2), pr, pc))
                .unwrap();
            sparse.get(br as usize, bc as usize)
        })
    }

    #[test]
    fn single_measurement_fills_everything() {
        let mut s = DepthImage::zeros(5, 7);
        s.set(3, 1, 7.0);
        let out = nearest_neighbor_complete(&s).unwrap();
        assert!(out.data().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn dense_input_is_identity() {
        let s = DepthImage::from_fn(4, 6, |r, c| 1.0 + r as f64 + 0.1 * c as f64);
        assert_eq!(nearest_neighbor_complete(&s).unwrap(), s);
    }

    #[test]
    fn corner_tie_goes_to_smaller_row() {
        let mut s = DepthImage::zeros(3, 3);
        s.set(0, 0, 2.0);
        s.set(2, 2, 4.0);
        let out = nearest_neighbor_complete(&s).unwrap();
        assert_eq!(out.get(1, 1), 2.0);
        assert_eq!(out.get(0, 2), 2.0);
        assert_eq!(out.get(2, 0), 2.0);
        assert_eq!(out.get(2, 1), 4.0);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(
            nearest_neighbor_complete(&DepthImage::zeros(2, 2)),
            Err(Error::EmptyEvaluation)
        ));
    }

    proptest! {
        #[test]
        fn matches_exhaustive_search(
            cells in proptest::collection::vec(prop_oneof![4 => Just(0.0), 1 => 0.5f64..10.0], 13 * 9),
        ) {
            let s = DepthImage::new(13, 9, cells).unwrap();
            prop_assume!(s.nonzero_count() > 0);
            prop_assert_eq!(nearest_neighbor_complete(&s).unwrap(), brute_force(&s));
        }
    }
}
