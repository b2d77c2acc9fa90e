use super::Utterance;
use crate::nn::{Context, Matrix};

/// Concatenates frames `t − left ..= t + right` for every frame `t`,
/// repeating the first/last frame past the utterance edges.
pub fn splice_context(u: &Utterance, context: Context) -> Matrix {
    let n = u.len();
    let dim = u.frames.cols();
    let mut out = Matrix::zeros(n, dim * context.width());
    for t in 0..n {
        let row = out.row_mut(t);
        for (slot, offset) in (0..context.width()).enumerate() {
            let src = (t + offset).saturating_sub(context.left).min(n - 1);
            row[slot * dim..(slot + 1) * dim].copy_from_slice(u.frames.row(src));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> Utterance {
        let data: Vec<f64> = (0..n * 2).map(|v| v as f64).collect();
        Utterance::new("r", Matrix::from_vec(n, 2, data).unwrap(), vec![0; n]).unwrap()
    }

    #[test]
    fn no_context_is_identity() {
        let u = ramp(4);
        assert_eq!(splice_context(&u, Context::new(0, 0)), u.frames);
    }

    #[test]
    fn single_frame_is_repeated() {
        let u = ramp(1);
        let s = splice_context(&u, Context::new(2, 1));
        assert_eq!(s.shape(), (1, 8));
        assert_eq!(s.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn window_contents_with_edge_padding() {
        let u = ramp(3); // frames [0,1] [2,3] [4,5]
        let s = splice_context(&u, Context::new(1, 1));
        assert_eq!(s.row(0), &[0.0, 1.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(s.row(1), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(s.row(2), &[2.0, 3.0, 4.0, 5.0, 4.0, 5.0]);
    }

    #[test]
    fn row_count_matches_frames() {
        for n in 1..6 {
            for (l, r) in [(0, 0), (3, 0), (0, 4), (5, 5)] {
                assert_eq!(splice_context(&ramp(n), Context::new(l, r)).rows(), n);
            }
        }
    }
}
