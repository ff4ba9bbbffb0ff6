use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var};

/// Geometry tying an `H×W` feature map to its grid of square windows.
///
/// `window` is the base side `M`; `group` splices `g×g` neighbouring windows
/// into one of side `g·M` (1 for plain depthwise separable attention).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowLayout {
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub group: usize,
}

impl WindowLayout {
    pub fn new(height: usize, width: usize, window: usize, group: usize) -> Result<Self> {
        if height == 0 || width == 0 || window == 0 || group == 0 {
            return Err(Error::Layout(format!(
                "extents must be positive: H={height}, W={width}, M={window}, g={group}"
            )));
        }
        let side = window * group;
        if height % side != 0 || width % side != 0 {
            return Err(Error::Layout(format!(
                "feature map H={height}, W={width} is not divisible by window side g·M={side}"
            )));
        }
        Ok(Self {
            height,
            width,
            window,
            group,
        })
    }

    /// Side of the (possibly spliced) window.
    pub fn side(&self) -> usize {
        self.window * self.group
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.side(), self.width / self.side())
    }

    /// `N = HW / (g·M)²`.
    pub fn num_windows(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    /// Pixel tokens per window, `S = (g·M)²`.
    pub fn tokens_per_window(&self) -> usize {
        self.side() * self.side()
    }

    /// Window index and in-window position of pixel `(y, x)`.
    pub fn locate(&self, y: usize, x: usize) -> (usize, usize) {
        let s = self.side();
        let (_, cols) = self.grid();
        ((y / s) * cols + x / s, (y % s) * s + x % s)
    }

    fn check_map(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != self.height || shape[2] != self.width {
            return Err(Error::Layout(format!(
                "expected [B, {}, {}, C] for this layout, got {shape:?}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    fn check_windows(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != self.num_windows() || shape[2] != self.tokens_per_window() {
            return Err(Error::Layout(format!(
                "expected [B, {}, {}, C] windows for H={}, W={}, g·M={}, got {shape:?}",
                self.num_windows(),
                self.tokens_per_window(),
                self.height,
                self.width,
                self.side()
            )));
        }
        Ok(())
    }
}

/// `[B, H, W, C] → [B, N, S, C]`. Windows are ordered row-major over the
/// window grid and pixels row-major inside each window.
pub fn window_partition<'t, T: Scalar>(x: &Var<'t, T>, layout: &WindowLayout) -> Result<Var<'t, T>> {
    let shape = x.shape();
    layout.check_map(&shape)?;
    let (b, c) = (shape[0], shape[3]);
    let s = layout.side();
    let (rows, cols) = layout.grid();
    x.reshape(&[b, rows, s, cols, s, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, rows * cols, s * s, c])
}

/// Exact inverse of [`window_partition`].
pub fn window_reverse<'t, T: Scalar>(wins: &Var<'t, T>, layout: &WindowLayout) -> Result<Var<'t, T>> {
    let shape = wins.shape();
    layout.check_windows(&shape)?;
    let (b, c) = (shape[0], shape[3]);
    let s = layout.side();
    let (rows, cols) = layout.grid();
    wins.reshape(&[b, rows, cols, s, s, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[b, layout.height, layout.width, c])
}

/// Append one token per window: `[B, N, S, C] + [N, C] → [B, N, S+1, C]`,
/// the token landing at position `S`.
pub fn concat_window_tokens<'t, T: Scalar>(wins: &Var<'t, T>, tokens: &Var<'t, T>) -> Result<Var<'t, T>> {
    let ws = wins.shape();
    let ts = tokens.shape();
    if ws.len() != 4 || ts.len() != 2 || ts[0] != ws[1] || ts[1] != ws[3] {
        return Err(Error::Shape(format!(
            "window tokens {ts:?} do not match windows {ws:?} (need [N, C])"
        )));
    }
    let t = tokens.reshape(&[1, ws[1], 1, ws[3]])?.expand(&[ws[0], ws[1], 1, ws[3]])?;
    Var::concat(&[*wins, t], 2)
}

/// Split `[B, N, S+1, C]` into pixel tokens `[B, N, S, C]` and window
/// tokens `[B, N, C]`.
pub fn slice_tokens<'t, T: Scalar>(z: &Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let s = z.shape();
    if s.len() != 4 || s[2] < 2 {
        return Err(Error::Shape(format!(
            "slice_tokens needs [B, N, S+1, C] with at least one pixel token, got {s:?}"
        )));
    }
    let pixels = s[2] - 1;
    let feat = z.narrow(2, 0, pixels)?;
    let wt = z.narrow(2, pixels, 1)?.reshape(&[s[0], s[1], s[3]])?;
    Ok((feat, wt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{SplitMix64, Tape, Tensor};

    fn grid_input(tape: &Tape<f64>, h: usize, w: usize) -> Var<'_, f64> {
        let data = (0..h * w).map(|i| (10 * (i / w) + i % w) as f64).collect();
        tape.constant(Tensor::new([1, h, w, 1], data).unwrap())
    }

    #[test]
    fn layout_validates_divisibility() {
        assert!(WindowLayout::new(56, 56, 7, 1).is_ok());
        assert!(WindowLayout::new(56, 56, 7, 2).is_ok());
        let err = WindowLayout::new(14, 14, 4, 1).unwrap_err().to_string();
        assert!(err.contains("H=14") && err.contains("g·M=4"), "{err}");
        let l = WindowLayout::new(56, 56, 7, 2).unwrap();
        assert_eq!(l.num_windows(), 16);
        assert_eq!(WindowLayout::new(56, 56, 7, 1).unwrap().num_windows(), 64);
    }

    #[test]
    fn single_window_is_flatten() {
        let tape = Tape::new();
        let x = grid_input(&tape, 2, 2);
        let w = window_partition(&x, &WindowLayout::new(2, 2, 2, 1).unwrap()).unwrap();
        assert_eq!(w.shape(), vec![1, 1, 4, 1]);
        assert_eq!(w.value().data(), x.value().data());
    }

    #[test]
    fn four_by_four_partition_matches_index_arithmetic() {
        let tape = Tape::new();
        let x = grid_input(&tape, 4, 4);
        let layout = WindowLayout::new(4, 4, 2, 1).unwrap();
        let w = window_partition(&x, &layout).unwrap().value();
        assert_eq!(&w.data()[0..4], &[0., 1., 10., 11.]);
        assert_eq!(&w.data()[4..8], &[2., 3., 12., 13.]);
        assert_eq!(&w.data()[8..12], &[20., 21., 30., 31.]);
        // oracle: pixel (i, j) lands at window/slot given by locate()
        for i in 0..4 {
            for j in 0..4 {
                let (win, slot) = layout.locate(i, j);
                assert_eq!(w.at(&[0, win, slot, 0]), (10 * i + j) as f64);
            }
        }
        let g = window_partition(&x, &WindowLayout::new(4, 4, 2, 2).unwrap()).unwrap();
        assert_eq!(g.shape(), vec![1, 1, 16, 1]);
        assert_eq!(g.value().data(), x.value().data());
    }

    #[test]
    fn permuted_windows_do_not_reverse_to_input() {
        let tape = Tape::new();
        let x = grid_input(&tape, 4, 4);
        let layout = WindowLayout::new(4, 4, 2, 1).unwrap();
        let w = window_partition(&x, &layout).unwrap();
        let swapped = Var::concat(
            &[w.narrow(1, 1, 1).unwrap(), w.narrow(1, 0, 1).unwrap(), w.narrow(1, 2, 2).unwrap()],
            1,
        )
        .unwrap();
        let back = window_reverse(&swapped, &layout).unwrap();
        assert_ne!(*back.value(), *x.value());
        assert_eq!(*window_reverse(&w, &layout).unwrap().value(), *x.value());
    }

    #[test]
    fn partition_rejects_mismatched_maps() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 6, 4, 2]));
        assert!(matches!(
            window_partition(&x, &WindowLayout::new(4, 4, 2, 1).unwrap()),
            Err(Error::Layout(_))
        ));
        let w = tape.constant(Tensor::zeros(&[1, 3, 4, 2]));
        assert!(window_reverse(&w, &WindowLayout::new(4, 4, 2, 1).unwrap()).is_err());
    }

    #[test]
    fn token_concat_and_slice() {
        let tape = Tape::<f64>::new();
        let wins = tape.constant(Tensor::uniform(&[2, 2, 4, 3], -1.0, 1.0, &mut SplitMix64::new(1)));
        let tokens = tape.constant(Tensor::zeros(&[2, 3]));
        let z = concat_window_tokens(&wins, &tokens).unwrap();
        assert_eq!(z.shape(), vec![2, 2, 5, 3]);
        let last = z.narrow(2, 4, 1).unwrap();
        assert!(last.value().data().iter().all(|&v| v == 0.0));

        let tokens = tape.constant(Tensor::uniform(&[2, 3], -1.0, 1.0, &mut SplitMix64::new(2)));
        let z = concat_window_tokens(&wins, &tokens).unwrap();
        let (feat, wt) = slice_tokens(&z).unwrap();
        assert_eq!(*feat.value(), *wins.value());
        for b in 0..2 {
            assert_eq!(&wt.value().data()[b * 6..(b + 1) * 6], tokens.value().data());
        }
        assert!(concat_window_tokens(&wins, &tape.constant(Tensor::zeros(&[3, 3]))).is_err());
    }

    #[test]
    fn slice_shapes() {
        let tape = Tape::<f32>::new();
        let z = tape.constant(Tensor::zeros(&[2, 4, 50, 96]));
        let (f, w) = slice_tokens(&z).unwrap();
        assert_eq!(f.shape(), vec![2, 4, 49, 96]);
        assert_eq!(w.shape(), vec![2, 4, 96]);
        let z = tape.constant(Tensor::zeros(&[1, 1, 2, 3]));
        assert_eq!(slice_tokens(&z).unwrap().0.shape(), vec![1, 1, 1, 3]);
        let z = tape.constant(Tensor::zeros(&[1, 1, 1, 3]));
        assert!(slice_tokens(&z).is_err());
    }
}
