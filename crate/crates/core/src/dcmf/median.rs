use super::direction::{validate_line, DirectionSpec, Offset};
use crate::autodiff::conv::resolve;
use crate::autodiff::{Graph, Op, PadMode, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{dims4, Tensor};

/// Flat source index of every (tap, pixel) pair under replicate clamping.
fn tap_table(offsets: &[Offset], h: usize, w: usize) -> Vec<u32> {
    let mut table = Vec::with_capacity(offsets.len() * h * w);
    for &(dy, dx) in offsets {
        for y in 0..h {
            let sy = resolve(y as isize + dy, h, PadMode::Replicate)
                .expect("replicate never leaves the image");
            for x in 0..w {
                let sx = resolve(x as isize + dx, w, PadMode::Replicate)
                    .expect("replicate never leaves the image");
                table.push((sy * w + sx) as u32);
            }
        }
    }
    table
}

#[inline]
fn compare_exchange<T: Scalar>(lo: &mut [T], hi: &mut [T]) {
    for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
        let (x, y) = (*a, *b);
        let swap = y < x;
        *a = if swap { y } else { x };
        *b = if swap { x } else { y };
    }
}

/// Per-pixel median over the `k` lanes of `sorted` (each `len` long), by an
/// odd-even transposition network. Lanes come out sorted.
fn sort_lanes<T: Scalar>(sorted: &mut [T], k: usize, len: usize) {
    for round in 0..k {
        let mut i = round % 2;
        while i + 1 < k {
            let (left, right) = sorted.split_at_mut((i + 1) * len);
            compare_exchange(&mut left[i * len..], &mut right[..len]);
            i += 2;
        }
    }
}

impl<T: Scalar> Graph<T> {
    /// Median over `k` samples along a line through each pixel, with
    /// replicate clamping at the border. Among samples equal to the median
    /// value the one with the lowest flat index is selected, and the backward
    /// pass routes each output gradient to that sample.
    pub fn median_pool_line(&mut self, input: Var, offsets: &[Offset]) -> Result<Var> {
        validate_line(offsets)?;
        let (n, c, h, w) = dims4(self.shape(input), "median_pool_line")?;
        let k = offsets.len();
        let hw = h * w;
        if n * c * hw >= u32::MAX as usize {
            return Err(Error::contract(
                "median_pool_line",
                "tensor too large for 32-bit sample indices",
            ));
        }
        let table = tap_table(offsets, h, w);
        let x = self.value(input).data();
        let mut out = vec![T::zero(); x.len()];
        let mut selected = vec![0u32; x.len()];
        let mut gathered = vec![T::zero(); k * hw];
        let mut sorted = vec![T::zero(); k * hw];
        for plane in 0..n * c {
            let base = plane * hw;
            let src = &x[base..base + hw];
            for (g, &i) in gathered.iter_mut().zip(&table) {
                *g = src[i as usize];
            }
            sorted.copy_from_slice(&gathered);
            sort_lanes(&mut sorted, k, hw);
            let median = &sorted[(k / 2) * hw..(k / 2 + 1) * hw];
            let sel = &mut selected[base..base + hw];
            sel.fill(u32::MAX);
            for t in 0..k {
                let lane = &gathered[t * hw..(t + 1) * hw];
                let idx = &table[t * hw..(t + 1) * hw];
                for p in 0..hw {
                    if lane[p] == median[p] && idx[p] < sel[p] {
                        sel[p] = idx[p];
                    }
                }
            }
            let center = &table[(k / 2) * hw..(k / 2 + 1) * hw];
            for (s, &c) in sel.iter_mut().zip(center) {
                // only a NaN median matches no sample; route it to the center
                if *s == u32::MAX {
                    *s = c;
                }
                *s += base as u32;
            }
            out[base..base + hw].copy_from_slice(median);
        }
        let value = Tensor::new([n, c, h, w], out)?;
        self.push(value, Op::MedianLine { input, selected })
    }

    /// Cross-median filter: a line median followed by the perpendicular one.
    pub fn cmf(&mut self, input: Var, spec: &DirectionSpec) -> Result<Var> {
        spec.validate()?;
        let first = self.median_pool_line(input, &spec.first_pass)?;
        self.median_pool_line(first, &spec.second_pass)
    }

    /// Selected flat input index per output element of a median node.
    pub fn median_selection(&self, v: Var) -> Option<&[u32]> {
        match &self.node(v).op {
            Op::MedianLine { selected, .. } => Some(selected),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ReduceKind;
    use crate::dcmf::DirectionLabel;

    #[test]
    fn median_rejects_outlier() {
        let mut g = Graph::<f64>::new();
        // one column of five values, center pixel at row 2
        let x = g.constant(Tensor::new([1, 1, 5, 1], vec![1.0, 2.0, 3.0, 4.0, 100.0]).unwrap());
        let spec = DirectionSpec::new(DirectionLabel::AxisVH, 5).unwrap();
        let y = g.median_pool_line(x, &spec.first_pass).unwrap();
        assert_eq!(g.value(y).data()[2], 3.0);
    }

    #[test]
    fn constant_is_unchanged() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::full([2, 3, 6, 7], 0.4));
        for spec in DirectionSpec::standard_set(5).unwrap() {
            let y = g.cmf(x, &spec).unwrap();
            assert_eq!(g.value(y), g.value(x));
        }
    }

    #[test]
    fn even_line_is_a_contract_error() {
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::zeros([1, 1, 4, 4]));
        let err = g.median_pool_line(x, &[(0, 0), (0, 1)]).unwrap_err();
        assert!(matches!(err, Error::Contract { .. }));
    }

    #[test]
    fn ties_pick_the_lowest_flat_index() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full([1, 1, 1, 5], 1.0));
        let y = g
            .median_pool_line(x, &[(0, -2), (0, -1), (0, 0), (0, 1), (0, 2)])
            .unwrap();
        // replicate clamping: pixel 0 samples [0, 0, 0, 1, 2]
        assert_eq!(g.median_selection(y).unwrap(), &[0, 0, 0, 1, 2]);
        let l = g.reduce(y, ReduceKind::Mean).unwrap();
        g.backward(l).unwrap();
        let grad = g.grad(x).unwrap();
        for (a, b) in grad.data().iter().zip([0.6, 0.2, 0.2, 0.0, 0.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn vertical_streak_is_removed_by_axis_vh() {
        let (h, w) = (9, 9);
        let mut t = Tensor::<f32>::zeros([1, 1, h, w]);
        for y in 0..h {
            t.data_mut()[y * w + 4] = 1.0;
        }
        let mut g = Graph::new();
        let x = g.constant(t);
        let spec = DirectionSpec::new(DirectionLabel::AxisVH, 5).unwrap();
        let y = g.cmf(x, &spec).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }
}
