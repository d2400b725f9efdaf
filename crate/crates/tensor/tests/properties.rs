use proptest::prelude::*;
use spikefuse_tensor::{Graph, Padding, Tensor};

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-3.0f64..3.0, n).prop_map(move |d| Tensor::from_vec(shape.clone(), d))
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(x in tensor(vec![3, 6]), c in -50.0f64..50.0) {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let y = g.softmax(xv, 1).unwrap();
        for row in g.value(y).data().chunks(6) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let shifted = g.constant(x.map(|v| v + c));
        let ys = g.softmax(shifted, 1).unwrap();
        for (a, b) in g.value(y).data().iter().zip(g.value(ys).data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    /// ⟨conv(x), y⟩ = ⟨x, convᵀ(y)⟩.
    #[test]
    fn conv_transpose_is_adjoint(
        x in tensor(vec![1, 2, 8, 8]),
        w in tensor(vec![3, 2, 4, 4]),
        y in tensor(vec![1, 3, 4, 4]),
    ) {
        let mut g = Graph::new();
        let (xv, wv, yv) = (g.constant(x.clone()), g.constant(w), g.constant(y.clone()));
        let cx = g.conv2d(xv, wv, 2, Padding::uniform(1)).unwrap();
        let cty = g.conv_transpose2d(yv, wv, 2, Padding::uniform(1), Padding::ZERO).unwrap();
        let lhs = g.value(cx).dot(&y);
        let rhs = x.dot(g.value(cty));
        prop_assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
