use cuedepth_autodiff::{Graph, Reduction, Tensor, TensorError};

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn linear_identity_and_bias_only() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(&[&[1.0, 2.0]]));
    let eye = g.constant(Tensor::matrix(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let zero_b = g.constant(Tensor::vector(vec![0.0, 0.0]));
    let y = g.linear(x, eye, zero_b).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0]);
    assert_eq!(g.shape(y), &[1, 2]);

    let zero_w = g.constant(Tensor::zeros(&[2, 2]));
    let b = g.constant(Tensor::vector(vec![3.0, 4.0]));
    let y = g.linear(x, zero_w, b).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 4.0]);
}

#[test]
fn linear_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 3]));
    let w = g.constant(Tensor::zeros(&[2, 2]));
    let b = g.constant(Tensor::zeros(&[2]));
    let err = g.linear(x, w, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
}

#[test]
fn conv_identity_1x1() {
    let mut g = Graph::new();
    let data: Vec<f64> = (0..16).map(|v| v as f64 * 0.5 - 3.0).collect();
    let x = g.constant(Tensor::new(vec![1, 1, 4, 4], data.clone()).unwrap());
    let k = g.constant(Tensor::ones(&[1, 1, 1, 1]));
    let y = g.conv2d(x, k, None, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), data.as_slice());
}

#[test]
fn conv_averaging_kernel_on_constant_field() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 1, 6, 6], 5.0));
    let k = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0));
    let y = g.conv2d(x, k, None, 1, 1).unwrap();
    let v = g.value(y);
    assert_eq!(v.shape(), &[1, 1, 6, 6]);
    for r in 1..5 {
        for c in 1..5 {
            assert!((v.at(&[0, 0, r, c]) - 5.0).abs() < 1e-12);
        }
    }
    // Zero padding pulls the corner down to 4/9 of the field.
    assert!((v.at(&[0, 0, 0, 0]) - 5.0 * 4.0 / 9.0).abs() < 1e-12);
}

#[test]
fn conv_stride_two_and_bias() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[2, 3, 8, 8]));
    let k = g.constant(Tensor::ones(&[4, 3, 3, 3]));
    let b = g.constant(Tensor::vector(vec![0.0, 1.0, 2.0, 3.0]));
    let y = g.conv2d(x, k, Some(b), 2, 1).unwrap();
    assert_eq!(g.shape(y), &[2, 4, 4, 4]);
    // Interior window sees 27 ones.
    assert_eq!(g.value(y).at(&[1, 2, 2, 2]), 29.0);
}

#[test]
fn conv_rejects_bad_geometry() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::ones(&[1, 1, 8, 8]));
    let k5 = g.constant(Tensor::ones(&[1, 1, 5, 5]));
    assert!(matches!(
        g.conv2d(x, k5, None, 1, 2),
        Err(TensorError::Dimension { .. })
    ));
    let k1 = g.constant(Tensor::ones(&[1, 1, 1, 1]));
    assert!(matches!(
        g.conv2d(x, k1, None, 2, 0),
        Err(TensorError::Dimension { .. })
    ));
    let wrong_c = g.constant(Tensor::ones(&[1, 2, 3, 3]));
    assert!(matches!(
        g.conv2d(x, wrong_c, None, 1, 1),
        Err(TensorError::Shape { .. })
    ));
}

#[test]
fn relu_log_values_and_relu_subgradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![-1.0, 0.0, 2.0]));
    let y = g.relu(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    let s = g.sum(y).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);

    let one = g.constant(Tensor::vector(vec![1.0]));
    let l = g.log(one).unwrap();
    assert_eq!(g.value(l).data(), &[0.0]);
}

#[test]
fn log_of_non_positive_reports_index() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![1.0, 2.0, -0.5]));
    match g.log(x) {
        Err(TensorError::Domain { index, value, .. }) => {
            assert_eq!(index, 2);
            assert_eq!(value, -0.5);
        }
        other => panic!("expected domain error, got {other:?}"),
    }
}

#[test]
fn binary_scalar_broadcast_only() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let s = g.constant(Tensor::scalar(2.0));
    let y = g.mul(a, s).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, 4.0, 6.0]);
    let y = g.div(s, a).unwrap();
    assert!(close(g.value(y).data(), &[2.0, 1.0, 2.0 / 3.0], 1e-15));
    let b = g.constant(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(g.add(a, b), Err(TensorError::Shape { .. })));
    let m = g.constant(Tensor::zeros(&[3, 1]));
    assert!(
        g.sub(a, m).is_err(),
        "no broadcasting between [3] and [3, 1]"
    );
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(&[&[0.0, 0.0]]));
    let y = g.softmax(x, 1).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    let x = g.constant(Tensor::matrix(&[&[1000.0, 1000.0]]));
    let y = g.softmax(x, 1).unwrap();
    assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    assert!(g.softmax(x, 2).is_err());
}

#[test]
fn reductions() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let m = g.mean(x).unwrap();
    assert_eq!(g.value(m).item(), 2.0);
    let m = g
        .reduce(x, Reduction::Mean, Some(&[true, false, true]))
        .unwrap();
    assert_eq!(g.value(m).item(), 2.0);
    let ones = g.constant(Tensor::ones(&[2, 3]));
    let s = g.sum(ones).unwrap();
    assert_eq!(g.value(s).item(), 6.0);
    assert!(matches!(
        g.reduce(x, Reduction::Mean, Some(&[false, false, false])),
        Err(TensorError::Degenerate { .. })
    ));
    assert!(g.reduce(x, Reduction::Sum, Some(&[true])).is_err());
}

#[test]
fn backward_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, -2.0, 3.0, 0.5]));
    let m = g.mean(x).unwrap();
    let grads = g.backward(m).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.25; 4]);

    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![3.0]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
}

#[test]
fn backward_on_non_scalar_is_contract_error() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]));
    let y = g.relu(x).unwrap();
    assert!(matches!(g.backward(y), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![1.0, 2.0]));
    let c = g.constant(Tensor::vector(vec![5.0, 7.0]));
    let y = g.mul(x, c).unwrap();
    let s = g.sum(y).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[5.0, 7.0]);
    assert!(grads.get(c).is_none());
}

#[test]
fn bin_expectation_one_hot_and_uniform() {
    let mut g = Graph::new();
    let centers = g.constant(Tensor::matrix(&[&[1.0, 2.0, 4.0]]));
    let mut p = vec![0.0; 3 * 2];
    p[2] = 1.0; // bin 1 at pixel 0
    p[5] = 1.0; // bin 2 at pixel 1
    let probs = g.constant(Tensor::new(vec![1, 3, 1, 2], p).unwrap());
    let d = g.bin_expectation(probs, centers).unwrap();
    assert_eq!(g.value(d).data(), &[2.0, 4.0]);
    let uniform = g.constant(Tensor::full(&[1, 3, 1, 2], 1.0 / 3.0));
    let d = g.bin_expectation(uniform, centers).unwrap();
    assert!(close(g.value(d).data(), &[7.0 / 3.0; 2], 1e-15));
}

#[test]
fn chamfer_hand_evaluation() {
    let mut g = Graph::new();
    let c = g.param(Tensor::matrix(&[&[1.0, 3.0]]));
    let d = g.chamfer(c, &[vec![1.0]]).unwrap();
    // targets -> nearest center: 0; centers -> nearest target: (0 + 4) / 2.
    assert_eq!(g.value(d).data(), &[2.0]);
    let s = g.sum(d).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(c).unwrap().data(), &[0.0, 2.0]);
}

#[test]
fn cumsum_concat_upsample_spatial_mean() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]));
    let c = g.cumsum(x, 1).unwrap();
    assert_eq!(g.value(c).data(), &[1.0, 3.0, 6.0, 4.0, 9.0, 15.0]);
    let c0 = g.cumsum(x, 0).unwrap();
    assert_eq!(g.value(c0).data(), &[1.0, 2.0, 3.0, 5.0, 7.0, 9.0]);

    let a = g.constant(Tensor::new(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
    let b = g.constant(Tensor::new(vec![1, 2, 1, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap());
    let cat = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.shape(cat), &[1, 3, 1, 2]);
    assert_eq!(g.value(cat).data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);

    let up = g.upsample2x(a).unwrap();
    assert_eq!(g.shape(up), &[1, 1, 2, 4]);
    assert_eq!(
        g.value(up).data(),
        &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]
    );

    let m = g.spatial_mean(b).unwrap();
    assert_eq!(g.value(m).data(), &[3.5, 5.5]);
}

#[test]
fn item_mean_masks_per_item() {
    let mut g = Graph::new();
    let x = g.param(Tensor::matrix(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]));
    let mask = [true, true, false, false, false, true];
    let m = g.item_mean(x, Some(&mask)).unwrap();
    assert_eq!(g.value(m).data(), &[1.5, 6.0]);
    let bad = [true, true, true, false, false, false];
    assert!(g.item_mean(x, Some(&bad)).is_err());
}

#[test]
fn graphs_are_independent_across_threads() {
    let run = |seed: f64| {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![seed, 2.0 * seed]));
        let y = g.exp(x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap().get(x).unwrap().clone()
    };
    let handles: Vec<_> = (0..4)
        .map(|i| std::thread::spawn(move || run(i as f64 * 0.1)))
        .collect();
    for (i, h) in handles.into_iter().enumerate() {
        assert_eq!(h.join().unwrap(), run(i as f64 * 0.1));
    }
}

/// Direct evaluation of a zero-padded cross-correlation.
fn naive_conv(x: &Tensor, k: &Tensor, stride: usize, pad: usize, oh: usize, ow: usize) -> Vec<f64> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let mut out = vec![0.0; b * f * oh * ow];
    for n in 0..b {
        for o in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (oy * stride + i) as isize - pad as isize;
                                let ix = (ox * stride + j) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x.data()
                                        [((n * c + ci) * h + iy as usize) * w + ix as usize]
                                        * k.data()[((o * c + ci) * kh + i) * kw + j];
                                }
                            }
                        }
                    }
                    out[((n * f + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

mod conv_oracle {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn matches_direct_evaluation(
            b in 1usize..3, c in 1usize..4, f in 1usize..4,
            h in 1usize..9, w in 1usize..9,
            k3 in any::<bool>(), stride in 1usize..3, pad in 0usize..2,
            seed in any::<u64>(),
        ) {
            let ks = if k3 { 3 } else { 1 };
            let mut state = seed | 1;
            let mut next = move || {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state % 2001) as f64 / 1000.0 - 1.0
            };
            let x = Tensor::new(vec![b, c, h, w], (0..b * c * h * w).map(|_| next()).collect()).unwrap();
            let k = Tensor::new(vec![f, c, ks, ks], (0..f * c * ks * ks).map(|_| next()).collect()).unwrap();
            let mut g = Graph::new();
            let xv = g.param(x.clone());
            let kv = g.constant(k.clone());
            let Ok(y) = g.conv2d(xv, kv, None, stride, pad) else {
                return Ok(());
            };
            let (oh, ow) = (g.shape(y)[2], g.shape(y)[3]);
            let want = naive_conv(&x, &k, stride, pad, oh, ow);
            prop_assert!(close(g.value(y).data(), &want, 1e-12));

            // The input gradient of sum(y * r) is the adjoint of the same map.
            let r = Tensor::new(g.shape(y).to_vec(), (0..want.len()).map(|_| next()).collect()).unwrap();
            let rv = g.constant(r.clone());
            let yr = g.mul(y, rv).unwrap();
            let loss = g.sum(yr).unwrap();
            let grads = g.backward(loss).unwrap();
            let gx = grads.get(xv).unwrap();
            let mut basis = vec![0.0; x.len()];
            for idx in 0..x.len() {
                basis[idx] = 1.0;
                let e = Tensor::new(x.shape().to_vec(), basis.clone()).unwrap();
                let col = naive_conv(&e, &k, stride, pad, oh, ow);
                let expect: f64 = col.iter().zip(r.data()).map(|(a, b)| a * b).sum();
                prop_assert!((gx.data()[idx] - expect).abs() < 1e-12);
                basis[idx] = 0.0;
            }
        }
    }
}
