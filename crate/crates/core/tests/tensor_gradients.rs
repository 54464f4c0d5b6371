mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::gradcheck::*;
use uwstereo::tensor::{conv2d_bn_relu, ConvLayer, ParamStore, Tensor};

#[test]
fn conv_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_tensor(&[2, 2, 4, 5], &mut rng, 1.0);
    let k = random_tensor(&[3, 2, 3, 3], &mut rng, 1.0);
    let b = random_tensor(&[3], &mut rng, 1.0);
    let err = relative_error(|g, v| g.conv2d(v[0], v[1], v[2]), &[x, k, b], 1);
    assert!(err < TOLERANCE, "{err}");
}

#[test]
fn batch_norm_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_tensor(&[3, 2, 3, 3], &mut rng, 2.0);
    let gamma = random_tensor(&[2], &mut rng, 1.5);
    let beta = random_tensor(&[2], &mut rng, 1.0);
    let err = relative_error(|g, v| Ok(g.batch_norm(v[0], v[1], v[2], 1e-5)?.0), &[x, gamma, beta], 2);
    assert!(err < TOLERANCE, "{err}");
}

#[test]
fn small_network_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let l1 = ConvLayer::new(&mut store, "l1", 1, 2, &mut rng);
    let x = loop {
        let x = random_tensor(&[2, 1, 4, 4], &mut rng, 1.0);
        // pre-activations must sit clear of the ReLU kink
        let mut g = uwstereo::tensor::Graph::new();
        let xv = g.input(x.clone()).unwrap();
        let mut s = store.clone();
        let mut plain = l1;
        plain.relu = false;
        let y = conv2d_bn_relu(&mut g, &mut s, &plain, xv, true).unwrap();
        if clear_of_zero(g.value(y)) {
            break x;
        }
    };
    let k = store.get(l1.kernel).clone();
    let err = relative_error(
        |g, v| {
            let b = g.input(Tensor::zeros(&[2]))?;
            let c = g.conv2d(v[0], v[1], b)?;
            let ones = g.input(Tensor::full(&[2], 1.0))?;
            let zeros = g.input(Tensor::zeros(&[2]))?;
            let (n, _, _) = g.batch_norm(c, ones, zeros, 1e-5)?;
            let r = g.relu(n)?;
            let p = g.maxpool2x2(r)?;
            g.upsample2x(p)
        },
        &[x, k],
        3,
    );
    // maxpool ties between zeros from the ReLU are measure-zero only for
    // strictly positive blocks; the check tolerates them because both
    // analytic and numeric gradients vanish there.
    assert!(err < TOLERANCE, "{err}");
}

#[test]
fn siamese_hinge_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let feats = random_tensor(&[6, 2, 2, 2], &mut rng, 1.0);
    let w = random_tensor(&[8], &mut rng, 1.0);
    let err = relative_error(
        |g, v| {
            let a = g.slice_samples(v[0], 0, 2)?;
            let p = g.slice_samples(v[0], 2, 2)?;
            let n = g.slice_samples(v[0], 4, 2)?;
            let sp = g.weighted_inner(a, p, v[1])?;
            let sn = g.weighted_inner(a, n, v[1])?;
            // a large margin keeps every pair active, away from the kink
            g.hinge(sp, sn, 50.0)
        },
        &[feats, w],
        4,
    );
    assert!(err < TOLERANCE, "{err}");
}
