use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Projects `out` onto a fixed random direction so every coordinate matters.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var, Error> {
    let r = Array::uniform(tape.value(out).shape(), 1.0, &mut rng(seed));
    let r = tape.constant(r);
    let m = tape.mul(out, r)?;
    tape.sum_all(m)
}

fn check<F>(store: &ParamStore, f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, Error>,
{
    let report = check_gradients(
        store,
        |tape, s| {
            let vars: Vec<Var> = s.ids().map(|id| tape.param(s, id)).collect();
            let out = f(tape, &vars)?;
            project(tape, out, 99)
        },
        H,
    )
    .unwrap();
    assert!(report.passes(TOL), "{report:?}");
}

fn store_of(shapes: &[&[usize]], seed: u64) -> ParamStore {
    let mut r = rng(seed);
    let mut s = ParamStore::new();
    for (i, sh) in shapes.iter().enumerate() {
        s.add(format!("p{i}"), Array::uniform(sh, 1.0, &mut r));
    }
    s
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut t = Tape::new();
    let z = t.constant(Array::zeros(&[4]));
    let s = t.softmax(z).unwrap();
    for &p in t.value(s).data() {
        assert!((p - 0.25).abs() < 1e-12);
    }
}

#[test]
fn relu_values() {
    let mut t = Tape::new();
    let x = t.constant(Array::new(&[2], vec![-1.0, 2.0]).unwrap());
    let y = t.relu(x).unwrap();
    assert_eq!(t.value(y).data(), &[0.0, 2.0]);
}

#[test]
fn cross_entropy_of_uniform_logits() {
    for label in 0..4 {
        let mut t = Tape::new();
        let l = t.constant(Array::full(&[4], 0.7));
        let ce = t.cross_entropy(l, label).unwrap();
        assert!((t.value(ce).item() - 4f64.ln()).abs() < 1e-12);
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut t = Tape::new();
    let x = t.constant(Array::uniform(&[7, 9], 5.0, &mut rng(1)));
    let s = t.softmax(x).unwrap();
    for row in t.value(s).data().chunks(9) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn layer_norm_statistics() {
    let mut t = Tape::new();
    let x = t.constant(Array::uniform(&[6, 16], 3.0, &mut rng(2)));
    let y = t.layer_norm(x, 1e-12).unwrap();
    for row in t.value(y).data().chunks(16) {
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
        assert!(mean.abs() <= 1e-9);
        assert!((var - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn temporal_conv_identity_kernel() {
    let c = 6;
    let mut w = Array::zeros(&[c, 1, 1]);
    w.data_mut().fill(1.0);
    let mut t = Tape::new();
    let xa = Array::uniform(&[5, 3, c], 1.0, &mut rng(3));
    let x = t.constant(xa.clone());
    let wv = t.constant(w);
    let y = t.temporal_conv(x, wv, c, 1).unwrap();
    assert_eq!(t.value(y), &xa);
}

#[test]
fn temporal_conv_stride_shape() {
    let mut t = Tape::new();
    let x = t.constant(Array::zeros(&[7, 2, 4]));
    let w = t.constant(Array::zeros(&[4, 2, 5]));
    let y = t.temporal_conv(x, w, 2, 2).unwrap();
    assert_eq!(t.value(y).shape(), &[4, 2, 4]);
    assert!(t.temporal_conv(x, w, 3, 1).is_err());
}

#[test]
fn shape_errors_name_the_primitive() {
    let mut t = Tape::new();
    let a = t.constant(Array::zeros(&[2, 3]));
    let b = t.constant(Array::zeros(&[2, 3]));
    match t.matmul(a, b) {
        Err(Error::Shape { op, .. }) => assert_eq!(op, "matmul"),
        other => panic!("unexpected {other:?}"),
    }
    let v = t.constant(Array::zeros(&[2]));
    match t.add_broadcast(a, v) {
        Err(Error::Shape { op, .. }) => assert_eq!(op, "add_broadcast"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn non_finite_is_an_error() {
    let mut t = Tape::new();
    let a = t.constant(Array::full(&[2], f64::MAX));
    assert!(matches!(
        t.scalar_mul(a, 10.0),
        Err(Error::NonFinite { op: "scalar_mul" })
    ));
}

#[test]
fn grad_matmul() {
    check(&store_of(&[&[3, 4], &[4, 2]], 10), |t, v| t.matmul(v[0], v[1]));
}

#[test]
fn grad_batched_matmul() {
    check(&store_of(&[&[2, 3, 4], &[2, 4, 5]], 11), |t, v| {
        t.batched_matmul(v[0], v[1])
    });
}

#[test]
fn grad_elementwise() {
    check(&store_of(&[&[3, 4], &[3, 4]], 12), |t, v| {
        let s = t.add(v[0], v[1])?;
        let p = t.mul(s, v[1])?;
        let th = t.tanh(p)?;
        t.scalar_mul(th, -1.7)
    });
}

#[test]
fn grad_broadcasts_and_scale() {
    check(&store_of(&[&[2, 3, 4], &[3, 4], &[4], &[]], 13), |t, v| {
        let a = t.add_broadcast(v[0], v[1])?;
        let m = t.mul_broadcast(a, v[2])?;
        t.scale(m, v[3])
    });
}

#[test]
fn grad_relu() {
    check(&store_of(&[&[5, 3]], 14), |t, v| t.relu(v[0]));
}

#[test]
fn grad_softmax_and_layer_norm() {
    check(&store_of(&[&[4, 6]], 15), |t, v| {
        let s = t.softmax(v[0])?;
        let l = t.layer_norm(v[0], 1e-9)?;
        let s2 = t.scalar_mul(s, 3.0)?;
        t.add(s2, l)
    });
}

#[test]
fn grad_mean_axis() {
    for axis in 0..3 {
        check(&store_of(&[&[3, 4, 2]], 16), move |t, v| t.mean_axis(v[0], axis));
    }
}

#[test]
fn grad_temporal_conv() {
    for stride in [1, 2, 3] {
        check(&store_of(&[&[7, 3, 4], &[4, 2, 5]], 17), move |t, v| {
            t.temporal_conv(v[0], v[1], 2, stride)
        });
    }
}

#[test]
fn grad_gather_with_repeats() {
    let idx: Arc<[usize]> = vec![0, 2, 2, 1, 2].into();
    check(&store_of(&[&[3, 2, 2]], 18), move |t, v| t.gather(v[0], idx.clone()));
}

#[test]
fn grad_reshape_permute() {
    check(&store_of(&[&[2, 3, 4]], 19), |t, v| {
        let p = t.permute(v[0], &[2, 0, 1])?;
        let r = t.reshape(p, &[8, 3])?;
        let r = t.tanh(r)?;
        t.reshape(r, &[4, 2, 3])
    });
}

#[test]
fn grad_pairwise_sub() {
    check(&store_of(&[&[3, 2], &[4, 2]], 20), |t, v| {
        let d = t.pairwise_sub(v[0], v[1])?;
        t.tanh(d)
    });
}

#[test]
fn grad_node_mixing() {
    check(&store_of(&[&[3, 3], &[2, 3, 4], &[4, 3, 3]], 21), |t, v| {
        let a = t.node_mix(v[0], v[1])?;
        let b = t.channel_node_mix(v[2], v[1])?;
        t.add(a, b)
    });
}

#[test]
fn grad_cross_entropy() {
    let store = store_of(&[&[5]], 22);
    let report = check_gradients(
        &store,
        |t, s| {
            let l = t.param(s, ParamId(0));
            t.cross_entropy(l, 3)
        },
        H,
    )
    .unwrap();
    assert!(report.passes(TOL), "{report:?}");
}

#[test]
fn gradients_accumulate_for_shared_params() {
    // f(x) = x·x + 3x via two uses of the same bound parameter.
    let mut store = ParamStore::new();
    let id = store.add("x", Array::scalar(2.0));
    let mut t = Tape::new();
    let x = t.param(&store, id);
    let x2 = t.param(&store, id);
    assert_eq!(x, x2);
    let sq = t.mul(x, x2).unwrap();
    let lin = t.scalar_mul(x, 3.0).unwrap();
    let f = t.add(sq, lin).unwrap();
    let g = t.backward(f).unwrap();
    g.accumulate_into(&mut store, 1.0);
    g.accumulate_into(&mut store, 0.5);
    assert!((store.get(id).grad.item() - 1.5 * 7.0).abs() < 1e-12);
    store.zero_grad();
    assert_eq!(store.get(id).grad.item(), 0.0);
}

#[test]
fn constants_receive_no_gradient() {
    let mut t = Tape::new();
    let c = t.constant(Array::scalar(2.0));
    let x = t.input(Array::scalar(5.0));
    let y = t.mul(c, x).unwrap();
    let g = t.backward(y).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.get(x).unwrap().item(), 2.0);
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let s = store_of(&[&[4, 5], &[5, 3]], 7);
        let mut t = Tape::new();
        let a = t.param(&s, ParamId(0));
        let b = t.param(&s, ParamId(1));
        let m = t.matmul(a, b).unwrap();
        let y = t.softmax(m).unwrap();
        t.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
