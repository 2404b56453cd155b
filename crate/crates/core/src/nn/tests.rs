use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

/// Squared distance between anchor and positive, for exercising the triplet op.
struct PullOnly;

impl TripletObjective for PullOnly {
    fn loss(&self, a: &[f64], p: &[f64], n: &[f64]) -> f64 {
        a.iter().zip(p).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
            - 0.5 * a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>()
    }

    fn gradient(&self, a: &[f64], p: &[f64], n: &[f64]) -> [Vec<f64>; 3] {
        let ga = a
            .iter()
            .zip(p)
            .zip(n)
            .map(|((a, p), n)| 2.0 * (a - p) - (a - n))
            .collect();
        let gp = a.iter().zip(p).map(|(a, p)| -2.0 * (a - p)).collect();
        let gn = a.iter().zip(n).map(|(a, n)| a - n).collect();
        [ga, gp, gn]
    }
}

fn build_loss(store: &ParamStore, enc: &ConvEncoder, head: &Mlp, g: &mut Graph) -> Var {
    let h = enc.encode(g, &[1, 3, 0, 2]);
    let logits = head.forward(g, h);
    let bce = g.bce_with_logits(logits, Mat::from_shape_vec((4, 1), vec![0., 1., 0., 1.]).unwrap());

    let pooled = g.mean_rows(h);
    let cls = Linear::bind(store, "cls").unwrap().forward(g, pooled);
    let ce = g.softmax_cross_entropy(cls, &[2]);

    let sig = g.sigmoid(cls);
    let mse = g.mean_squared_error(sig, Mat::from_elem((1, 3), 0.25));

    let a = g.gather(h, &[0, 1]);
    let p = g.gather(h, &[2, 3]);
    let n = g.gather(h, &[3, 0]);
    let trip = g.triplet(a, p, n, Arc::new(PullOnly));
    let trip = g.mean(trip);

    let s1 = g.add(bce, ce);
    let s2 = g.sub(s1, mse);
    let s3 = g.scale(trip, 0.3);
    g.add(s2, s3)
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let enc = ConvEncoder::init(&mut store, "enc", 5, 4, 2, 6, &mut rng);
    let head = Mlp::init(&mut store, "head", &[4, 3, 1], &mut rng);
    Linear::init(&mut store, "cls", 4, 3, &mut rng);

    let grads = {
        let mut g = Graph::new(&store);
        let loss = build_loss(&store, &enc, &head, &mut g);
        g.backward(loss)
    };

    let eval = |store: &ParamStore| {
        let mut g = Graph::new(store);
        let loss = build_loss(store, &enc, &head, &mut g);
        g.scalar(loss)
    };

    let h = 1e-6;
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let id = store.id(&name).unwrap();
        let (r, c) = store.get(id).dim();
        for i in 0..r {
            for j in 0..c {
                let orig = store.get(id)[[i, j]];
                store.get_mut(id)[[i, j]] = orig + h;
                let up = eval(&store);
                store.get_mut(id)[[i, j]] = orig - h;
                let down = eval(&store);
                store.get_mut(id)[[i, j]] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.get(id)[[i, j]];
                let tol = 1e-6 * (1.0 + numeric.abs());
                assert!(
                    (numeric - analytic).abs() < tol,
                    "{name}[{i},{j}]: numeric {numeric} vs analytic {analytic}"
                );
            }
        }
    }
}

#[test]
fn adam_with_zero_rate_is_inert() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let lin = Linear::init(&mut store, "l", 3, 2, &mut rng);
    let before = store.clone();
    let mut opt = Adam::new(0.0);
    for _ in 0..3 {
        let mut g = Graph::new(&store);
        let x = g.constant(Mat::ones((2, 3)));
        let y = lin.forward(&mut g, x);
        let loss = g.mean(y);
        let grads = g.backward(loss);
        opt.step(&mut store, &grads);
    }
    for ((_, a), (_, b)) in store.iter().zip(before.iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn adam_descends_a_quadratic() {
    let mut store = ParamStore::new();
    let id = store.add("x", Mat::from_elem((1, 1), 3.0));
    let mut opt = Adam::new(0.1);
    for _ in 0..300 {
        let mut g = Graph::new(&store);
        let x = g.param(id);
        let loss = g.mean_squared_error(x, Mat::from_elem((1, 1), -1.0));
        let grads = g.backward(loss);
        opt.step(&mut store, &grads);
    }
    assert!((store.get(id)[[0, 0]] + 1.0).abs() < 1e-2);
}

#[test]
fn log_sum_exp_is_stable() {
    assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
    assert_eq!(sigmoid(-1000.0), 0.0);
    assert_eq!(sigmoid(1000.0), 1.0);
}
