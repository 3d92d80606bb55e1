//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use endemic::checkpoint::save_checkpoint;
use endemic::coattn::{coattend, coattend_backward, coattend_traced, CoAttentionParams};
use endemic::config::{parse_override, resolve, ExperimentConfig};
use endemic::datamodel::{Label, Tweet, UserProfile};
use endemic::encoder::{HashEncoder, SentenceEncoder};
use endemic::evalharness::{evaluate, mask_time_variant, report, Confusion, EvalMode, MetricsReport};
use endemic::fusion::{encode_context_backward, encode_context_joined, head_backward, head_forward, FusionParams, HeadLayout, Mode};
use endemic::gradcheck::{central_difference, check_param_grad, relative_error};
use endemic::hetgraph::{
    build_graph, collect_pairs, node_features, sample_walk, train_unsupervised, unsupervised_loss, embed_nodes,
    GraphOptions, HeteroGraph, SageParams, SageTrainConfig, NODE_FEATURE_DIM,
};
use endemic::knowledge::{select_evidence, EvidenceDocument, EvidenceStore, Ranking, SelectionParams};
use endemic::math::seeded_rng;
use endemic::model::{EndemicModel, ModelDims, ModelInput, PerturbScope, Perturbable, ScopedModel};
use endemic::params::ParamSet;
use endemic::pipeline::{make_encoder, prepare, train_model, PreparedExperiment};
use endemic::synth::{generate, SynthParams, BASE_TIME};
use endemic::textenc::BiLstmParams;
use endemic::training::{at_perturbation, kl_divergence, vat_direction, vat_loss, LossConfig};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn rand_vector(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0))
}

// ---------------------------------------------------------------- 1

struct ScalarCoAttn {
    c: Vec<Vec<f64>>,
    h_a: Vec<Vec<f64>>,
    h_b: Vec<Vec<f64>>,
    a_a: Vec<f64>,
    a_b: Vec<f64>,
    a_hat: Vec<f64>,
    b_hat: Vec<f64>,
}

fn scalar_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Loop-by-loop co-attention: C[y][x] = tanh(Σ_ij dA[x][i] Wb[i][j] dB[y][j]).
fn scalar_coattention(da: &Array2<f64>, db: &Array2<f64>, p: &CoAttentionParams) -> ScalarCoAttn {
    let (x_n, z) = da.dim();
    let y_n = db.nrows();
    let k = p.proj_a.nrows();
    let mut c = vec![vec![0.0; x_n]; y_n];
    for y in 0..y_n {
        for x in 0..x_n {
            let mut s = 0.0;
            for i in 0..z {
                for j in 0..z {
                    s += da[[x, i]] * p.affinity[[i, j]] * db[[y, j]];
                }
            }
            c[y][x] = s.tanh();
        }
    }
    let mut pa = vec![vec![0.0; x_n]; k];
    let mut pb = vec![vec![0.0; y_n]; k];
    for r in 0..k {
        for x in 0..x_n {
            pa[r][x] = (0..z).map(|i| p.proj_a[[r, i]] * da[[x, i]]).sum();
        }
        for y in 0..y_n {
            pb[r][y] = (0..z).map(|i| p.proj_b[[r, i]] * db[[y, i]]).sum();
        }
    }
    let mut h_a = vec![vec![0.0; x_n]; k];
    let mut h_b = vec![vec![0.0; y_n]; k];
    for r in 0..k {
        for x in 0..x_n {
            let s: f64 = (0..y_n).map(|y| pb[r][y] * c[y][x]).sum();
            h_a[r][x] = (pa[r][x] + s).tanh();
        }
        for y in 0..y_n {
            let s: f64 = (0..x_n).map(|x| pa[r][x] * c[y][x]).sum();
            h_b[r][y] = (pb[r][y] + s).tanh();
        }
    }
    let sa: Vec<f64> = (0..x_n).map(|x| (0..k).map(|r| p.score_a[r] * h_a[r][x]).sum()).collect();
    let sb: Vec<f64> = (0..y_n).map(|y| (0..k).map(|r| p.score_b[r] * h_b[r][y]).sum()).collect();
    let a_a = scalar_softmax(&sa);
    let a_b = scalar_softmax(&sb);
    let a_hat = (0..z).map(|i| (0..x_n).map(|x| a_a[x] * da[[x, i]]).sum()).collect();
    let b_hat = (0..z).map(|i| (0..y_n).map(|y| a_b[y] * db[[y, i]]).sum()).collect();
    ScalarCoAttn {
        c,
        h_a,
        h_b,
        a_a,
        a_b,
        a_hat,
        b_hat,
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = seeded_rng(&[1, seed]);
        let x = rng.random_range(1..=5);
        let y = rng.random_range(1..=5);
        let z = rng.random_range(1..=8);
        let k = rng.random_range(1..=4);
        let p = CoAttentionParams::new("ek_tt", z, k, &mut rng);
        let da = rand_matrix(&mut rng, x, z);
        let db = rand_matrix(&mut rng, y, z);
        let out = coattend(&da, &db, &p).map_err(|e| e.to_string())?;
        let o = scalar_coattention(&da, &db, &p);
        let mut diff = |a: f64, b: f64| worst = worst.max((a - b).abs());
        for yy in 0..y {
            for xx in 0..x {
                diff(out.affinity[[yy, xx]], o.c[yy][xx]);
            }
        }
        for r in 0..k {
            (0..x).for_each(|xx| diff(out.h_a[[r, xx]], o.h_a[r][xx]));
            (0..y).for_each(|yy| diff(out.h_b[[r, yy]], o.h_b[r][yy]));
        }
        (0..x).for_each(|xx| diff(out.attn_a[xx], o.a_a[xx]));
        (0..y).for_each(|yy| diff(out.attn_b[yy], o.a_b[yy]));
        (0..z).for_each(|i| diff(out.a_hat[i], o.a_hat[i]));
        (0..z).for_each(|i| diff(out.b_hat[i], o.b_hat[i]));
        check((out.attn_a.sum() - 1.0).abs() <= 1e-6 && (out.attn_b.sum() - 1.0).abs() <= 1e-6, || {
            format!("seed {seed}: attention does not sum to 1")
        })?;
    }
    let elapsed = start.elapsed();
    check(worst <= 1e-9, || format!("max deviation {worst:e} > 1e-9"))?;
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("100 instances, max deviation {worst:.1e}, {elapsed:.2?}"))
}

// ---------------------------------------------------------------- 2

const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-3;
const GRAD_INSTANCES: u64 = 20;

fn bilstm_instance(seed: u64) -> f64 {
    let mut rng = seeded_rng(&[2, 1, seed]);
    let (vocab, e, k, n) = (6, rng.random_range(2..=4), 2 * rng.random_range(1..=3), rng.random_range(1..=5));
    let mut p = BiLstmParams::new(vocab, e, k, &mut rng).unwrap();
    // Non-zero biases exercise every gate term.
    p.forward.b = rand_vector(&mut rng, p.forward.b.len());
    p.backward.b = rand_vector(&mut rng, p.backward.b.len());
    let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..vocab)).collect();
    let r = rand_matrix(&mut rng, n, k);
    let loss = |q: &BiLstmParams| (q.encode_embedded(&q.embed(&ids)).0 * &r).sum();
    let mut grads = p.zeros_like();
    let inputs = p.embed(&ids);
    let (_, trace) = p.encode_embedded(&inputs);
    let d_in = p.backward_embedded(&inputs, &trace, &r, &mut grads);
    BiLstmParams::scatter_embedding_grad(&mut grads, &ids, &d_in);
    check_param_grad(&p, &grads, loss, H)
}

fn coattn_instance(name: &'static str, seed: u64) -> f64 {
    let mut rng = seeded_rng(&[2, 2, seed, name.bytes().fold(0u64, |a, b| a * 31 + u64::from(b))]);
    let (x, y, z, k) = (rng.random_range(1..=5), rng.random_range(1..=5), rng.random_range(1..=6), rng.random_range(1..=4));
    let p = CoAttentionParams::new(name, z, k, &mut rng);
    let da = rand_matrix(&mut rng, x, z);
    let db = rand_matrix(&mut rng, y, z);
    let (ra, rb) = (rand_vector(&mut rng, z), rand_vector(&mut rng, z));
    let loss_at = |q: &CoAttentionParams, a: &Array2<f64>, b: &Array2<f64>| {
        let o = coattend(a, b, q).unwrap();
        o.a_hat.dot(&ra) + o.b_hat.dot(&rb)
    };
    let (out, trace) = coattend_traced(&da, &db, &p).unwrap();
    let mut grads = CoAttentionParams::zeros(name, z, k);
    let back = coattend_backward(&da, &db, &p, &out, &trace, &ra, &rb, &mut grads);
    let e_params = check_param_grad(&p, &grads, |q| loss_at(q, &da, &db), H);
    let num_a = central_difference(
        |v| loss_at(&p, &Array2::from_shape_vec((x, z), v.to_vec()).unwrap(), &db),
        da.as_slice().unwrap(),
        H,
    );
    let num_b = central_difference(
        |v| loss_at(&p, &da, &Array2::from_shape_vec((y, z), v.to_vec()).unwrap()),
        db.as_slice().unwrap(),
        H,
    );
    e_params
        .max(relative_error(&back.d_a.iter().copied().collect::<Vec<_>>(), &num_a))
        .max(relative_error(&back.d_b.iter().copied().collect::<Vec<_>>(), &num_b))
}

fn ffn_instance(seed: u64) -> f64 {
    let mut rng = seeded_rng(&[2, 3, seed]);
    let n_feat = rng.random_range(1..=8);
    let layout = HeadLayout { k: 2, g: 2, c: rng.random_range(1..=5) };
    let mut p = FusionParams::new(n_feat, layout, 0.2, &mut rng).unwrap();
    p.context_b = rand_vector(&mut rng, layout.c);
    let x = rand_vector(&mut rng, n_feat);
    let r = rand_vector(&mut rng, layout.c);
    let loss = |q: &FusionParams| encode_context_joined(&x, q).unwrap().dot(&r);
    let d_tu = encode_context_joined(&x, &p).unwrap();
    let mut grads = p.zeros_like();
    let d_x = encode_context_backward(&x, &d_tu, &r, &p, &mut grads);
    let num_x = central_difference(
        |v| encode_context_joined(&Array1::from(v.to_vec()), &p).unwrap().dot(&r),
        x.as_slice().unwrap(),
        H,
    );
    check_param_grad(&p, &grads, loss, H).max(relative_error(d_x.as_slice().unwrap(), &num_x))
}

fn head_instance(seed: u64) -> f64 {
    let mut rng = seeded_rng(&[2, 4, seed]);
    let layout = HeadLayout {
        k: rng.random_range(1..=4),
        g: rng.random_range(1..=4),
        c: rng.random_range(1..=4),
    };
    let mode = if seed % 2 == 0 { Mode::Eval } else { Mode::Train };
    let p = FusionParams::new(3, layout, 0.2, &mut rng).unwrap();
    let parts: Vec<Array1<f64>> = [layout.k, layout.k, layout.g, layout.g, layout.c]
        .iter()
        .map(|&w| rand_vector(&mut rng, w))
        .collect();
    let y = (seed % 2) as usize;
    let mask_seed = seed + 1000;
    let forward = |q: &FusionParams, parts: &[Array1<f64>]| {
        let arr = [&parts[0], &parts[1], &parts[2], &parts[3], &parts[4]];
        head_forward(arr, layout, q, mode, &mut seeded_rng(&[mask_seed])).unwrap()
    };
    let loss = |q: &FusionParams, parts: &[Array1<f64>]| -forward(q, parts).probs[y].ln();
    let trace = forward(&p, &parts);
    let mut d = trace.probs;
    d[y] -= 1.0;
    let mut grads = p.zeros_like();
    let d_parts = head_backward(&trace, d, layout, &p, &mut grads);
    let flat: Vec<f64> = parts.iter().flat_map(|v| v.iter().copied()).collect();
    let widths = [layout.k, layout.k, layout.g, layout.g, layout.c];
    let split = |v: &[f64]| {
        let mut out = Vec::new();
        let mut o = 0;
        for w in widths {
            out.push(Array1::from(v[o..o + w].to_vec()));
            o += w;
        }
        out
    };
    let num = central_difference(|v| loss(&p, &split(v)), &flat, H);
    let analytic: Vec<f64> = d_parts.iter().flat_map(|v| v.iter().copied()).collect();
    check_param_grad(&p, &grads, |q| loss(q, &parts), H).max(relative_error(&analytic, &num))
}

fn small_graph(rng: &mut ChaCha8Rng, n_users: usize, n_tweets: usize, n_follows: usize) -> HeteroGraph {
    let users: Vec<UserProfile> = (0..n_users)
        .map(|u| UserProfile {
            id: format!("u{u}"),
            followers: 0,
            followees: 0,
            verified: false,
            tweet_count: 0,
            user_features: vec![],
        })
        .collect();
    let tweets: Vec<Tweet> = (0..n_tweets)
        .map(|t| Tweet {
            id: format!("t{t}"),
            text: String::new(),
            user_id: format!("u{}", rng.random_range(0..n_users)),
            created_at: 1,
            retweet_of: (t > 0 && rng.random_bool(0.4)).then(|| format!("t{}", rng.random_range(0..t))),
            tweet_features: vec![],
            label: Label::Unlabelled,
        })
        .collect();
    let follows: Vec<(String, String)> = (0..n_follows)
        .map(|_| (format!("u{}", rng.random_range(0..n_users)), format!("u{}", rng.random_range(0..n_users))))
        .collect();
    build_graph(&tweets, &users, &follows, GraphOptions::default()).unwrap()
}

fn sage_instance(seed: u64) -> f64 {
    let mut rng = seeded_rng(&[2, 5, seed]);
    let g = small_graph(&mut rng, 4, 5, 5);
    let mut feats = node_features(&g);
    feats += &(rand_matrix(&mut rng, g.num_nodes(), NODE_FEATURE_DIM) * 0.3);
    let layers = rng.random_range(1..=2);
    let mut dims = vec![NODE_FEATURE_DIM];
    dims.extend((0..layers).map(|_| rng.random_range(2..=4)));
    let p = SageParams::new(&dims, &mut rng).unwrap();
    let cfg = SageTrainConfig {
        seed,
        negatives: 2,
        ..SageTrainConfig::default()
    };
    let pairs = collect_pairs(&g, &cfg, 0).unwrap();
    let (_, grads) = unsupervised_loss(&g, &feats, &p, &pairs).unwrap();
    check_param_grad(&p, &grads, |q| unsupervised_loss(&g, &feats, q, &pairs).unwrap().0, H)
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let blocks: Vec<(&str, Box<dyn Fn(u64) -> f64>)> = vec![
        ("BiLSTM", Box::new(bilstm_instance)),
        ("co-attention ek_tt", Box::new(|s| coattn_instance("ek_tt", s))),
        ("co-attention tg_ug", Box::new(|s| coattn_instance("tg_ug", s))),
        ("contextual FFN", Box::new(ffn_instance)),
        ("head", Box::new(head_instance)),
        ("SAGE", Box::new(sage_instance)),
    ];
    let mut summary = Vec::new();
    for (name, f) in &blocks {
        let worst = (0..GRAD_INSTANCES).map(f).fold(0.0, f64::max);
        check(worst < GRAD_TOL, || format!("{name}: relative error {worst:e} ≥ {GRAD_TOL:e}"))?;
        summary.push(format!("{name} {worst:.1e}"));
    }
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("{GRAD_INSTANCES} instances each, worst rel. err: {}; {elapsed:.2?}", summary.join(", ")))
}

// ---------------------------------------------------------------- 3

/// `p(fake) = σ(w·(x + r) + b)` over a two-dimensional input.
struct Logistic {
    w: [f64; 2],
    b: f64,
}

impl Perturbable for Logistic {
    type Input = [f64; 2];

    fn perturb_len(&self, _: &[f64; 2]) -> usize {
        2
    }

    fn logits_at(&self, x: &[f64; 2], r: &[f64]) -> endemic::Result<[f64; 2]> {
        Ok([0.0, self.w[0] * (x[0] + r[0]) + self.w[1] * (x[1] + r[1]) + self.b])
    }

    fn input_grad_at(&self, _: &[f64; 2], _: &[f64], g: [f64; 2]) -> endemic::Result<Vec<f64>> {
        Ok(vec![g[1] * self.w[0], g[1] * self.w[1]])
    }
}

fn probs(l: [f64; 2]) -> [f64; 2] {
    let p1 = 1.0 / (1.0 + (l[0] - l[1]).exp());
    [1.0 - p1, p1]
}

fn tiny_dims() -> ModelDims {
    ModelDims {
        k: 4,
        g: 3,
        c: 2,
        attn_hidden: 2,
        seq_len: 4,
        embed_dim: 3,
        evidence_rows: 3,
        vocab_size: 8,
        n_features: 3,
    }
}

fn random_input(rng: &mut ChaCha8Rng, d: &ModelDims) -> ModelInput {
    ModelInput {
        token_ids: (0..d.seq_len).map(|_| rng.random_range(0..d.vocab_size)).collect(),
        evidence: rand_matrix(rng, d.evidence_rows, d.k),
        tweet_graph: rand_vector(rng, d.g),
        user_graph: rand_vector(rng, d.g),
        context: rand_vector(rng, d.n_features),
    }
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let cfg = LossConfig::default();
    // AT radius.
    let mut rng = seeded_rng(&[3, 0]);
    for _ in 0..100 {
        let n = rng.random_range(1..50);
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let r = at_perturbation(&g, cfg.eps_at);
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        check((norm - cfg.eps_at).abs() <= 1e-9, || format!("‖r_AT‖ = {norm}"))?;
    }
    // VAT radius and non-negativity on the full model, both scopes.
    let dims = tiny_dims();
    for seed in 0..20u64 {
        let model = EndemicModel::new(dims, 0.2, seed).unwrap();
        let mut rng = seeded_rng(&[3, 1, seed]);
        let x = random_input(&mut rng, &dims);
        for scope in [PerturbScope::Embeddings, PerturbScope::AllInputs] {
            let m = ScopedModel { model: &model, scope };
            let r = vat_direction(&m, &x, &cfg, &mut rng).map_err(|e| e.to_string())?;
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            check((norm - cfg.eps_vat).abs() <= 1e-9, || format!("‖r_adv‖ = {norm}"))?;
            let l = vat_loss(&m, &x, &cfg, &mut rng).map_err(|e| e.to_string())?;
            check(l >= 0.0, || format!("VAT loss {l} < 0"))?;
        }
        // Constant-output model: zero head weights.
        let mut constant = model.clone();
        constant.fusion.head_w.fill(0.0);
        let m = ScopedModel {
            model: &constant,
            scope: PerturbScope::AllInputs,
        };
        let l = vat_loss(&m, &x, &cfg, &mut rng).map_err(|e| e.to_string())?;
        check(l == 0.0, || format!("constant model VAT loss {l}"))?;
    }
    // Two-feature logistic toy against a grid search over the sphere.
    let toy_cfg = LossConfig {
        eps_vat: 0.5,
        ..LossConfig::default()
    };
    let mut worst_angle: f64 = 0.0;
    let mut worst_loss: f64 = 0.0;
    for seed in 0..50u64 {
        let mut rng = seeded_rng(&[3, 2, seed]);
        let theta = rng.random_range(0.0..std::f64::consts::TAU);
        let mag = rng.random_range(0.5..1.0);
        let w = [mag * theta.cos(), mag * theta.sin()];
        let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let b = rng.random_range(-0.1..0.1) - (w[0] * x[0] + w[1] * x[1]);
        let toy = Logistic { w, b };
        let r = vat_direction(&toy, &x, &toy_cfg, &mut rng).map_err(|e| e.to_string())?;
        let loss = vat_loss(&toy, &x, &toy_cfg, &mut seeded_rng(&[3, 3, seed])).map_err(|e| e.to_string())?;
        let p = probs(toy.logits_at(&x, &[0.0, 0.0]).unwrap());
        let (mut best_kl, mut best_phi) = (f64::NEG_INFINITY, 0.0);
        for step in 0..36_000 {
            let phi = step as f64 * std::f64::consts::TAU / 36_000.0;
            let d = [toy_cfg.eps_vat * phi.cos(), toy_cfg.eps_vat * phi.sin()];
            let kl = kl_divergence(p, probs(toy.logits_at(&x, &d).unwrap()));
            if kl > best_kl {
                best_kl = kl;
                best_phi = phi;
            }
        }
        // The power method recovers the worst-case axis; its sign follows the random start.
        let cos = (r[0] * best_phi.cos() + r[1] * best_phi.sin()).abs() / toy_cfg.eps_vat;
        let angle = cos.clamp(-1.0, 1.0).acos().to_degrees();
        worst_angle = worst_angle.max(angle);
        worst_loss = worst_loss.max((loss - best_kl).abs() / best_kl);
    }
    check(worst_angle <= 5.0, || format!("direction off by {worst_angle:.2}°"))?;
    check(worst_loss <= 0.05, || format!("loss off by {:.2}%", 100.0 * worst_loss))?;
    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "radii exact, constant model 0, toy: ≤{worst_angle:.3}° and ≤{:.2}% loss; {elapsed:.2?}",
        100.0 * worst_loss
    ))
}

// ---------------------------------------------------------------- 4

const WORDS: [&str; 12] = [
    "flood", "river", "city", "bridge", "closed", "police", "report", "storm", "night", "water", "rescue", "road",
];

fn brute_force(
    tweet: &Tweet,
    docs: &[EvidenceDocument],
    enc: &dyn SentenceEncoder,
    eps: f64,
    max_total: usize,
    per_source: usize,
) -> Vec<(String, String)> {
    let q = enc.encode(&tweet.text);
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    };
    let mut out = Vec::new();
    let mut per: HashMap<&str, usize> = HashMap::new();
    for d in docs {
        for s in &d.sentences {
            if cos(&enc.encode(s), &q) < eps || out.len() >= max_total {
                continue;
            }
            let c = per.entry(&d.domain).or_default();
            if *c < per_source {
                *c += 1;
                out.push((d.url.clone(), s.clone()));
            }
        }
    }
    out
}

fn criterion_4() -> Outcome {
    let enc = HashEncoder::new(16, 4);
    let mut total_selected = 0;
    for cfg_seed in 0..50u64 {
        let mut rng = seeded_rng(&[4, cfg_seed]);
        let words = |rng: &mut ChaCha8Rng, n: usize| -> Vec<&str> { (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect() };
        let base = words(&mut rng, 5);
        let tweet = Tweet {
            id: "t".into(),
            text: base.join(" "),
            user_id: "u".into(),
            created_at: 100,
            retweet_of: None,
            tweet_features: vec![],
            label: Label::Unlabelled,
        };
        let n_docs = rng.random_range(1..=25);
        let docs: Vec<EvidenceDocument> = (0..n_docs)
            .map(|d| EvidenceDocument {
                url: format!("https://s{}.example/{d}", d % 4),
                domain: format!("s{}.example", rng.random_range(0..4)),
                publish_time: 50,
                sentences: (0..rng.random_range(1..=8))
                    .map(|_| {
                        // Mostly variations of the tweet, so thresholds bind.
                        let mut s = base.clone();
                        for _ in 0..rng.random_range(0..4) {
                            let i = rng.random_range(0..s.len());
                            s[i] = WORDS[rng.random_range(0..WORDS.len())];
                        }
                        s.join(" ")
                    })
                    .collect(),
            })
            .collect();
        let max_total = if cfg_seed % 3 == 0 { rng.random_range(1..=50) } else { 50 };
        let per_source = if cfg_seed % 2 == 0 { rng.random_range(1..=10) } else { 10 };
        let mut prev_count = usize::MAX;
        for step in 0..10 {
            let eps = 0.05 + 0.1 * step as f64;
            let params = SelectionParams {
                epsilon: eps,
                max_total,
                max_per_source: per_source,
                ranking: Ranking::ScanOrder,
            };
            let got = select_evidence(&tweet, &docs, &enc, &params).map_err(|e| e.to_string())?;
            let got_keys: Vec<(String, String)> = got.selected.iter().map(|s| (s.url.clone(), s.text.clone())).collect();
            let want = brute_force(&tweet, &docs, &enc, eps, max_total, per_source);
            check(got_keys == want, || format!("config {cfg_seed}, ε={eps:.2}: selection differs from brute force"))?;
            let mut per: HashMap<&str, usize> = HashMap::new();
            for s in &got.selected {
                *per.entry(&s.domain).or_default() += 1;
            }
            check(per.values().all(|&c| c <= per_source.min(10)) && got.selected.len() <= max_total.min(50), || {
                format!("config {cfg_seed}: caps violated")
            })?;
            check(got.selected.len() <= prev_count, || format!("config {cfg_seed}: count grew with ε"))?;
            prev_count = got.selected.len();
            total_selected += got.selected.len();
        }
    }
    Ok(format!("50 configurations × 10 thresholds match brute force ({total_selected} selections)"))
}

// ---------------------------------------------------------------- 5

fn user_graph(n: usize, edges: &[(usize, usize)]) -> HeteroGraph {
    let users: Vec<UserProfile> = (0..n)
        .map(|u| UserProfile {
            id: format!("u{u}"),
            followers: 0,
            followees: 0,
            verified: false,
            tweet_count: 0,
            user_features: vec![],
        })
        .collect();
    let follows: Vec<(String, String)> = edges.iter().map(|(a, b)| (format!("u{a}"), format!("u{b}"))).collect();
    build_graph(&[], &users, &follows, GraphOptions::default()).unwrap()
}

fn criterion_5() -> Outcome {
    let teleport = 0.3;
    let steps = 100_000;
    let graphs = [
        user_graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]),
        user_graph(5, &[(0, 1), (0, 2), (0, 3), (1, 2)]),
        user_graph(5, &[(0, 1), (1, 2), (2, 0), (3, 4), (0, 4)]),
    ];
    let mut worst_z: f64 = 0.0;
    for (gi, g) in graphs.iter().enumerate() {
        let n = g.num_nodes();
        let mut p = vec![vec![0.0; n]; n];
        for v in 0..n {
            let nb = g.neighbors(v);
            for u in 0..n {
                p[v][u] = if nb.is_empty() {
                    1.0 / n as f64
                } else {
                    teleport / n as f64 + (1.0 - teleport) * nb.iter().filter(|&&x| x as usize == u).count() as f64 / nb.len() as f64
                };
            }
        }
        let walk = sample_walk(g, 0, steps, teleport, &mut seeded_rng(&[5, gi as u64])).map_err(|e| e.to_string())?;
        let mut counts = vec![vec![0usize; n]; n];
        let mut visits = vec![0usize; n];
        for w in walk.windows(2) {
            counts[w[0]][w[1]] += 1;
            visits[w[0]] += 1;
        }
        for v in 0..n {
            for u in 0..n {
                let m = visits[v] as f64;
                let expected = m * p[v][u];
                let sd = (m * p[v][u] * (1.0 - p[v][u])).sqrt();
                let z = if sd > 0.0 { (counts[v][u] as f64 - expected).abs() / sd } else { 0.0 };
                worst_z = worst_z.max(z);
                check(z <= 3.0, || format!("graph {gi}: transition {v}->{u} off by {z:.2}σ"))?;
            }
        }
    }

    // Two cliques of different sizes joined by one bridge.
    let start = Instant::now();
    let mut edges = Vec::new();
    for a in 0..5 {
        for b in a + 1..5 {
            edges.push((a, b));
        }
    }
    for a in 5..12 {
        for b in a + 1..12 {
            edges.push((a, b));
        }
    }
    edges.push((4, 5));
    let g = user_graph(12, &edges);
    let feats = node_features(&g);
    let cfg = SageTrainConfig {
        epochs: 60,
        walks_per_node: 4,
        seed: 11,
        ..SageTrainConfig::default()
    };
    let init = SageParams::new(&[NODE_FEATURE_DIM, 8, 8], &mut seeded_rng(&[5, 99])).unwrap();
    let (trained, _) = train_unsupervised(&g, &feats, &init, &cfg).map_err(|e| e.to_string())?;
    let all: Vec<usize> = (0..12).collect();
    let z = embed_nodes(&g, &feats, &trained, &all).map_err(|e| e.to_string())?;
    let side = |v: usize| g.id(v)[1..].parse::<usize>().unwrap() < 5;
    let (mut intra, mut inter) = ((0.0, 0), (0.0, 0));
    for a in 0..12 {
        for b in a + 1..12 {
            let c = endemic::math::cosine_view(z.row(a), z.row(b));
            if side(a) == side(b) {
                intra = (intra.0 + c, intra.1 + 1);
            } else {
                inter = (inter.0 + c, inter.1 + 1);
            }
        }
    }
    let (intra, inter) = (intra.0 / intra.1 as f64, inter.0 / inter.1 as f64);
    let elapsed = start.elapsed();
    check(intra > inter, || format!("intra-cosine {intra:.3} ≤ inter-cosine {inter:.3}"))?;
    check(elapsed < Duration::from_secs(60), || format!("clique training took {elapsed:?}"))?;
    Ok(format!(
        "walk transitions within {worst_z:.2}σ over 1e5 steps; cliques intra {intra:.3} > inter {inter:.3} ({elapsed:.2?})"
    ))
}

// ---------------------------------------------------------------- 6, 7, 9

fn small_config(extra: &[String]) -> ExperimentConfig {
    let mut sets: Vec<String> = [
        "dims.k=16",
        "dims.g=8",
        "dims.c=4",
        "dims.attn_hidden=4",
        "dims.seq_len=10",
        "dims.embed_dim=8",
        "dims.evidence_rows=8",
        "graph.layers=1",
        "graph.epochs=3",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    sets.extend_from_slice(extra);
    let ov: Vec<_> = sets.iter().map(|s| parse_override(s).unwrap()).collect();
    resolve(None, &ov).unwrap()
}

fn prepared(cfg: &ExperimentConfig, p: &SynthParams) -> endemic::Result<PreparedExperiment> {
    let c = generate(p);
    let enc = make_encoder(cfg, None)?;
    let store = EvidenceStore::from_records(c.evidence.clone())?;
    prepare(cfg, c.tweets, c.users, &c.follows, &store, enc.as_ref())
}

fn criterion_6() -> Outcome {
    let start = Instant::now();
    let cfg = small_config(&[
        "train.epochs=500".into(),
        "train.stop_at_train_acc=0.95".into(),
        "corpus.general_test_fraction=0.0".into(),
        format!("corpus.collected_at={}", BASE_TIME + 10_000_000),
    ]);
    let prep = prepared(&cfg, &SynthParams::default()).map_err(|e| e.to_string())?;
    let n_train = prep.splits.train.labelled_ids.len();
    check(n_train == 40, || format!("expected 40 training tweets, got {n_train}"))?;
    let (_, logs) = train_model(&cfg, &prep.bundle, &prep.splits.train, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let last = logs.last().ok_or("no epochs ran")?;
    let elapsed = start.elapsed();
    check(last.train_acc >= 0.95, || format!("train accuracy {:.3} after {} epochs", last.train_acc, logs.len()))?;
    check(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!("train accuracy {:.3} after {} epochs ({elapsed:.2?})", last.train_acc, logs.len()))
}

fn mask_setup() -> (ExperimentConfig, SynthParams) {
    let cfg = small_config(&["train.epochs=60".into(), "corpus.max_age=12000".into()]);
    let p = SynthParams {
        n_tweets: 200,
        n_users: 30,
        labelled_fraction: 0.8,
        seed: 7,
        spacing: 600,
    };
    (cfg, p)
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let (cfg, p) = mask_setup();
    let prep = prepared(&cfg, &p).map_err(|e| e.to_string())?;
    let (model, _) = train_model(&cfg, &prep.bundle, &prep.splits.train, |_, _| Ok(())).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for split in [&prep.splits.general_test, &prep.splits.early_test] {
        let plain = evaluate(&model, &prep.bundle, split, EvalMode::Plain, "plain").map_err(|e| e.to_string())?;
        let masked = evaluate(&model, &prep.bundle, split, EvalMode::MaskDetect, "mask").map_err(|e| e.to_string())?;
        check(plain.confusion.total() == masked.confusion.total(), || "mask-detect changed the example count".into())?;
        let drop = 100.0 * (plain.accuracy - masked.accuracy);
        check(drop <= 5.0, || {
            format!("{}: accuracy drop {drop:.2}pp (plain {:.3}, mask {:.3})", split.kind.as_str(), plain.accuracy, masked.accuracy)
        })?;
        lines.push(format!(
            "{} n={} plain {:.3} mask {:.3} drop {drop:.2}pp",
            split.kind.as_str(),
            plain.confusion.total(),
            plain.accuracy,
            masked.accuracy
        ));
    }
    Ok(format!("{} ({:.2?})", lines.join("; "), start.elapsed()))
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let schema = endemic::datamodel::FeatureSchema::default();
    let mut rng = seeded_rng(&[8]);
    for _ in 0..1000 {
        let t: Vec<Option<f64>> = (0..4).map(|_| rng.random_bool(0.9).then(|| rng.random_range(-1e4..1e4))).collect();
        let u: Vec<Option<f64>> = (0..4).map(|_| rng.random_bool(0.9).then(|| rng.random_range(-1e4..1e4))).collect();
        let once = mask_time_variant(&t, &u, &schema);
        check(mask_time_variant(&once.0, &once.1, &schema) == once, || "masking is not idempotent".into())?;
        // Same tweet with different engagement counts.
        let mut t2 = t.clone();
        t2[0] = Some(rng.random_range(0.0..1e6));
        t2[1] = Some(rng.random_range(0.0..1e6));
        check(mask_time_variant(&t2, &u, &schema) == once, || "engagement-only difference survives masking".into())?;
        check(once.0[2] == t[2] && once.0[3] == t[3] && once.1[2] == u[2], || "time-invariant feature changed".into())?;
    }
    for _ in 0..1000 {
        let c = Confusion {
            tp: rng.random_range(0..100),
            fp: rng.random_range(0..100),
            fn_: rng.random_range(0..100),
            tn: rng.random_range(0..100),
        };
        let r = MetricsReport::from_confusion("r", endemic::datamodel::SplitKind::GeneralTest, EvalMode::Plain, c, 0);
        let total = (c.tp + c.fp + c.fn_ + c.tn) as f64;
        let acc = if total > 0.0 { (c.tp + c.tn) as f64 / total } else { 0.0 };
        let prec = if c.tp + c.fp > 0 { c.tp as f64 / (c.tp + c.fp) as f64 } else { 0.0 };
        let rec = if c.tp + c.fn_ > 0 { c.tp as f64 / (c.tp + c.fn_) as f64 } else { 0.0 };
        let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
        for (name, have, want) in [("accuracy", r.accuracy, acc), ("precision", r.precision, prec), ("recall", r.recall, rec), ("f1", r.f1, f1)] {
            check((have - want).abs() <= 1e-9, || format!("{name}: {have} vs {want} for {c:?}"))?;
        }
    }
    Ok("1000 masking cases and 1000 confusion tables exact".into())
}

// ---------------------------------------------------------------- 9

fn run_once(dir: &std::path::Path) -> endemic::Result<()> {
    let cfg = small_config(&["train.epochs=5".into(), "corpus.max_age=6000".into()]);
    let p = SynthParams {
        n_tweets: 60,
        labelled_fraction: 0.7,
        ..SynthParams::default()
    };
    let prep = prepared(&cfg, &p)?;
    let (model, _) = train_model(&cfg, &prep.bundle, &prep.splits.train, |_, _| Ok(()))?;
    let seeds = BTreeMap::from([("model".to_string(), cfg.model.seed), ("train".to_string(), cfg.train.seed)]);
    save_checkpoint(&dir.join("checkpoint"), &model, Some(&prep.sage), cfg.model.p_drop, &seeds)?;
    let general = evaluate(&model, &prep.bundle, &prep.splits.general_test, EvalMode::Plain, "general")?;
    let early = evaluate(&model, &prep.bundle, &prep.splits.early_test, EvalMode::MaskDetect, "early-mask")?;
    report(&[general, early], &dir.join("report"))?;
    Ok(())
}

fn criterion_9() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_once(a.path()).map_err(|e| e.to_string())?;
    run_once(b.path()).map_err(|e| e.to_string())?;
    let files = [
        "checkpoint/model.bin",
        "checkpoint/manifest.json",
        "report/report.csv",
        "report/report.txt",
        "report/plots/general_test.png",
        "report/plots/early_test.png",
    ];
    for f in files {
        let x = std::fs::read(a.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        let y = std::fs::read(b.path().join(f)).map_err(|e| format!("{f}: {e}"))?;
        check(x == y, || format!("{f} differs between runs"))?;
    }
    Ok(format!("{} artifacts byte-identical across two runs", files.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("co-attention matches scalar oracle", criterion_1),
        ("gradient checks on every learnable block", criterion_2),
        ("AT/VAT perturbation contracts", criterion_3),
        ("evidence selection vs brute force", criterion_4),
        ("walk transitions and clique separability", criterion_5),
        ("end-to-end overfit on 40 tweets", criterion_6),
        ("mask-detect accuracy drop ≤ 5pp", criterion_7),
        ("masking and metric identities", criterion_8),
        ("byte-identical reruns", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("[PASS] criterion {}: {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("[FAIL] criterion {}: {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
