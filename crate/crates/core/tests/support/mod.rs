//! Test-only helpers: an independent scalar re-implementation of the model's
//! forward arithmetic and a hand-weighted one-layer fixture.

#![allow(dead_code, clippy::needless_range_loop)]

use avsteer::model::{LayerParameters, Model, ModelConfig, ModelParameters};
use avsteer::tensor::Matrix;

type Mat = Vec<Vec<f64>>;

fn to_mat(m: &Matrix) -> Mat {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn mul(w: &Mat, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    for i in 0..w.len() {
        let mut acc = 0.0;
        for j in 0..x.len() {
            acc += w[i][j] * x[j];
        }
        out[i] = acc;
    }
    out
}

fn rms(x: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
    let mut ss = 0.0;
    for v in x {
        ss += v * v;
    }
    let denom = (ss / x.len() as f64 + eps).sqrt();
    (0..x.len()).map(|i| x[i] / denom * g[i]).collect()
}

fn gelu_tanh(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x.powi(3))).tanh())
}

/// Steering applied by the oracle: `h + s v`, rescaled to `‖h‖`.
pub fn oracle_inject(h: &[f64], v: &[f64], s: f64) -> Vec<f64> {
    if s == 0.0 {
        return h.to_vec();
    }
    let raw: Vec<f64> = h.iter().zip(v).map(|(a, b)| a + s * b).collect();
    let n_raw = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n_raw == 0.0 {
        return raw;
    }
    let n_h = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    raw.iter().map(|x| x * n_h / n_raw).collect()
}

pub struct OracleSteer<'a> {
    pub directions: &'a [Vec<f64>],
    pub strengths: &'a [f64],
    pub from_position: usize,
}

/// Returns (last-position logits, states[layer][position]).
pub fn oracle_forward(
    cfg: &ModelConfig,
    p: &ModelParameters,
    frames: &[Vec<f64>],
    tokens: &[u32],
    steer: Option<&OracleSteer<'_>>,
) -> (Vec<f64>, Vec<Mat>) {
    let d = cfg.hidden_dim;
    let audio_w = to_mat(&p.audio_projection);
    let tok = to_mat(&p.token_embedding);
    let pos = to_mat(&p.position_embedding);
    let mut x: Mat = Vec::new();
    for f in frames {
        x.push(mul(&audio_w, f));
    }
    for &t in tokens {
        x.push(tok[t as usize].clone());
    }
    for (i, row) in x.iter_mut().enumerate() {
        for j in 0..d {
            row[j] += pos[i][j];
        }
    }
    let n = x.len();
    let mut all_states = Vec::new();
    for (li, layer) in p.layers.iter().enumerate() {
        let (wq, wk, wv, wo) = (
            to_mat(&layer.query),
            to_mat(&layer.key),
            to_mat(&layer.value),
            to_mat(&layer.output),
        );
        let normed: Mat = x
            .iter()
            .map(|r| rms(r, &layer.attn_norm, cfg.norm_epsilon))
            .collect();
        let q: Mat = normed.iter().map(|r| mul(&wq, r)).collect();
        let k: Mat = normed.iter().map(|r| mul(&wk, r)).collect();
        let v: Mat = normed.iter().map(|r| mul(&wv, r)).collect();
        let mut attn_out: Mat = vec![vec![0.0; d]; n];
        for t in 0..n {
            let mut concat = vec![0.0; d];
            for h in 0..cfg.num_heads {
                let off = h * cfg.head_dim;
                let mut scores = Vec::new();
                for s in 0..=t {
                    let mut acc = 0.0;
                    for j in 0..cfg.head_dim {
                        acc += q[t][off + j] * k[s][off + j];
                    }
                    scores.push(acc / (cfg.head_dim as f64).sqrt());
                }
                let m = scores.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for s in 0..=t {
                    for j in 0..cfg.head_dim {
                        concat[off + j] += e[s] / z * v[s][off + j];
                    }
                }
            }
            attn_out[t] = mul(&wo, &concat);
        }
        for t in 0..n {
            for j in 0..d {
                x[t][j] += attn_out[t][j];
            }
        }
        let (w1, w2) = (to_mat(&layer.mlp_in), to_mat(&layer.mlp_out));
        for t in 0..n {
            let nr = rms(&x[t], &layer.mlp_norm, cfg.norm_epsilon);
            let hid: Vec<f64> = mul(&w1, &nr)
                .iter()
                .zip(&layer.mlp_in_bias)
                .map(|(a, b)| gelu_tanh(a + b))
                .collect();
            let o = mul(&w2, &hid);
            for j in 0..d {
                x[t][j] += o[j] + layer.mlp_out_bias[j];
            }
        }
        if let Some(st) = steer {
            for t in st.from_position..n {
                x[t] = oracle_inject(&x[t], &st.directions[li], st.strengths[li]);
            }
        }
        all_states.push(x.clone());
    }
    let last = &x[n - 1];
    let fin = match &p.final_norm {
        Some(g) => rms(last, g, cfg.norm_epsilon),
        None => last.clone(),
    };
    (mul(&to_mat(&p.unembedding), &fin), all_states)
}

pub fn hand_config() -> ModelConfig {
    ModelConfig {
        num_layers: 1,
        hidden_dim: 2,
        num_heads: 1,
        head_dim: 2,
        vocab_size: 4,
        audio_feature_dim: 2,
        max_seq_len: 6,
        norm_epsilon: 1e-5,
        rng_seed: 0,
    }
}

fn m(rows: Vec<Vec<f64>>) -> Matrix {
    Matrix::from_rows(rows).unwrap()
}

/// One layer, one head, d = 2, with small hand-picked weights.
pub fn hand_model() -> Model {
    let params = ModelParameters {
        token_embedding: m(vec![
            vec![0.1, -0.2],
            vec![0.3, 0.4],
            vec![-0.5, 0.2],
            vec![0.0, 0.6],
        ]),
        audio_projection: m(vec![vec![0.5, -0.25], vec![0.75, 1.0]]),
        position_embedding: m(vec![
            vec![0.01, 0.02],
            vec![0.03, -0.01],
            vec![-0.02, 0.05],
            vec![0.04, 0.0],
            vec![0.0, -0.03],
            vec![0.02, 0.02],
        ]),
        layers: vec![LayerParameters {
            attn_norm: vec![1.0, 0.5],
            query: m(vec![vec![1.0, 0.5], vec![-0.5, 1.0]]),
            key: m(vec![vec![0.8, 0.0], vec![0.2, 0.6]]),
            value: m(vec![vec![0.3, -0.7], vec![0.9, 0.1]]),
            output: m(vec![vec![0.5, 0.2], vec![-0.1, 0.4]]),
            mlp_norm: vec![0.9, 1.1],
            mlp_in: m(vec![vec![1.0, -1.0], vec![0.5, 0.5], vec![-0.3, 0.8]]),
            mlp_in_bias: vec![0.1, -0.2, 0.05],
            mlp_out: m(vec![vec![0.4, -0.6, 0.2], vec![0.3, 0.1, -0.5]]),
            mlp_out_bias: vec![0.01, -0.02],
        }],
        final_norm: Some(vec![1.0, 1.0]),
        unembedding: m(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.5],
            vec![0.7, -0.7],
        ]),
    };
    Model::from_parameters(hand_config(), params).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Labeled traces whose correct group is shifted along each layer's
/// direction by `shifts[l]`. Returns the traces and the matching vector.
pub fn planted_traces(
    seed: u64,
    shifts: &[f64],
    hidden_dim: usize,
    per_group: usize,
) -> (
    Vec<avsteer::harness::traces::TraceRecord>,
    avsteer::steering::SteeringVector,
) {
    use avsteer::harness::traces::TraceRecord;
    use avsteer::model::Correctness;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let layers = shifts.len();
    let dirs: Vec<Vec<f64>> = (0..layers)
        .map(|_| {
            let v: Vec<f64> = (0..hidden_dim).map(|_| gauss()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let mut traces = Vec::new();
    for i in 0..2 * per_group {
        let correct = i < per_group;
        let rows: Vec<Vec<f64>> = (0..layers)
            .map(|l| {
                (0..hidden_dim)
                    .map(|j| gauss() + if correct { shifts[l] * dirs[l][j] } else { 0.0 })
                    .collect()
            })
            .collect();
        traces.push(TraceRecord {
            instance_id: format!("t{i}"),
            correctness: if correct {
                Correctness::Correct
            } else {
                Correctness::Incorrect
            },
            channel: avsteer::model::MAIN_CHANNEL.to_string(),
            extraction: Matrix::from_rows(rows).unwrap(),
            full: None,
        });
    }
    let vector =
        avsteer::steering::SteeringVector::new("planted", Matrix::from_rows(dirs).unwrap())
            .unwrap();
    (traces, vector)
}

/// Two-pass pooled-SD effect size written out from the definition.
pub fn brute_cohens_d(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let ssa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let ssb: f64 = b.iter().map(|x| (x - mb).powi(2)).sum();
    let sa2 = ssa / (na - 1.0);
    let sb2 = ssb / (nb - 1.0);
    (ma - mb) / (((na - 1.0) * sa2 + (nb - 1.0) * sb2) / (na + nb - 2.0)).sqrt()
}

/// Oracle steering vector: last-position states on the audio minus those on
/// silence of the same length.
pub fn oracle_vector(model: &Model, frames: &[Vec<f64>], tokens: &[u32]) -> Vec<Vec<f64>> {
    let (cfg, p) = (model.config(), model.parameters());
    let silent = vec![vec![0.0; cfg.audio_feature_dim]; frames.len()];
    let (_, pos) = oracle_forward(cfg, p, frames, tokens, None);
    let (_, neg) = oracle_forward(cfg, p, &silent, tokens, None);
    let last = frames.len() + tokens.len() - 1;
    (0..cfg.num_layers)
        .map(|l| {
            (0..cfg.hidden_dim)
                .map(|j| pos[l][last][j] - neg[l][last][j])
                .collect()
        })
        .collect()
}

pub fn bin() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_avsteer"))
}

/// Runs the binary and returns (exit code, stdout, stderr).
pub fn run_bin(args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// Writes `config.toml` into `dir` with the given extra schedule lines and
/// a 4-layer, d = 32 model.
pub fn write_config(
    dir: &std::path::Path,
    seed: u64,
    per_division: usize,
    schedule: &str,
) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    let text = format!(
        "version = 1\nseed = {seed}\noutput_dir = \"out\"\n\n[model]\nnum_layers = 4\nhidden_dim = 32\n\n\
         [schedule]\n{schedule}\n\n[dataset]\nper_division = {{ adversarial = {per_division}, popular = {per_division}, random = {per_division} }}\n"
    );
    std::fs::write(&path, text).unwrap();
    path
}

/// gen-data → extract → eval (all modes) → analyze. Panics on failure.
pub fn full_pipeline(config: &std::path::Path, instance: &str) {
    let c = config.to_str().unwrap();
    let dir = config.parent().unwrap().join("out");
    let step = |args: &[&str]| {
        let (code, _, err) = run_bin(args);
        assert_eq!(code, 0, "{args:?}: {err}");
    };
    step(&["gen-data", "--config", c]);
    step(&["extract", "--config", c, "--instance", instance]);
    for mode in ["default", "uniform", "adaptive"] {
        step(&["eval", "--config", c, "--mode", mode]);
    }
    let traces = dir.join("traces_default.jsonl");
    let vector = dir.join("vector.json");
    step(&[
        "analyze",
        "--config",
        c,
        "--traces",
        traces.to_str().unwrap(),
        "--vector",
        vector.to_str().unwrap(),
        "--propose-partition",
    ]);
}

pub fn random_unit(rng: &mut impl rand::Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

/// P(yes) after steering along the planted read-out direction.
pub fn planted_p_yes(seed: u64, lambdas: &[f64]) -> Vec<f64> {
    use avsteer::steering::{InterventionPlan, SteeringVector};
    use rand::{Rng, SeedableRng};

    let cfg = ModelConfig {
        rng_seed: seed,
        ..ModelConfig::default()
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let dir = random_unit(&mut rng, cfg.hidden_dim);
    let model = avsteer::model::build_planted_model(&cfg, &dir).unwrap();
    let audio = avsteer::model::AudioFeatureSequence::new(
        cfg.audio_feature_dim,
        (0..6)
            .map(|_| {
                (0..cfg.audio_feature_dim)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect(),
    )
    .unwrap();
    let prompt = avsteer::model::PromptTokens::new(
        (0..8)
            .map(|_| rng.random_range(0..cfg.vocab_size as u32))
            .collect(),
    )
    .unwrap();
    let rows = Matrix::from_rows(vec![dir; cfg.num_layers]).unwrap();
    let vector = SteeringVector::new(model.id(), rows).unwrap();
    lambdas
        .iter()
        .map(|&l| {
            let plan =
                InterventionPlan::new(vector.clone(), vec![l; cfg.num_layers], true).unwrap();
            let out = model
                .greedy_decode(&audio, &prompt, Some(&plan), 1)
                .unwrap();
            avsteer::tensor::softmax(&out.answer_logits)[1]
        })
        .collect()
}
