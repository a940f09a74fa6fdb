//! Acceptance suite: one pass/fail line per criterion.
//!
//! Failing criteria are reported, not panicked on, so the rest of the suite
//! still runs. Set `REID_ACCEPTANCE_STRICT=1` to turn any failure into a
//! nonzero exit status.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use reid_cli::config::{PipelineConfig, QeConfig, RerankConfig};
use reid_cli::io::FloatWidth;
use reid_cli::pipeline::{
    evaluate_inputs, load_inputs, run_eval, RANK_LIST_FILE, REPORT_FILE, ROC_FILE,
};
use reid_cli::synth::{gen_synthetic, synthesize, SynthParams};
use reid_cli::tools::{augment_demo, DemoOp};
use reid_core::aggregation::{avg_pool, gem_pool, max_pool, GemParams};
use reid_core::augment::{
    cutout, horizontal_flip, random_erasing, random_patch, AugmentConfig, CropMode,
};
use reid_core::distill::{
    conditional_probs, kd_total, logit_l1, pkt_loss, KdBatch, KdWeights, ReidTerm,
};
use reid_core::losses::{
    arcface_loss, circle_loss, cross_entropy_ls_with, triplet_loss, ArcfaceParams, CeForm,
    CircleParams, SmoothedTarget, TripletForm, TripletParams,
};
use reid_core::metrics::{evaluate, roc_curve, EvalProtocol};
use reid_core::retrieval::{
    k_reciprocal_rerank, query_expansion_batch, rank_lists, Metric, QeParams, RerankParams,
};
use reid_core::rng::{seeded, ReidRng};
use reid_core::schedule::{is_backbone_frozen, lr_at, LrSchedule};
use reid_core::{DistanceMatrix, Embedding, FeatureMap, ImageTensor, ItemMeta};

type Res<T> = Result<T, Box<dyn std::error::Error>>;

/// One sub-check of a criterion.
struct Check {
    label: String,
    pass: bool,
    detail: String,
}

fn check(label: impl Into<String>, pass: bool, detail: impl Into<String>) -> Check {
    Check {
        label: label.into(),
        pass,
        detail: detail.into(),
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    time_limit: Option<Duration>,
    run: fn() -> Res<Vec<Check>>,
}

const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const INSTANCES: usize = 100;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-8 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    (0..x.len())
        .map(|i| {
            v[i] = x[i] + H;
            let up = f(&v);
            v[i] = x[i] - H;
            let down = f(&v);
            v[i] = x[i];
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn uniform(rng: &mut ReidRng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn normal_matrix(rng: &mut ReidRng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(rng))
}

/// Worst relative error of one loss family over its instances.
struct GradStats {
    name: &'static str,
    worst: f64,
    instances: usize,
}

impl GradStats {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            worst: 0.0,
            instances: 0,
        }
    }

    fn add(&mut self, analytic: &[f64], numeric: &[f64]) {
        self.worst = self.worst.max(rel_err(analytic, numeric));
        self.instances += 1;
    }

    fn into_check(self) -> Check {
        check(
            self.name,
            self.worst <= GRAD_TOL && self.instances == INSTANCES,
            format!("max rel err {:.2e} over {}", self.worst, self.instances),
        )
    }
}

fn ac1_gradients() -> Res<Vec<Check>> {
    let mut rng = seeded(1);
    let mut out = Vec::new();

    let mut ce = GradStats::new("cross_entropy_ls");
    for i in 0..INSTANCES {
        let c = rng.random_range(2..10);
        let target = SmoothedTarget::new(rng.random_range(0..c), c, rng.random_range(0.0..0.3))?;
        let form = if i % 2 == 0 {
            CeForm::Categorical
        } else {
            CeForm::BinaryPerClass
        };
        let z = uniform(&mut rng, c, -5.0, 5.0);
        let g = cross_entropy_ls_with(&z, &target, form)?.grad;
        let n = central_diff(
            |x| cross_entropy_ls_with(x, &target, form).unwrap().loss,
            &z,
        );
        ce.add(&g, &n);
    }
    out.push(ce.into_check());

    let mut arc = GradStats::new("arcface softmax");
    for _ in 0..INSTANCES {
        let c = rng.random_range(2..10);
        let target = SmoothedTarget::new(rng.random_range(0..c), c, rng.random_range(0.05..0.3))?;
        let p = ArcfaceParams::new(rng.random_range(8.0..64.0), rng.random_range(0.0..0.6))?;
        let cos = uniform(&mut rng, c, -0.95, 0.95);
        let g = arcface_loss(&cos, &target, &p)?.grad;
        let n = central_diff(|x| arcface_loss(x, &target, &p).unwrap().loss, &cos);
        arc.add(&g, &n);
    }
    out.push(arc.into_check());

    let mut circle = GradStats::new("circle_loss");
    for _ in 0..INSTANCES {
        let p = CircleParams::new(rng.random_range(1.0..80.0), rng.random_range(0.1..0.4))?;
        let np = rng.random_range(1..5);
        let sp = uniform(&mut rng, np, -0.5, 0.99);
        // negatives stay above -m so every adaptive weight is active
        let nn = rng.random_range(1..8);
        let sn = uniform(&mut rng, nn, -p.margin + 0.05, 0.99);
        let r = circle_loss(&sp, &sn, &p)?;
        let joined: Vec<f64> = sp.iter().chain(&sn).copied().collect();
        let f = |x: &[f64]| circle_loss(&x[..np], &x[np..], &p).unwrap().loss;
        let analytic: Vec<f64> = r.grad_pos.iter().chain(&r.grad_neg).copied().collect();
        circle.add(&analytic, &central_diff(f, &joined));
    }
    out.push(circle.into_check());

    let mut triplet = GradStats::new("triplet_loss");
    let forms = [
        TripletForm::Hinge,
        TripletForm::SoftMargin,
        TripletForm::Unclamped,
    ];
    for i in 0..INSTANCES {
        let p = TripletParams {
            margin: rng.random_range(0.0..0.5),
            form: forms[i % 3],
        };
        let n = rng.random_range(1..10);
        let (mut ap, mut an) = (Vec::new(), Vec::new());
        while ap.len() < n {
            let (a, b) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
            // keep away from the hinge
            if (p.margin + a - b).abs() > 1e-3 {
                ap.push(a);
                an.push(b);
            }
        }
        let r = triplet_loss(&ap, &an, &p)?;
        let joined: Vec<f64> = ap.iter().chain(&an).copied().collect();
        let f = |x: &[f64]| triplet_loss(&x[..n], &x[n..], &p).unwrap().loss;
        let analytic: Vec<f64> = r.grad_ap.iter().chain(&r.grad_an).copied().collect();
        triplet.add(&analytic, &central_diff(f, &joined));
    }
    out.push(triplet.into_check());

    let mut l1 = GradStats::new("logit_l1");
    for _ in 0..INSTANCES {
        let (m, c) = (rng.random_range(2..6), rng.random_range(2..8));
        let t = normal_matrix(&mut rng, m, c);
        // offsets of at least 1e-3 keep every entry away from a tie
        let s = Array2::from_shape_fn((m, c), |ij| {
            let off: f64 = rng.random_range(1e-3..1.0);
            t[ij] + if rng.random::<bool>() { off } else { -off }
        });
        let g = logit_l1(s.view(), t.view())?.grad;
        let f = |x: &[f64]| {
            let sx = Array2::from_shape_vec((m, c), x.to_vec()).unwrap();
            logit_l1(sx.view(), t.view()).unwrap().loss
        };
        l1.add(
            g.as_slice().unwrap(),
            &central_diff(f, s.as_slice().unwrap()),
        );
    }
    out.push(l1.into_check());

    let mut pkt = GradStats::new("pkt_loss");
    for _ in 0..INSTANCES {
        let (m, d) = (rng.random_range(2..8), rng.random_range(2..6));
        let s = normal_matrix(&mut rng, m, d);
        let dt = rng.random_range(2..6);
        let t = normal_matrix(&mut rng, m, dt);
        let g = pkt_loss(s.view(), t.view())?.grad;
        let f = |x: &[f64]| {
            let sx = Array2::from_shape_vec((m, d), x.to_vec()).unwrap();
            pkt_loss(sx.view(), t.view()).unwrap().loss
        };
        pkt.add(
            g.as_slice().unwrap(),
            &central_diff(f, s.as_slice().unwrap()),
        );
    }
    out.push(pkt.into_check());
    Ok(out)
}

fn random_map(rng: &mut ReidRng, w: usize, h: usize, c: usize) -> Res<FeatureMap> {
    Ok(FeatureMap::new(Array3::from_shape_fn((w, h, c), |_| {
        rng.random_range(0.1..10.0)
    }))?)
}

fn ac2_pooling() -> Res<Vec<Check>> {
    let mut rng = seeded(2);
    let mut worst_avg = 0.0f64;
    let mut worst_max = 0.0f64;
    let mut over_max = 0usize;
    let mut order_violations = 0usize;
    let maps = 1000;
    for _ in 0..maps {
        let x = random_map(&mut rng, 3, 3, 4)?;
        let (avg, max) = (avg_pool(&x), max_pool(&x));
        let gem1 = gem_pool(&x, GemParams::new(1.0)?);
        for (a, b) in gem1.as_slice().iter().zip(avg.as_slice()) {
            worst_avg = worst_avg.max((a - b).abs());
        }
        let gem256 = gem_pool(&x, GemParams::new(256.0)?);
        for (a, b) in gem256.as_slice().iter().zip(max.as_slice()) {
            let gap = (a - b).abs();
            worst_max = worst_max.max(gap);
            over_max += usize::from(gap > 1e-2);
        }
        let gem = gem_pool(&x, GemParams::new(rng.random_range(1.0..50.0))?);
        for ((g, a), m) in gem
            .as_slice()
            .iter()
            .zip(avg.as_slice())
            .zip(max.as_slice())
        {
            // one rounding step of slack on each side
            let slack = 1e-12 * m;
            if *g < a - slack || *g > m + slack {
                order_violations += 1;
            }
        }
    }
    Ok(vec![
        check("gem(1) = avg", worst_avg <= 1e-12, format!("max |diff| {worst_avg:.1e}")),
        check(
            "|gem(256) - max| <= 1e-2",
            worst_max <= 1e-2,
            format!(
                "max gap {worst_max:.4}, {over_max}/{} channels over; 9 positions bound the gap only by max*(1-9^(-1/256))",
                maps * 4
            ),
        ),
        check("avg <= gem <= max", order_violations == 0, format!("{order_violations} violations over {maps} maps")),
    ])
}

fn ac3_schedule() -> Res<Vec<Check>> {
    let s = LrSchedule::default();
    let lr = |i: u64| lr_at(i, &s);
    let mut out = vec![
        check(
            "lr_at(0) = 3.5e-5",
            lr(0)? == 3.5e-5,
            format!("{:e}", lr(0)?),
        ),
        check(
            "lr_at(5000) = 3.5e-4",
            lr(5000)? == 3.5e-4,
            format!("{:e}", lr(5000)?),
        ),
        check(
            "lr_at(18000) = 7.7e-7",
            lr(18000)? == 7.7e-7,
            format!("{:e}", lr(18000)?),
        ),
    ];
    // one-sided limits extrapolated from each piece's integer samples:
    // linear from the warmup side, quadratic from the cosine side
    let w = s.warmup_iters;
    let warm_limit = 2.0 * lr(w - 1)? - lr(w - 2)?;
    let warm_gap = (warm_limit - lr(w)?).abs().max((lr(w + 1)? - lr(w)?).abs());
    out.push(check(
        "continuous at warmup end",
        warm_gap <= 1e-12,
        format!("gap {warm_gap:.1e}"),
    ));
    let p = s.plateau_end_iter;
    let decay_limit = 3.0 * lr(p + 1)? - 3.0 * lr(p + 2)? + lr(p + 3)?;
    let decay_gap = (decay_limit - lr(p)?)
        .abs()
        .max((lr(p - 1)? - lr(p)?).abs());
    out.push(check(
        "continuous at decay start",
        decay_gap <= 1e-12,
        format!("gap {decay_gap:.1e}"),
    ));
    let flips: Vec<u64> = (1..=18000)
        .filter(|&i| is_backbone_frozen(i - 1, 2000) != is_backbone_frozen(i, 2000))
        .collect();
    out.push(check(
        "freeze flips at 2000",
        flips == [2000] && is_backbone_frozen(1999, 2000) && !is_backbone_frozen(2000, 2000),
        format!("flips at {flips:?}"),
    ));
    Ok(out)
}

/// Precision at each hit, counted directly from the ranked labels.
fn brute_force(relevant: &[bool]) -> Option<(usize, f64, f64)> {
    let hit_ranks: Vec<usize> = (0..relevant.len())
        .filter(|&i| relevant[i])
        .map(|i| i + 1)
        .collect();
    let first = *hit_ranks.first()?;
    let mut sum = 0.0;
    for &r in &hit_ranks {
        let hits_so_far = relevant[..r].iter().filter(|&&b| b).count();
        sum += hits_so_far as f64 / r as f64;
    }
    let n = hit_ranks.len() as f64;
    Some((first - 1, sum / n, n / *hit_ranks.last()? as f64))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut all = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    heap_permute(n, &mut p, &mut all);
    all
}

fn heap_permute(k: usize, p: &mut Vec<usize>, all: &mut Vec<Vec<usize>>) {
    if k <= 1 {
        all.push(p.clone());
        return;
    }
    for i in 0..k {
        heap_permute(k - 1, p, all);
        let j = if k.is_multiple_of(2) { i } else { 0 };
        p.swap(j, k - 1);
    }
}

fn ac4_metrics() -> Res<Vec<Check>> {
    let mut cases = 0usize;
    let mut mismatches = Vec::new();
    for n in 1..=7usize {
        let perms = permutations(n);
        for mask in 1u32..(1 << n) {
            for exclude in [false, true] {
                // gallery item j has camera j % 2; the query sits on camera 0
                let gallery: Vec<ItemMeta> = (0..n)
                    .map(|j| {
                        ItemMeta::new(
                            format!("g{j}"),
                            u32::from(mask >> j & 1 == 0),
                            (j % 2) as u32,
                        )
                    })
                    .collect();
                let query_meta: Vec<ItemMeta> = (0..perms.len())
                    .map(|q| ItemMeta::new(format!("q{q}"), 0, 0))
                    .collect();
                // row q ranks gallery item perms[q][r] at position r
                let mut data = Array2::zeros((perms.len(), n));
                for (q, perm) in perms.iter().enumerate() {
                    for (r, &j) in perm.iter().enumerate() {
                        data[[q, j]] = r as f64;
                    }
                }
                let d = DistanceMatrix::new(data, "synthetic")?;
                let proto = EvalProtocol {
                    exclude_same_camera_same_id: exclude,
                    max_rank: n,
                };
                let expected: Vec<Option<(usize, f64, f64)>> = perms
                    .iter()
                    .map(|perm| {
                        let kept: Vec<bool> = perm
                            .iter()
                            .filter(|&&j| !(exclude && gallery[j].person_id == 0 && j % 2 == 0))
                            .map(|&j| gallery[j].person_id == 0)
                            .collect();
                        brute_force(&kept)
                    })
                    .collect();
                let valid: Vec<(usize, f64, f64)> = expected.iter().flatten().copied().collect();
                cases += perms.len();
                let got = evaluate(&d, &query_meta, &gallery, &proto);
                if valid.is_empty() {
                    if got.is_ok() {
                        mismatches.push(format!("n={n} mask={mask:b} expected no valid query"));
                    }
                    continue;
                }
                let report = got?;
                let k = valid.len() as f64;
                let cmc: Vec<f64> = (0..n)
                    .map(|r| valid.iter().filter(|v| v.0 <= r).count() as f64 / k)
                    .collect();
                let map = valid.iter().map(|v| v.1).sum::<f64>() / k;
                let minp = valid.iter().map(|v| v.2).sum::<f64>() / k;
                if report.cmc != cmc
                    || report.map != map
                    || report.minp != minp
                    || report.skipped_queries != perms.len() - valid.len()
                {
                    mismatches.push(format!("n={n} mask={mask:b} exclude={exclude}"));
                }
            }
        }
    }
    // positives at ranks 1 and 3 of four
    let hand = DistanceMatrix::new(
        Array2::from_shape_vec((1, 4), vec![0.1, 0.2, 0.3, 0.4])?,
        "hand",
    )?;
    let hand_gallery = [(0, "a"), (1, "b"), (0, "c"), (1, "d")]
        .map(|(p, id)| ItemMeta::new(id, p, 1))
        .to_vec();
    let hand_report = evaluate(
        &hand,
        &[ItemMeta::new("q", 0, 0)],
        &hand_gallery,
        &EvalProtocol {
            exclude_same_camera_same_id: true,
            max_rank: 4,
        },
    )?;
    Ok(vec![
        check(
            "exhaustive oracle, n <= 7",
            mismatches.is_empty(),
            format!(
                "{cases} rankings, {} mismatching groups {:?}",
                mismatches.len(),
                mismatches.first()
            ),
        ),
        check(
            "hand case AP = 5/6, INP = 2/3",
            (hand_report.map - 5.0 / 6.0).abs() <= 1e-15
                && (hand_report.minp - 2.0 / 3.0).abs() <= 1e-15,
            format!("AP {} INP {}", hand_report.map, hand_report.minp),
        ),
    ])
}

fn random_embeddings(rng: &mut ReidRng, n: usize, d: usize) -> Res<Vec<Embedding>> {
    (0..n)
        .map(|_| {
            Ok(Embedding::new(
                (0..d).map(|_| StandardNormal.sample(&mut *rng)).collect(),
            )?)
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn ac5_rerank() -> Res<Vec<Check>> {
    let mut rng = seeded(5);
    let mut preserved = 0;
    let trials = 50;
    for _ in 0..trials {
        let (nq, ng) = (rng.random_range(1..15), rng.random_range(2..40));
        let q = random_embeddings(&mut rng, nq, 8)?;
        let g = random_embeddings(&mut rng, ng, 8)?;
        let metric = if rng.random::<bool>() {
            Metric::Cosine
        } else {
            Metric::Euclidean
        };
        let k1 = rng.random_range(1..(nq + ng).min(25));
        let p = RerankParams {
            k1,
            k2: rng.random_range(1..=k1.min(8)),
            lambda: 1.0,
        };
        let base = rank_lists(&metric.distances(&q, &g)?);
        let reranked = rank_lists(&k_reciprocal_rerank(&q, &g, metric, p)?);
        preserved += usize::from(base == reranked);
    }

    let (mut base_maps, mut gains) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let data = synthesize(&SynthParams {
            num_ids: 20,
            per_id: 5,
            dim: 64,
            noise_sigma: 0.2,
            seed,
        })?;
        let proto = EvalProtocol::default();
        let base = Metric::Cosine.distances(&data.query, &data.gallery)?;
        let reranked = k_reciprocal_rerank(
            &data.query,
            &data.gallery,
            Metric::Cosine,
            RerankParams::default(),
        )?;
        let before = evaluate(&base, &data.query_meta, &data.gallery_meta, &proto)?.map;
        let after = evaluate(&reranked, &data.query_meta, &data.gallery_meta, &proto)?.map;
        base_maps.push(before);
        gains.push(after - before);
    }
    let base_median = median(base_maps);
    let gain_median = median(gains.clone());
    let worst = gains.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(vec![
        check(
            "lambda = 1 keeps argsort",
            preserved == trials,
            format!("{preserved}/{trials} trials"),
        ),
        check(
            "baseline mAP in [0.6, 0.9]",
            (0.6..=0.9).contains(&base_median),
            format!("median {base_median:.3}"),
        ),
        check(
            "median mAP gain > 0",
            gain_median > 0.0,
            format!("median {gain_median:+.4}, worst seed {worst:+.4}"),
        ),
    ])
}

fn ac6_distillation() -> Res<Vec<Check>> {
    let mut rng = seeded(6);
    let (mut self_worst, mut lin_worst, mut row_worst) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let (m, d, c) = (
            rng.random_range(2..10),
            rng.random_range(2..8),
            rng.random_range(2..6),
        );
        let f = normal_matrix(&mut rng, m, d);
        let dt = rng.random_range(2..8);
        self_worst = self_worst.max(pkt_loss(f.view(), f.view())?.loss.abs());
        for row in conditional_probs(f.view())?.rows() {
            row_worst = row_worst.max((row.sum() - 1.0).abs());
        }
        let batch = KdBatch {
            student_logits: normal_matrix(&mut rng, m, c),
            teacher_logits: normal_matrix(&mut rng, m, c),
            student_feats: f,
            teacher_feats: normal_matrix(&mut rng, m, dt),
        };
        let reid = ReidTerm {
            loss: rng.random_range(0.0..3.0),
            grad_logits: Some(normal_matrix(&mut rng, m, c)),
            grad_feats: Some(normal_matrix(&mut rng, m, d)),
        };
        let at = |alpha: f64| kd_total(&batch, &reid, &KdWeights { alpha });
        let (l0, l1) = (at(0.0)?, at(1.0)?);
        let alpha = rng.random_range(0.0..5.0);
        let la = at(alpha)?;
        lin_worst = lin_worst.max((la.loss - (l0.loss + alpha * (l1.loss - l0.loss))).abs());
        let predicted = &l0.grad_feats + &((&l1.grad_feats - &l0.grad_feats) * alpha);
        for (a, b) in la.grad_feats.iter().zip(&predicted) {
            lin_worst = lin_worst.max((a - b).abs());
        }
    }
    Ok(vec![
        check(
            "pkt_loss(f, f) = 0",
            self_worst <= 1e-10,
            format!("max {self_worst:.1e}"),
        ),
        check(
            "kd_total linear in alpha",
            lin_worst <= 1e-10,
            format!("max deviation {lin_worst:.1e}"),
        ),
        check(
            "conditional rows sum to 1",
            row_worst <= 1e-12,
            format!("max |sum - 1| {row_worst:.1e}"),
        ),
    ])
}

fn synth_config(dir: &std::path::Path, out: &str) -> Res<PipelineConfig> {
    let text = format!(
        "seed: 3\npaths:\n  query: {}\n  gallery: {}\n  out: {}\n",
        dir.join("query.reid").display(),
        dir.join("gallery.reid").display(),
        dir.join(out).display()
    );
    Ok(PipelineConfig::parse(&text)?)
}

fn ac7_query_expansion() -> Res<Vec<Check>> {
    let dir = tempfile::tempdir()?;
    let params = SynthParams {
        num_ids: 15,
        per_id: 5,
        dim: 32,
        noise_sigma: 0.25,
        seed: 7,
    };
    gen_synthetic(&params, dir.path(), FloatWidth::F64)?;
    let plain = synth_config(dir.path(), "plain")?;
    let mut qe0 = plain.clone();
    qe0.qe = Some(QeConfig {
        m: 0,
        metric: Metric::Cosine,
    });
    let inputs = load_inputs(&plain)?;
    let a = evaluate_inputs(&plain, &inputs)?;
    let b = evaluate_inputs(&qe0, &inputs)?;
    let identical =
        serde_json::to_vec(&a.report)? == serde_json::to_vec(&b.report)? && a.files == b.files;

    let mut rng = seeded(7);
    let mut outside = 0usize;
    let mut worst = 0.0f64;
    let trials = 1000;
    for _ in 0..trials {
        let (ng, d) = (rng.random_range(1..12), rng.random_range(1..6));
        let q = random_embeddings(&mut rng, 1, d)?;
        let g = random_embeddings(&mut rng, ng, d)?;
        let m = rng.random_range(1..=ng);
        let metric = if rng.random::<bool>() {
            Metric::Cosine
        } else {
            Metric::Euclidean
        };
        let out = query_expansion_batch(&q, &g, metric, QeParams { m })?.remove(0);
        // explicit convex weights: 1/(m+1) on the query and its m nearest items
        let row = metric.distances(&q, &g)?.row(0).to_vec();
        let mut order: Vec<usize> = (0..ng).collect();
        order.sort_by(|&x, &y| row[x].total_cmp(&row[y]));
        let members: Vec<&Embedding> = std::iter::once(&q[0])
            .chain(order[..m].iter().map(|&j| &g[j]))
            .collect();
        for (k, v) in out.as_slice().iter().enumerate() {
            let coords: Vec<f64> = members.iter().map(|e| e.as_slice()[k]).collect();
            let combo = coords.iter().sum::<f64>() / (m + 1) as f64;
            worst = worst.max((v - combo).abs());
            let lo = coords.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = coords.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if *v < lo - 1e-12 || *v > hi + 1e-12 {
                outside += 1;
            }
        }
    }
    Ok(vec![
        check("m = 0 report byte-identical", identical, ""),
        check(
            "output in convex hull",
            outside == 0 && worst <= 1e-12,
            format!("{trials} trials, weight residual {worst:.1e}, {outside} coordinates outside the box"),
        ),
    ])
}

fn ac8_determinism() -> Res<Vec<Check>> {
    let dir = tempfile::tempdir()?;
    let params = SynthParams {
        num_ids: 12,
        per_id: 5,
        dim: 32,
        noise_sigma: 0.25,
        seed: 8,
    };
    gen_synthetic(&params, dir.path(), FloatWidth::F32)?;
    let mut first = synth_config(dir.path(), "a")?;
    first.qe = Some(QeConfig {
        m: 2,
        metric: Metric::Cosine,
    });
    first.rerank = Some(RerankConfig::default());
    let mut second = first.clone();
    second.paths.out = Some(dir.path().join("b"));
    // different worker counts must not change a byte
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()?
        .install(|| run_eval(&first))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()?
        .install(|| run_eval(&second))?;
    let mut out = Vec::new();
    for f in [REPORT_FILE, ROC_FILE, RANK_LIST_FILE] {
        let a = std::fs::read(dir.path().join("a").join(f))?;
        let b = std::fs::read(dir.path().join("b").join(f))?;
        out.push(check(
            f,
            a == b && !a.is_empty(),
            format!("{} bytes", a.len()),
        ));
    }
    Ok(out)
}

fn ac9_roc() -> Res<Vec<Check>> {
    let data = synthesize(&SynthParams {
        num_ids: 10,
        per_id: 5,
        dim: 32,
        noise_sigma: 0.01,
        seed: 9,
    })?;
    let d = Metric::Cosine.distances(&data.query, &data.gallery)?;
    let proto = EvalProtocol {
        exclude_same_camera_same_id: false,
        max_rank: 10,
    };
    let separated = evaluate(&d, &data.query_meta, &data.gallery_meta, &proto)?.auc;

    // 500 same and 500 different pair distances, labels then shuffled
    let mut rng = seeded(9);
    let mut distances: Vec<f64> = uniform(&mut rng, 500, 0.0, 0.5);
    distances.extend(uniform(&mut rng, 500, 0.5, 1.0));
    let mut labels: Vec<bool> = (0..1000).map(|i| i < 500).collect();
    labels.shuffle(&mut rng);
    let same: Vec<f64> = distances
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| l)
        .map(|(d, _)| *d)
        .collect();
    let diff: Vec<f64> = distances
        .iter()
        .zip(&labels)
        .filter(|(_, &l)| !l)
        .map(|(d, _)| *d)
        .collect();
    let shuffled = roc_curve(&same, &diff)?.auc;
    let hand = roc_curve(&[0.1, 0.4], &[0.3, 0.9])?.auc;
    Ok(vec![
        check(
            "separated AUC = 1",
            separated == Some(1.0),
            format!("{separated:?}"),
        ),
        check(
            "shuffled AUC = 0.5 +- 0.05",
            (shuffled - 0.5).abs() <= 0.05,
            format!("{shuffled:.4}"),
        ),
        check(
            "hand case AUC = 0.75",
            (hand - 0.75).abs() <= 1e-12,
            format!("{hand}"),
        ),
    ])
}

fn random_image(rng: &mut ReidRng, h: usize, w: usize) -> Res<ImageTensor> {
    Ok(ImageTensor::new(Array3::from_shape_fn((h, w, 3), |_| {
        rng.random::<f64>()
    }))?)
}

fn demo_digest_via_binary(op: &str) -> Res<String> {
    let out = Command::new(env!("CARGO_BIN_EXE_reid"))
        .args([
            "--seed",
            "11",
            "augment-demo",
            "--op",
            op,
            "--height",
            "48",
            "--width",
            "24",
        ])
        .output()?;
    if !out.status.success() {
        return Err(format!("augment-demo {op} exited with {}", out.status).into());
    }
    Ok(String::from_utf8(out.stdout)?.trim().to_string())
}

fn ac10_augmentation() -> Res<Vec<Check>> {
    let mut rng = seeded(10);
    let mut flips_ok = true;
    let mut erasers_ok = true;
    let cfg = AugmentConfig {
        erase_prob: 0.0,
        ..AugmentConfig::default()
    };
    for _ in 0..200 {
        let (h, w) = (rng.random_range(1..40), rng.random_range(1..40));
        let img = random_image(&mut rng, h, w)?;
        flips_ok &= horizontal_flip(&horizontal_flip(&img)) == img;
        let source = random_image(&mut rng, h, w)?;
        erasers_ok &= random_erasing(&img, &cfg, &mut rng)? == img
            && cutout(&img, &cfg, &mut rng)? == img
            && random_patch(&img, &source, &cfg, CropMode::Random, &mut rng)? == img;
    }

    let mut same_process = Vec::new();
    let mut mismatched = Vec::new();
    for (name, op) in [
        ("chain", DemoOp::Chain),
        ("erase", DemoOp::Erase),
        ("cutout", DemoOp::Cutout),
        ("patch", DemoOp::Patch),
    ] {
        let demo_cfg = AugmentConfig {
            target_h: 48,
            target_w: 24,
            seed: 11,
            ..AugmentConfig::default()
        };
        let (_, in_process) = augment_demo(None, op, &demo_cfg)?;
        let (first, second) = (demo_digest_via_binary(name)?, demo_digest_via_binary(name)?);
        if first != second || first != in_process {
            mismatched.push(name);
        }
        same_process.push(first);
    }
    Ok(vec![
        check("flip twice = identity", flips_ok, "200 images"),
        check(
            "erase_prob = 0 is identity",
            erasers_ok,
            "erasing, cutout, patch on 200 images",
        ),
        check(
            "bitwise reproducible across processes",
            mismatched.is_empty(),
            format!("{} ops, mismatched {mismatched:?}", same_process.len()),
        ),
    ])
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: 1,
            name: "gradient suite",
            time_limit: Some(Duration::from_secs(10)),
            run: ac1_gradients,
        },
        Criterion {
            id: 2,
            name: "pooling identities",
            time_limit: None,
            run: ac2_pooling,
        },
        Criterion {
            id: 3,
            name: "schedule exactness",
            time_limit: None,
            run: ac3_schedule,
        },
        Criterion {
            id: 4,
            name: "metrics oracle",
            time_limit: None,
            run: ac4_metrics,
        },
        Criterion {
            id: 5,
            name: "re-ranking degeneracy and gain",
            time_limit: Some(Duration::from_secs(30)),
            run: ac5_rerank,
        },
        Criterion {
            id: 6,
            name: "distillation identities",
            time_limit: None,
            run: ac6_distillation,
        },
        Criterion {
            id: 7,
            name: "query expansion degeneracies",
            time_limit: None,
            run: ac7_query_expansion,
        },
        Criterion {
            id: 8,
            name: "end-to-end determinism",
            time_limit: None,
            run: ac8_determinism,
        },
        Criterion {
            id: 9,
            name: "ROC sanity",
            time_limit: None,
            run: ac9_roc,
        },
        Criterion {
            id: 10,
            name: "augmentation contracts",
            time_limit: None,
            run: ac10_augmentation,
        },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = (c.run)();
        let elapsed = start.elapsed();
        let (pass, notes) = match result {
            Ok(checks) => {
                let mut pass = checks.iter().all(|k| k.pass);
                let mut notes: Vec<String> = checks
                    .iter()
                    .map(|k| {
                        let mark = if k.pass { "ok" } else { "FAILED" };
                        if k.detail.is_empty() {
                            format!("{}: {mark}", k.label)
                        } else {
                            format!("{}: {mark} ({})", k.label, k.detail)
                        }
                    })
                    .collect();
                if let Some(limit) = c.time_limit {
                    let in_time = elapsed < limit;
                    pass &= in_time;
                    notes.push(format!(
                        "runtime under {}s: {}",
                        limit.as_secs(),
                        if in_time { "ok" } else { "FAILED" }
                    ));
                }
                (pass, notes)
            }
            Err(e) => (false, vec![format!("error: {e}")]),
        };
        failed += usize::from(!pass);
        println!(
            "[{}] AC-{} {} ({:.2}s)",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
        for n in notes {
            println!("       {n}");
        }
    }
    println!(
        "{}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    let strict = std::env::var("REID_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
