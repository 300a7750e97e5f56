//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Behavioral shortfalls are reported, not raised, so the process exits 0
//! unless a check cannot run at all. `TEMPCON_ACCEPTANCE_STRICT=1` turns any
//! FAIL into a non-zero exit; `TEMPCON_ACCEPTANCE_QUICK=1` skips the two
//! training-heavy criteria.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use tempcon::augment::rot90;
use tempcon::dataspec::{GroupId, ImageRecord};
use tempcon::detkit::{
    evaluate_detections, generate_detection_dataset, match_detections, matriochka_sample, tile_image, BBox,
    DetectionSynthSpec, GroundTruthObject, Match, Prediction, TileSpec,
};
use tempcon::image::{Image, ImageSource};
use tempcon::moco::{
    checkpoint_load, ema_update, info_nce, info_nce_with_grad, masked_info_nce, ContrastiveConfig, Embedding,
    EncoderState, MemoryQueue,
};
use tempcon::probe::{evaluate, linear_probe, ProbeConfig};
use tempcon::rng::{derive_indexed, seeded};
use tempcon::Result;
use tempcon_cli::{load_data, run_pretrain, substream, ExperimentConfig};

const DESK_CONFIG: &str = include_str!("../../../configs/desk.json");
const SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

fn unit<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Reference InfoNCE: `log(sum exp(l_j)) - l_+` with the positive among the
/// logits, accumulated without shifting.
fn oracle_nce(q: &[f64], k_plus: &[f64], negatives: &[&[f64]], tau: f64) -> f64 {
    let pos = dot(q, k_plus) / tau;
    let z: f64 = pos.exp() + negatives.iter().map(|k| (dot(q, k) / tau).exp()).sum::<f64>();
    z.ln() - pos
}

fn c1_loss() -> Result<Verdict> {
    let mut rng = seeded(101);
    let d = 16;
    let tau = 0.2;
    let mut worst_value = 0.0f64;
    for n in [0usize, 1, 7, 63] {
        let q = unit(&mut rng, d);
        let k = unit(&mut rng, d);
        let a = dot(&q, &k);
        // Negatives share the positive's cosine with q.
        let negs: Vec<Embedding> = (0..n)
            .map(|_| {
                let r = unit(&mut rng, d);
                let rq = dot(&r, &q);
                let perp: Vec<f64> = r.iter().zip(&q).map(|(x, y)| x - rq * y).collect();
                let pn = perp.iter().map(|x| x * x).sum::<f64>().sqrt();
                let v = q
                    .iter()
                    .zip(&perp)
                    .map(|(qi, pi)| a * qi + (1.0 - a * a).sqrt() * pi / pn)
                    .collect();
                Embedding::from_unit(v)
            })
            .collect::<Result<_>>()?;
        let l = info_nce(&Embedding::from_unit(q)?, &Embedding::from_unit(k)?, &negs, tau)?;
        worst_value = worst_value.max((l - ((n + 1) as f64).ln()).abs());
    }

    let h = 1e-5;
    let mut worst_grad = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(1..=32);
        let tau = rng.random_range(0.05..1.0);
        let q = unit(&mut rng, d);
        let k = Embedding::from_unit(unit(&mut rng, d))?;
        let negs: Vec<Embedding> = (0..n).map(|_| Embedding::from_unit(unit(&mut rng, d))).collect::<Result<_>>()?;
        let (_, g) = info_nce_with_grad(&Embedding::from_unit(q.clone())?, &k, &negs, tau)?;
        let mut err2 = 0.0;
        for i in 0..d {
            let at = |delta: f64| -> Result<f64> {
                let mut v = q.clone();
                v[i] += delta;
                info_nce(&Embedding::from_unit(v)?, &k, &negs, tau)
            };
            let fd = (at(h)? - at(-h)?) / (2.0 * h);
            err2 += (fd - g[i]).powi(2);
        }
        let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        worst_grad = worst_grad.max(err2.sqrt() / gn);
    }
    verdict(
        worst_value <= 1e-6 && worst_grad < 1e-4,
        format!("max |L - ln(N+1)| = {worst_value:.1e}, max FD relative error = {worst_grad:.1e}"),
    )
}

fn c2_masking() -> Result<Verdict> {
    let mut rng = seeded(202);
    let d = 8;
    let tau = 0.2;
    let mut worst = 0.0f64;
    let mut ordered = true;
    for _ in 0..1000 {
        let cap = rng.random_range(4..=64);
        let fill = rng.random_range(1..=cap);
        let mut queue = MemoryQueue::new(cap, d)?;
        let keys: Vec<Embedding> = (0..fill).map(|_| Embedding::from_unit(unit(&mut rng, d))).collect::<Result<_>>()?;
        let groups: Vec<GroupId> = (0..fill).map(|_| GroupId(rng.random_range(0..5))).collect();
        queue.enqueue(&keys, &groups)?;
        let own = GroupId(rng.random_range(0..5));
        let q = Embedding::from_unit(unit(&mut rng, d))?;
        let k = Embedding::from_unit(unit(&mut rng, d))?;

        let masked = masked_info_nce(&q, own, &k, &queue, tau)?;
        let kept: Vec<&[f64]> = queue.filled().filter(|(_, g)| *g != own).map(|(k, _)| k).collect();
        let all: Vec<&[f64]> = queue.filled().map(|(k, _)| k).collect();
        let kept_emb: Vec<Embedding> = kept.iter().map(|k| Embedding::from_unit(k.to_vec())).collect::<Result<_>>()?;
        let filtered = info_nce(&q, &k, &kept_emb, tau)?;
        let oracle = oracle_nce(q.as_slice(), k.as_slice(), &kept, tau);
        let unmasked = oracle_nce(q.as_slice(), k.as_slice(), &all, tau);
        worst = worst.max((masked - filtered).abs()).max((masked - oracle).abs());
        ordered &= masked <= unmasked + 1e-12;
    }
    let mut full = MemoryQueue::new(16, d)?;
    let keys: Vec<Embedding> = (0..16).map(|_| Embedding::from_unit(unit(&mut rng, d))).collect::<Result<_>>()?;
    full.enqueue(&keys, &[GroupId(3); 16])?;
    let q = Embedding::from_unit(unit(&mut rng, d))?;
    let k = Embedding::from_unit(unit(&mut rng, d))?;
    let collided = masked_info_nce(&q, GroupId(3), &k, &full, tau)?;
    verdict(
        worst <= 1e-6 && ordered && collided.abs() < 1e-12,
        format!("max deviation {worst:.1e}, masked <= unmasked: {ordered}, full-collision loss {collided:.1e}"),
    )
}

fn c3_ema_queue() -> Result<Verdict> {
    let mut rng = seeded(303);
    let arch = ContrastiveConfig::default().encoder_arch(16);
    let mut ema_exact = true;
    for m in [0.0, 0.5, 0.9, 0.99, 0.999, 1.0, rng.random_range(0.0..1.0)] {
        let mut state = EncoderState::init(arch.clone(), &mut rng)?;
        for p in state.key.iter_mut() {
            p.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let before = state.clone();
        ema_update(&mut state, m)?;
        for ((k0, q), k1) in before.key.iter().zip(before.query.iter()).zip(state.key.iter()) {
            for ((a, b), c) in k0.data.iter().zip(&q.data).zip(&k1.data) {
                let expect = (m * f64::from(*a) + (1.0 - m) * f64::from(*b)) as f32;
                ema_exact &= expect.to_bits() == c.to_bits();
            }
        }
        ema_exact &= state.query.bitwise_eq(&before.query);
    }

    // Oracle entries: (serial, age); the oldest is evicted first.
    let mut fifo_ok = true;
    for seq in 0..10_000u64 {
        let mut rng = seeded(derive_indexed(304, &[seq]));
        let cap = rng.random_range(1..=16);
        let mut queue = MemoryQueue::new(cap, 2)?;
        let mut oracle: Vec<(u32, u64)> = Vec::new();
        let mut serial = 0u32;
        for _ in 0..rng.random_range(1..=12) {
            let b = rng.random_range(1..=cap);
            let keys: Vec<Embedding> = (0..b).map(|_| Embedding::from_unit(unit(&mut rng, 2))).collect::<Result<_>>()?;
            let ids: Vec<GroupId> = (0..b as u32).map(|i| GroupId(serial + i)).collect();
            queue.enqueue(&keys, &ids)?;
            for id in &ids {
                oracle.iter_mut().for_each(|e| e.1 += 1);
                oracle.push((id.0, 0));
                if oracle.len() > cap {
                    let oldest = (0..oracle.len()).max_by_key(|&i| oracle[i].1).expect("non-empty");
                    oracle.remove(oldest);
                }
            }
            serial += b as u32;
            let mut expect = oracle.clone();
            expect.sort_by_key(|e| std::cmp::Reverse(e.1));
            let got: Vec<u32> = queue.slots_oldest_first().iter().map(|&s| queue.group_id(s).0).collect();
            fifo_ok &= got == expect.iter().map(|e| e.0).collect::<Vec<_>>();
        }
    }
    verdict(ema_exact && fifo_ok, format!("EMA bit-exact: {ema_exact}, FIFO matches age oracle: {fifo_ok}"))
}

/// Serves every image rotated by 90 degrees.
struct Rotated<'a>(&'a dyn ImageSource);

impl ImageSource for Rotated<'_> {
    fn load(&self, record: &ImageRecord) -> Result<Image> {
        Ok(rot90(&self.0.load(record)?, 1))
    }
}

struct ProbeRun {
    upright: f64,
    rotated: f64,
}

fn probe_state(cfg: &ExperimentConfig, state: &EncoderState) -> Result<ProbeRun> {
    let data = load_data(cfg)?;
    let pc = ProbeConfig {
        label_fraction: 0.1,
        seed: substream(cfg, "probe"),
        ..cfg.probe.frozen.clone()
    };
    let out = linear_probe(state, &data.train, &data.val, data.source.as_ref(), &pc)?;
    let rot = evaluate(&state.arch, &state.query, &out.head, &data.val, &Rotated(data.source.as_ref()))?;
    Ok(ProbeRun {
        upright: out.best.val_top1_accuracy,
        rotated: rot.top1,
    })
}

fn pretrain_and_probe(cfg: &ExperimentConfig) -> Result<ProbeRun> {
    let art = run_pretrain(cfg, |_| {})?;
    probe_state(cfg, &checkpoint_load(&art.checkpoint)?.state)
}

fn desk_config(seed: u64, dihedral: bool, dir: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_json(DESK_CONFIG)?.with_overrides(Some(seed), Some(dir.to_path_buf()));
    cfg.pretrain.augmentation.dihedral_enabled = dihedral;
    Ok(cfg)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pretrained (dihedral on and off) and random-init probe runs per seed.
struct TrainingRuns {
    on: Vec<ProbeRun>,
    off: Vec<ProbeRun>,
    random: Vec<ProbeRun>,
}

fn training_runs() -> Result<TrainingRuns> {
    let tmp = tempfile::tempdir().map_err(|e| tempcon::Error::Validation(e.to_string()))?;
    let mut runs = TrainingRuns {
        on: vec![],
        off: vec![],
        random: vec![],
    };
    for seed in SEEDS {
        let on = desk_config(seed, true, &tmp.path().join(format!("s{seed}_on")))?;
        let off = desk_config(seed, false, &tmp.path().join(format!("s{seed}_off")))?;
        let t = Instant::now();
        runs.on.push(pretrain_and_probe(&on)?);
        runs.off.push(pretrain_and_probe(&off)?);
        let arch = on.pretrain.contrastive.encoder_arch(on.pretrain.augmentation.output_size);
        let random = EncoderState::init(arch, &mut seeded(substream(&on, "random-init")))?;
        runs.random.push(probe_state(&on, &random)?);
        eprintln!(
            "  seed {seed}: on {:.3}/{:.3}  off {:.3}/{:.3}  random {:.3}  ({:.0} s)",
            runs.on[runs.on.len() - 1].upright,
            runs.on[runs.on.len() - 1].rotated,
            runs.off[runs.off.len() - 1].upright,
            runs.off[runs.off.len() - 1].rotated,
            runs.random[runs.random.len() - 1].upright,
            t.elapsed().as_secs_f64()
        );
    }
    Ok(runs)
}

fn c4_label_efficiency(runs: &TrainingRuns) -> Result<Verdict> {
    let pre = mean(runs.on.iter().map(|r| r.upright));
    let rand = mean(runs.random.iter().map(|r| r.upright));
    let off = mean(runs.off.iter().map(|r| r.upright));
    let margin = 100.0 * (pre - rand);
    verdict(
        margin >= 10.0,
        format!(
            "pretrained {:.1}% vs random init {:.1}%: {margin:+.1} points (dihedral off: {:+.1})",
            100.0 * pre,
            100.0 * rand,
            100.0 * (off - rand)
        ),
    )
}

fn c5_rotation(runs: &TrainingRuns) -> Result<Verdict> {
    let gap = |v: &[ProbeRun]| 100.0 * mean(v.iter().map(|r| r.upright - r.rotated));
    let (on, off) = (gap(&runs.on), gap(&runs.off));
    verdict(
        on.abs() <= 2.0 && off > on,
        format!("upright - rotated: dihedral on {on:+.1} points, off {off:+.1} points"),
    )
}

fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
    BBox::new(x0, y0, x1, y1).expect("valid box")
}

fn gt(img: &str, b: BBox, class_id: usize) -> GroundTruthObject {
    GroundTruthObject {
        image_id: img.into(),
        bbox: b,
        class_id,
    }
}

fn pred(img: &str, b: BBox, class_id: usize, score: f64) -> Prediction {
    Prediction {
        image_id: img.into(),
        bbox: b,
        class_id,
        score,
    }
}

fn oracle_iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let h = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = w * h;
    let union = (a.xmax - a.xmin) * (a.ymax - a.ymin) + (b.xmax - b.xmin) * (b.ymax - b.ymin) - inter;
    if inter == 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Reference AP: rank predictions, mark hits by greedy matching per image,
/// then for every hit add `1/G` times the best precision at any rank at or
/// after it.
fn oracle_ap(preds: &[Prediction], gts: &[GroundTruthObject], thr: f64, agnostic: bool) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].score.partial_cmp(&preds[a].score).expect("finite").then(a.cmp(&b)));
    let mut claimed = vec![false; gts.len()];
    let mut hit = Vec::with_capacity(order.len());
    for &i in &order {
        let p = &preds[i];
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gts.iter().enumerate() {
            if claimed[j] || g.image_id != p.image_id || (!agnostic && g.class_id != p.class_id) {
                continue;
            }
            let v = oracle_iou(&p.bbox, &g.bbox);
            if v > thr && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            claimed[j] = true;
        }
        hit.push(best.is_some());
    }
    let precision: Vec<f64> = (0..hit.len())
        .map(|r| hit[..=r].iter().filter(|h| **h).count() as f64 / (r + 1) as f64)
        .collect();
    (0..hit.len())
        .filter(|&r| hit[r])
        .map(|r| precision[r..].iter().copied().fold(0.0, f64::max) / gts.len() as f64)
        .sum()
}

fn oracle_map(preds: &[Prediction], gts: &[GroundTruthObject], classes: usize, thr: f64) -> f64 {
    let mut aps = vec![];
    for c in 0..classes {
        let p: Vec<Prediction> = preds.iter().filter(|x| x.class_id == c).cloned().collect();
        let g: Vec<GroundTruthObject> = gts.iter().filter(|x| x.class_id == c).cloned().collect();
        if !p.is_empty() || !g.is_empty() {
            aps.push(oracle_ap(&p, &g, thr, false));
        }
    }
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

fn random_box<R: Rng>(rng: &mut R) -> BBox {
    let x0 = f64::from(rng.random_range(0..12u32));
    let y0 = f64::from(rng.random_range(0..12u32));
    bx(x0, y0, x0 + f64::from(rng.random_range(1..6u32)), y0 + f64::from(rng.random_range(1..6u32)))
}

fn c6_metrics() -> Result<Verdict> {
    let classes: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let mut rng = seeded(606);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let images = ["i0", "i1"];
        let gts: Vec<GroundTruthObject> = (0..rng.random_range(0..=4))
            .map(|_| gt(images[rng.random_range(0..2)], random_box(&mut rng), rng.random_range(0..3)))
            .collect();
        let preds: Vec<Prediction> = (0..rng.random_range(0..=6))
            .map(|_| {
                let score = f64::from(rng.random_range(1..=10u32)) / 10.0;
                pred(images[rng.random_range(0..2)], random_box(&mut rng), rng.random_range(0..3), score)
            })
            .collect();
        for thr in [0.0, 0.5] {
            let r = evaluate_detections(&preds, &gts, &classes, &[0.5], thr)?;
            worst = worst
                .max((r.level1.ap - oracle_ap(&preds, &gts, thr, true)).abs())
                .max((r.level2.map - oracle_map(&preds, &gts, 3, thr)).abs());
        }
    }

    let m = |p: usize, g: Option<usize>| Match { pred: p, gt: g };
    let target = bx(0.0, 0.0, 10.0, 10.0);
    // 2 x 10 overlap over a 198 union: IoU 0.0101.
    let sliver = pred("x", bx(9.8, 0.0, 19.8, 10.0), 0, 0.9);
    let touching = pred("x", bx(10.0, 0.0, 20.0, 10.0), 0, 0.9);
    let cases: Vec<(Vec<Prediction>, Vec<GroundTruthObject>, bool, Vec<Match>)> = vec![
        (vec![sliver.clone()], vec![gt("x", target, 0)], true, vec![m(0, Some(0))]),
        (vec![touching], vec![gt("x", target, 0)], true, vec![m(0, None)]),
        // Two claims on one object: the higher score wins.
        (
            vec![pred("x", bx(1.0, 1.0, 10.0, 10.0), 0, 0.4), pred("x", bx(0.0, 0.0, 9.0, 9.0), 0, 0.8)],
            vec![gt("x", target, 0)],
            true,
            vec![m(1, Some(0)), m(0, None)],
        ),
        // The best-overlapping free object is claimed.
        (
            vec![pred("x", bx(0.0, 0.0, 10.0, 10.0), 0, 0.9), pred("x", bx(5.0, 0.0, 15.0, 10.0), 0, 0.7)],
            vec![gt("x", bx(5.0, 0.0, 15.0, 10.0), 0), gt("x", target, 0)],
            true,
            vec![m(0, Some(1)), m(1, Some(0))],
        ),
        // Class-aware matching ignores other classes.
        (vec![pred("x", target, 1, 0.9)], vec![gt("x", target, 0)], false, vec![m(0, None)]),
        (vec![pred("x", target, 1, 0.9)], vec![gt("x", target, 0)], true, vec![m(0, Some(0))]),
    ];
    let mut hand_ok = (oracle_iou(&sliver.bbox, &target) - 2.0 / 198.0).abs() < 1e-12;
    for (p, g, agnostic, expect) in &cases {
        hand_ok &= &match_detections(p, g, 0.0, *agnostic)? == expect;
    }
    verdict(
        worst <= 1e-9 && hand_ok,
        format!("max |AP - oracle| over 200 fixtures = {worst:.1e}, hand fixtures agree: {hand_ok}"),
    )
}

fn c7_tiling_sampling() -> Result<Verdict> {
    let windows = tile_image(1000, 1000, &TileSpec::default())?;
    let mut covered = vec![false; 1000 * 1000];
    for w in &windows {
        for y in w.y..w.y + w.height {
            for x in w.x..w.x + w.width {
                covered[(y * 1000 + x) as usize] = true;
            }
        }
    }
    let tiling_ok = windows.len() == 9 && covered.iter().all(|c| *c);

    let spec = DetectionSynthSpec::default();
    let mut worst_dev = 0.0f64;
    let mut worst_count = 0.0f64;
    let mut nested = true;
    for seed in SEEDS {
        let ds = generate_detection_dataset(&spec, &mut seeded(derive_indexed(707, &[seed, 0])))?;
        let counts = ds.image_counts();
        let full: Vec<u64> = ds.class_counts();
        let total: u64 = full.iter().sum();
        let dominant: Vec<usize> = (0..full.len()).filter(|&c| full[c] as f64 >= 0.1 * total as f64).collect();
        let out = matriochka_sample(&counts, &[0.5, 0.1], 0.03, &mut seeded(derive_indexed(707, &[seed, 1])))?;
        let big: BTreeSet<&String> = out.levels[0].image_ids.iter().collect();
        nested &= out.levels[1].image_ids.iter().all(|i| big.contains(i));
        for level in &out.levels {
            worst_count = worst_count.max(level.count_error().abs());
            for &c in &dominant {
                worst_dev = worst_dev.max(level.proportion_deviation[c].abs());
            }
        }
    }
    verdict(
        tiling_ok && nested && worst_dev <= 0.03 && worst_count <= 0.1,
        format!(
            "{} windows, full coverage: {}; nested: {nested}, max dominant-class deviation {worst_dev:.4}, max count error {:.2}%",
            windows.len(),
            covered.iter().all(|c| *c),
            100.0 * worst_count
        ),
    )
}

fn c8_reproducibility() -> Result<Verdict> {
    let tmp = tempfile::tempdir().map_err(|e| tempcon::Error::Validation(e.to_string()))?;
    let run = |name: &str| -> Result<(Vec<f64>, Vec<u8>)> {
        let mut cfg = desk_config(8, true, &tmp.path().join(name))?;
        cfg.pretrain.contrastive.epochs = 3;
        let art = run_pretrain(&cfg, |_| {})?;
        let bytes = std::fs::read(&art.checkpoint).map_err(|source| tempcon::Error::Io {
            path: art.checkpoint.clone(),
            source,
        })?;
        Ok((art.log.iter().map(|e| e.mean_loss).collect(), bytes))
    };
    let (la, ca) = run("a")?;
    let (lb, cb) = run("b")?;
    let max_diff = la.iter().zip(&lb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let identical = ca == cb;
    verdict(
        la.len() == lb.len() && max_diff <= 1e-5 && identical,
        format!("max epoch-loss difference {max_diff:.1e}, checkpoints bit-identical: {identical}"),
    )
}

fn flag(name: &str) -> bool {
    std::env::var(name).is_ok_and(|v| v == "1")
}

enum Status {
    Pass,
    Fail,
    Error,
}

fn line(id: u32, name: &str, t: Instant, r: Result<Verdict>) -> Status {
    match r {
        Ok(v) => {
            println!(
                "criterion {id} {name}: {} ({}) [{:.1} s]",
                if v.pass { "PASS" } else { "FAIL" },
                v.detail,
                t.elapsed().as_secs_f64()
            );
            if v.pass {
                Status::Pass
            } else {
                Status::Fail
            }
        }
        Err(e) => {
            println!("criterion {id} {name}: ERROR ({e})");
            Status::Error
        }
    }
}

fn main() -> ExitCode {
    let quick = flag("TEMPCON_ACCEPTANCE_QUICK");
    let strict = flag("TEMPCON_ACCEPTANCE_STRICT");
    let mut statuses = Vec::new();

    let t = Instant::now();
    statuses.push(line(1, "loss correctness", t, c1_loss()));
    let t = Instant::now();
    statuses.push(line(2, "masking semantics", t, c2_masking()));
    let t = Instant::now();
    statuses.push(line(3, "EMA and queue", t, c3_ema_queue()));
    if quick {
        println!("criterion 4 label efficiency: SKIPPED (TEMPCON_ACCEPTANCE_QUICK)");
        println!("criterion 5 rotation invariance: SKIPPED (TEMPCON_ACCEPTANCE_QUICK)");
    } else {
        let t = Instant::now();
        match training_runs() {
            Ok(runs) => {
                statuses.push(line(4, "label efficiency", t, c4_label_efficiency(&runs)));
                statuses.push(line(5, "rotation invariance", t, c5_rotation(&runs)));
            }
            Err(e) => {
                println!("criterion 5 rotation invariance: ERROR (shares the criterion 4 runs)");
                statuses.push(line(4, "label efficiency", t, Err(e)));
            }
        }
    }
    let t = Instant::now();
    statuses.push(line(6, "detection metrics", t, c6_metrics()));
    let t = Instant::now();
    statuses.push(line(7, "tiling and sampling", t, c7_tiling_sampling()));
    let t = Instant::now();
    statuses.push(line(8, "reproducibility", t, c8_reproducibility()));

    let broken = statuses.iter().any(|s| matches!(s, Status::Error));
    let failed = statuses.iter().any(|s| matches!(s, Status::Fail));
    if broken || (strict && failed) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
