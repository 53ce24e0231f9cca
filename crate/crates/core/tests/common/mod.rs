#![allow(dead_code)]

use dyml::evaluator::relevance_tier;
use dyml::geometry::EmbeddingModel;
use dyml::losses::{
    baseline_loss, csl_cls, csl_joint, csl_pair, multi_scale_sum, BaselineKind, LossConfig, LossOutput, ProxyKey,
};
use dyml::proxies::{ClassProxies, ProxyBank};
use dyml::taxonomy::Taxonomy;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;

pub fn tax421() -> Taxonomy {
    Taxonomy::new(vec![4, 2, 1], vec![vec![0, 0, 1, 1], vec![0, 0]]).unwrap()
}

pub fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v = gaussian(rng, d);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn random_chains(rng: &mut ChaCha8Rng, t: &Taxonomy, n: usize) -> Vec<Vec<usize>> {
    (0..n).map(|_| t.chain(rng.random_range(0..t.num_fine())).to_vec()).collect()
}

pub fn random_config(rng: &mut ChaCha8Rng) -> LossConfig {
    let m1 = rng.random_range(0.0..0.2);
    let m2 = m1 + rng.random_range(0.01..0.2);
    LossConfig {
        alpha: rng.random_range(1.0..32.0),
        margins: vec![m1, m2, m2 + rng.random_range(0.01..0.2)],
        pair_weight: rng.random_range(0.05..1.0),
        softmax_scale: rng.random_range(1.0..32.0),
        cosface_scale: rng.random_range(4.0..64.0),
        cosface_margin: rng.random_range(0.0..0.5),
        circle_gamma: rng.random_range(4.0..256.0),
        circle_margin: rng.random_range(0.05..0.4),
        triplet_margin: rng.random_range(0.05..0.5),
        npair_reg: rng.random_range(0.0..0.01),
        ms_alpha: rng.random_range(1.0..4.0),
        ms_beta: rng.random_range(10.0..50.0),
        ms_lambda: rng.random_range(0.0..1.0),
        ms_epsilon: rng.random_range(0.05..0.2),
    }
}

/// Every loss under test, identified by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Probe {
    CslCls,
    CslPair,
    CslJoint,
    Baseline(BaselineKind),
    MultiScale(BaselineKind),
}

impl Probe {
    pub fn all() -> Vec<Probe> {
        let mut v = vec![Probe::CslCls, Probe::CslPair, Probe::CslJoint];
        v.extend(BaselineKind::ALL.into_iter().map(Probe::Baseline));
        v.extend(BaselineKind::ALL.into_iter().map(Probe::MultiScale));
        v
    }

    pub fn name(self) -> String {
        match self {
            Probe::CslCls => "csl_cls".into(),
            Probe::CslPair => "csl_pair".into(),
            Probe::CslJoint => "csl_joint".into(),
            Probe::Baseline(k) => k.name().into(),
            Probe::MultiScale(k) => format!("multi_scale_sum({})", k.name()),
        }
    }
}

/// One gradient-check instance: a batch, its labels, proxy sets and a
/// loss configuration. `proxies[s]` is the set used at scale `s`; CSL uses
/// `proxies[0]` as its shared fine bank.
pub struct Instance {
    pub probe: Probe,
    pub taxonomy: Taxonomy,
    pub embeddings: Vec<Vec<f64>>,
    pub chains: Vec<Vec<usize>>,
    pub proxies: Vec<ClassProxies>,
    pub config: LossConfig,
    pub scale: usize,
}

impl Instance {
    pub fn random(probe: Probe, rng: &mut ChaCha8Rng) -> Self {
        let d = rng.random_range(4..=16);
        let n = rng.random_range(4..=10);
        let config = random_config(rng);
        Self::sized(probe, rng, n, d, config)
    }

    /// `n >= 3` unit embeddings of dimension `d` on taxonomy [4, 2, 1],
    /// with at least one fine positive pair and one fine negative.
    pub fn sized(probe: Probe, rng: &mut ChaCha8Rng, n: usize, d: usize, config: LossConfig) -> Self {
        let taxonomy = tax421();
        let mut chains = random_chains(rng, &taxonomy, n);
        chains[1] = chains[0].clone();
        let other = (chains[0][0] + 1 + rng.random_range(0..3)) % 4;
        chains[2] = taxonomy.chain(other).to_vec();
        let embeddings = (0..n).map(|_| unit(rng, d)).collect();
        let proxies = (0..3)
            .map(|s| ClassProxies::from_vectors((0..taxonomy.num_classes(s)).map(|_| unit(rng, d)).collect()).unwrap())
            .collect();
        let scale = rng.random_range(0..2);
        Instance { probe, taxonomy, embeddings, chains, proxies, config, scale }
    }

    pub fn eval(&self, embeddings: &[Vec<f64>], proxies: &[ClassProxies]) -> LossOutput {
        let bank = || ProxyBank::new(&self.taxonomy, proxies[0].clone()).unwrap();
        match self.probe {
            Probe::CslCls => csl_cls(embeddings, &self.chains, &bank(), &self.config).unwrap(),
            Probe::CslPair => csl_pair(embeddings, &self.chains, &self.config).unwrap(),
            Probe::CslJoint => csl_joint(embeddings, &self.chains, &bank(), &self.config).unwrap(),
            Probe::Baseline(kind) => {
                let labels: Vec<usize> = self.chains.iter().map(|c| c[self.scale]).collect();
                baseline_loss(kind, embeddings, &labels, Some(&proxies[self.scale]), self.scale, &self.config).unwrap()
            }
            Probe::MultiScale(kind) => multi_scale_sum(kind, embeddings, &self.chains, proxies, &self.config).unwrap(),
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Comparison floor for a scalar of magnitude `f`: central-difference
/// roundoff grows like `eps * |f| / h`.
pub fn floor_for(f: f64) -> f64 {
    1e-6 * f.abs().max(1.0)
}

/// Outcome of checking one probe.
#[derive(Debug, Clone, Copy)]
pub enum Check {
    /// Largest relative error over every coordinate.
    Smooth(f64),
    /// The difference quotient changes when `h` is halved: a kink lies
    /// within `h` of the probe, where central differences are no oracle.
    Kink,
}

/// Compares `analytic[k]` against central differences of `f` along each
/// coordinate, where `f(k, delta)` evaluates the scalar with coordinate `k`
/// shifted by `delta`.
pub fn check_coordinates(value: f64, analytic: &[f64], f: impl Fn(usize, f64) -> f64) -> Check {
    let floor = floor_for(value);
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let diff = |h: f64| (f(k, h) - f(k, -h)) / (2.0 * h);
        let (full, half) = (diff(FD_STEP), diff(FD_STEP / 2.0));
        if !(full.is_finite() && half.is_finite()) || rel_err(full, half, floor) > 1e-4 {
            return Check::Kink;
        }
        let e = rel_err(a, full, floor);
        worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
    }
    Check::Smooth(worst)
}

/// Gradient check of one loss instance over every embedding and proxy
/// coordinate.
pub fn loss_gradient_check(inst: &Instance) -> Check {
    let out = inst.eval(&inst.embeddings, &inst.proxies);
    let (n, d) = (inst.embeddings.len(), inst.embeddings[0].len());
    let proxy_scales = match inst.probe {
        Probe::CslCls | Probe::CslJoint => vec![0],
        Probe::Baseline(k) if k.uses_proxies() => vec![inst.scale],
        Probe::MultiScale(k) if k.uses_proxies() => vec![0, 1, 2],
        _ => vec![],
    };
    let slots: Vec<(usize, usize)> =
        proxy_scales.iter().flat_map(|&s| (0..inst.proxies[s].len()).map(move |c| (s, c))).collect();
    let mut analytic: Vec<f64> = out.grad_embeddings.iter().flatten().copied().collect();
    let zero = vec![0.0; d];
    for &(s, c) in &slots {
        analytic.extend(out.grad_proxies.get(&ProxyKey { scale: s, class: c }).unwrap_or(&zero));
    }
    check_coordinates(out.value, &analytic, |k, delta| {
        if k < n * d {
            let mut e = inst.embeddings.clone();
            e[k / d][k % d] += delta;
            inst.eval(&e, &inst.proxies).value
        } else {
            let (s, c) = slots[(k - n * d) / d];
            let mut p = inst.proxies.clone();
            p[s].vectors_mut()[c][(k - n * d) % d] += delta;
            inst.eval(&inst.embeddings, &p).value
        }
    })
}

/// Draws instances until `probes` smooth ones are checked. Returns the
/// worst error and the number of redrawn kink probes.
pub fn gradient_probes(probe: Probe, probes: usize, rng: &mut ChaCha8Rng) -> (f64, usize) {
    let (mut worst, mut kinks, mut done) = (0.0f64, 0, 0);
    while done < probes {
        match loss_gradient_check(&Instance::random(probe, rng)) {
            Check::Smooth(e) => {
                worst = worst.max(e);
                done += 1;
            }
            Check::Kink => kinks += 1,
        }
        assert!(kinks <= probes, "{}: too many kink probes", probe.name());
    }
    (worst, kinks)
}

/// Model-parameter gradient check through the normalized embedding: the
/// scalar is `sum_b <w_b, model(x_b)>` for fixed random weights `w_b`.
pub fn model_gradient_check(rng: &mut ChaCha8Rng) -> Check {
    let d_in = rng.random_range(2..=8);
    let d_out = rng.random_range(2..=8);
    let hidden = if rng.random_bool(0.5) { Some(rng.random_range(2..=8)) } else { None };
    let bias = rng.random_bool(0.5);
    let model = EmbeddingModel::random(d_in, d_out, hidden, bias, rng.random()).unwrap();
    let xs: Vec<Vec<f64>> = (0..3).map(|_| gaussian(rng, d_in)).collect();
    let ws: Vec<Vec<f64>> = (0..3).map(|_| gaussian(rng, d_out)).collect();
    if xs.iter().any(|x| model.forward(x).is_err()) {
        // every hidden unit is inactive: no gradient to check
        return Check::Kink;
    }
    let scalar = |m: &EmbeddingModel| -> f64 {
        xs.iter()
            .zip(&ws)
            .map(|(x, w)| m.forward(x).map_or(f64::NAN, |p| p.embedding().iter().zip(w).map(|(a, b)| a * b).sum()))
            .sum()
    };
    let mut analytic = vec![0.0; model.num_params()];
    for (x, w) in xs.iter().zip(&ws) {
        let pass = model.forward(x).unwrap();
        model.backward(x, &pass, w, &mut analytic);
    }
    check_coordinates(scalar(&model), &analytic, |k, delta| {
        let mut p = model.params().to_vec();
        p[k] += delta;
        scalar(&EmbeddingModel::from_params(d_in, d_out, hidden, bias, p).unwrap())
    })
}

// ---- brute-force retrieval oracles ----

/// Gallery order for one query by selection: repeatedly take the remaining
/// item with the largest similarity, lowest id first on ties.
pub fn oracle_order(query: usize, emb: &[Vec<f64>]) -> Vec<usize> {
    let sim = |g: usize| emb[query].iter().zip(&emb[g]).map(|(a, b)| a * b).sum::<f64>();
    let mut left: Vec<usize> = (0..emb.len()).filter(|&g| g != query).collect();
    let mut order = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for i in 1..left.len() {
            if sim(left[i]) > sim(left[best]) {
                best = i;
            }
        }
        order.push(left.remove(best));
    }
    order
}

pub fn oracle_cmc(orders: &[Vec<usize>], chains: &[Vec<usize>], scale: usize, k: usize) -> (f64, usize) {
    let mut hits = 0.0;
    let mut queries = 0;
    for (q, order) in orders.iter().enumerate() {
        if !order.iter().any(|&g| chains[g][scale] == chains[q][scale]) {
            continue;
        }
        queries += 1;
        if order.iter().take(k).any(|&g| chains[g][scale] == chains[q][scale]) {
            hits += 1.0;
        }
    }
    (hits / queries as f64, queries)
}

/// Mean over positives of precision at that positive's rank.
pub fn oracle_ap(relevant: &[bool]) -> Option<f64> {
    let ranks: Vec<usize> = (0..relevant.len()).filter(|&r| relevant[r]).collect();
    if ranks.is_empty() {
        return None;
    }
    let total: f64 = ranks.iter().map(|&r| relevant[..=r].iter().filter(|&&x| x).count() as f64 / (r + 1) as f64).sum();
    Some(total / ranks.len() as f64)
}

pub fn oracle_map(orders: &[Vec<usize>], chains: &[Vec<usize>], scale: usize) -> f64 {
    let aps: Vec<f64> = orders
        .iter()
        .enumerate()
        .filter_map(|(q, o)| oracle_ap(&o.iter().map(|&g| chains[g][scale] == chains[q][scale]).collect::<Vec<_>>()))
        .collect();
    aps.iter().sum::<f64>() / aps.len() as f64
}

pub fn oracle_si(a: &[usize], b: &[usize], k: usize) -> f64 {
    a[..k].iter().filter(|x| b[..k].contains(x)).count() as f64 / k as f64
}

pub fn oracle_asi(a: &[usize], b: &[usize]) -> f64 {
    (1..=a.len()).map(|k| oracle_si(a, b, k)).sum::<f64>() / a.len() as f64
}

/// Predicted order regrouped tier by tier.
pub fn oracle_tiered(query: usize, order: &[usize], chains: &[Vec<usize>]) -> Vec<usize> {
    let m = chains[0].len();
    let mut out = Vec::new();
    for tier in 0..=m {
        out.extend(order.iter().copied().filter(|&g| relevance_tier(&chains[query], &chains[g]) == tier));
    }
    out
}

pub struct OracleSweep {
    pub precision: f64,
    pub recall: f64,
    pub accepted: usize,
    pub true_positives: usize,
}

pub fn oracle_sweep(emb: &[Vec<f64>], chains: &[Vec<usize>], scale: usize, t: f64) -> OracleSweep {
    let (mut tp, mut acc, mut pos) = (0, 0, 0);
    for i in 0..emb.len() {
        for j in i + 1..emb.len() {
            let s: f64 = emb[i].iter().zip(&emb[j]).map(|(a, b)| a * b).sum();
            let same = chains[i][scale] == chains[j][scale];
            pos += same as usize;
            if s >= t {
                acc += 1;
                tp += same as usize;
            }
        }
    }
    OracleSweep {
        precision: if acc == 0 { f64::NAN } else { tp as f64 / acc as f64 },
        recall: tp as f64 / pos as f64,
        accepted: acc,
        true_positives: tp,
    }
}

/// Equal within `tol`, or both NaN.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= tol
}

/// Random retrieval instance: `n <= 50` embeddings on taxonomy [4, 2, 1],
/// sometimes quantized so that exact similarity ties occur.
pub fn retrieval_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let t = tax421();
    let n = rng.random_range(2..=50);
    let d = rng.random_range(2..=6);
    let quantize = rng.random_bool(0.3);
    let emb = (0..n)
        .map(|_| {
            if quantize {
                let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1i32..=1) as f64).collect();
                if v.iter().all(|&x| x == 0.0) {
                    let mut e = vec![0.0; d];
                    e[0] = 1.0;
                    e
                } else {
                    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| x / n).collect()
                }
            } else {
                unit(rng, d)
            }
        })
        .collect();
    (emb, random_chains(rng, &t, n))
}

/// Checks every retrieval metric of one random instance against the
/// brute-force oracles. Returns a description of the first mismatch.
pub fn metric_oracle_instance(rng: &mut ChaCha8Rng) -> std::result::Result<(), String> {
    use dyml::evaluator::{asi, average_precision, evaluate, rank_all, set_intersection, threshold_sweep};
    const TOL: f64 = 1e-12;
    let (emb, chains) = retrieval_instance(rng);
    let n = emb.len();
    let t = tax421();
    let orders: Vec<Vec<usize>> = (0..n).map(|q| oracle_order(q, &emb)).collect();

    let rankings = rank_all(&emb).map_err(|e| e.to_string())?;
    for (q, r) in rankings.iter().enumerate() {
        if r.query != q || r.order != orders[q] {
            return Err(format!("ranking of query {q} differs"));
        }
    }

    let report = evaluate(&emb, &chains, &t).map_err(|e| e.to_string())?;
    for s in 0..3 {
        let sr = &report.scales[s];
        for (i, &k) in sr.ranks.iter().enumerate() {
            let (want, queries) = oracle_cmc(&orders, &chains, s, k);
            if !close(sr.cmc[i], want, TOL) || sr.queries != queries || sr.skipped != n - queries {
                return Err(format!("CMC@{k} at scale {s}: {} vs {want}", sr.cmc[i]));
            }
        }
        let want = oracle_map(&orders, &chains, s);
        if !close(sr.map, want, TOL) {
            return Err(format!("mAP at scale {s}: {} vs {want}", sr.map));
        }
    }
    for i in 0..report.ranks.len() {
        let mean = report.scales.iter().map(|s| s.cmc[i]).sum::<f64>() / 3.0;
        if !close(report.cmc[i], mean, TOL) {
            return Err("overall CMC is not the scale mean".into());
        }
    }
    if !close(report.map, report.scales.iter().map(|s| s.map).sum::<f64>() / 3.0, TOL) {
        return Err("overall mAP is not the scale mean".into());
    }
    let want_asi =
        (0..n).map(|q| oracle_asi(&orders[q], &oracle_tiered(q, &orders[q], &chains))).sum::<f64>() / n as f64;
    if !close(report.asi, want_asi, TOL) {
        return Err(format!("ASI {} vs {want_asi}", report.asi));
    }

    for q in 0..n {
        let rel: Vec<bool> = orders[q].iter().map(|&g| chains[g][0] == chains[q][0]).collect();
        let (got, want) = (average_precision(&rel), oracle_ap(&rel));
        if got.is_some() != want.is_some() || !close(got.unwrap_or(0.0), want.unwrap_or(0.0), TOL) {
            return Err(format!("AP of query {q}: {got:?} vs {want:?}"));
        }
    }

    if n >= 2 {
        let a: Vec<usize> = orders[0].clone();
        let mut b = a.clone();
        for i in (1..b.len()).rev() {
            b.swap(i, rng.random_range(0..=i));
        }
        for k in 1..=a.len() {
            let got = set_intersection(&a, &b, k).map_err(|e| e.to_string())?;
            if !close(got, oracle_si(&a, &b, k), TOL) {
                return Err(format!("SI at depth {k}"));
            }
        }
        let got = asi(&a, &b).map_err(|e| e.to_string())?;
        if !close(got, oracle_asi(&a, &b), TOL) {
            return Err("ASI of a shuffled list".into());
        }
    }

    let thresholds: Vec<f64> = (0..9).map(|i| -1.0 + 0.25 * i as f64).chain([rng.random_range(-1.0..1.0)]).collect();
    for s in 0..3 {
        let pairs = n * (n - 1) / 2;
        let pos =
            (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| chains[i][s] == chains[j][s]).count();
        match threshold_sweep(&emb, &chains, s, &thresholds) {
            Err(_) if pos == 0 || pos == pairs => {}
            Err(e) => return Err(format!("sweep at scale {s}: {e}")),
            Ok(_) if pos == 0 || pos == pairs => return Err(format!("sweep at degenerate scale {s} accepted")),
            Ok(rows) => {
                for (row, &th) in rows.iter().zip(&thresholds) {
                    let o = oracle_sweep(&emb, &chains, s, th);
                    if !close(row.precision, o.precision, TOL)
                        || !close(row.recall, o.recall, TOL)
                        || row.accepted != o.accepted
                        || row.true_positives != o.true_positives
                    {
                        return Err(format!("sweep at scale {s}, threshold {th}"));
                    }
                }
            }
        }
    }
    Ok(())
}
