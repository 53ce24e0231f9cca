//! Compares the analytic gradient of every loss with central finite
//! differences on one random batch.

use dyml::losses::{
    baseline_loss, csl_cls, csl_joint, csl_pair, multi_scale_sum, BaselineKind, LossConfig, LossOutput,
};
use dyml::proxies::{init_proxies, ClassProxies, ProxyBank};
use dyml::taxonomy::Taxonomy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

type CslLoss = fn(&[Vec<f64>], &[Vec<usize>], &ProxyBank, &LossConfig) -> dyml::Result<LossOutput>;

fn worst_error(e: &[Vec<f64>], f: &dyn Fn(&[Vec<f64>]) -> LossOutput) -> f64 {
    let g = f(e).grad_embeddings;
    let mut worst = 0.0f64;
    for i in 0..e.len() {
        for k in 0..e[i].len() {
            let mut p = e.to_vec();
            p[i][k] += H;
            let up = f(&p).value;
            p[i][k] -= 2.0 * H;
            let numeric = (up - f(&p).value) / (2.0 * H);
            worst = worst.max((g[i][k] - numeric).abs() / g[i][k].abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}

fn main() -> dyml::Result<()> {
    let t = Taxonomy::new(vec![8, 4, 2], vec![vec![0, 0, 1, 1, 2, 2, 3, 3], vec![0, 0, 1, 1]])?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = 8;
    let e: Vec<Vec<f64>> = (0..8).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let chains: Vec<Vec<usize>> = [0, 0, 1, 2, 3, 5, 6, 6].iter().map(|&f| t.chain(f).to_vec()).collect();
    let bank = init_proxies(&t, d, 2)?;
    let scale_proxies: Vec<ClassProxies> =
        (0..3).map(|s| ClassProxies::random(t.num_classes(s), d, 3 + s as u64)).collect::<dyml::Result<_>>()?;
    let cfg = LossConfig::default();

    let csl: [(&str, CslLoss); 3] =
        [("csl_cls", csl_cls), ("csl_pair", |e, c, _, cfg| csl_pair(e, c, cfg)), ("csl_joint", csl_joint)];
    for (name, loss) in csl {
        println!("{name:>18}: {:.2e}", worst_error(&e, &|x| loss(x, &chains, &bank, &cfg).unwrap()));
    }
    let fine: Vec<usize> = chains.iter().map(|c| c[0]).collect();
    for kind in BaselineKind::ALL {
        let single = worst_error(&e, &|x| baseline_loss(kind, x, &fine, Some(&scale_proxies[0]), 0, &cfg).unwrap());
        let multi = worst_error(&e, &|x| multi_scale_sum(kind, x, &chains, &scale_proxies, &cfg).unwrap());
        println!("{:>18}: {single:.2e}, multi-scale sum {multi:.2e}", kind.name());
    }
    Ok(())
}
