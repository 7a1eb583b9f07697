use losaw::experiment::*;
use losaw::losawgd::SaliencyClamp;

fn main() {
    let base = ExperimentConfig {
        data: DataConfig {
            kind: DataKind::DiscreteBlocks, n: 5000, p: 50, regression: 10,
            noise: NoiseSpec::Phi(1.0), correlation: CorrelationKind::Study,
        },
        algorithm: Algorithm::LosawGd,
        forest: Default::default(),
        gd: GdParams { cache_propensity: true, ..Default::default() },
        runs: 10, seed: 42, test_n: 1000, ind_n: 1000,
    };
    for clamp in [SaliencyClamp::PerSample, SaliencyClamp::AggregateMinMax] {
        let mut results = Vec::new();
        for algo in [Algorithm::LosawGd, Algorithm::Gd] {
            let mut cfg = base.clone();
            cfg.gd.saliency_clamp = clamp;
            cfg.algorithm = algo;
            let r = run_experiment(&cfg).unwrap();
            results.push(r);
        }
        let lo = &results[0];
        let gd = &results[1];
        println!("{clamp:?}: losaw mean fi_gap {:+.4} vs std {:+.4}  (paired diffs: {:?})",
            lo.mean(|r| r.fi_gap), gd.mean(|r| r.fi_gap),
            lo.rows.iter().zip(&gd.rows).map(|(a, b)| ((a.fi_gap - b.fi_gap) * 1e3).round() / 1e3).collect::<Vec<_>>());
        println!("   losaw r2 {:.3} pr {:.3} | std r2 {:.3} pr {:.3}",
            lo.mean(|r| r.r2_test), lo.mean(|r| r.pr_auc),
            gd.mean(|r| r.r2_test), gd.mean(|r| r.pr_auc));
    }
}
