//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma as GammaDist};
use statrs::distribution::{Beta, ContinuousCDF, Gamma};

use quash::diagnostics::{
    credible_interval, cumulative_split_frequencies, density_summary, distinct_char_counts, distinct_char_summary,
    posterior_predictive_distribution, write_predictive_csv,
};
use quash::likelihood::{compress_patterns, grid_log_likelihood, simulate_alignment, LikelihoodEngine, SubstitutionModel};
use quash::linalg::{general_eigenvalues, SquareMatrix};
use quash::mcmc::{run_chain, Target, TraceWriter};
use quash::models::gamma_log_density;
use quash::quash::{
    bounds, quadratic_transform, quadratic_transform_raw, tn93_transformed_rates, SiteCoefficients,
};
use quash::ratemat::{
    build_gtr, build_tn93, reversible_factorization, spectral_info, transition_matrix_taylor, Composition,
    ExchangeabilitySet, RateMatrix, ReversibleEigen,
};
use quash::site_effects::{quad_moments, QuadDistribution};
use quash::tree::{
    enumerate_rooted, enumerate_unrooted, majority_rule_consensus, parse_newick_with_labels, splits_of, Phylogeny, Split,
};
use quash::{Alignment, EffectGrid, Family, ModelState, PriorConfig, QuashBounds, RunConfig};

fn report(n: u32, what: &str, ok: bool, detail: String) {
    println!("{} criterion {n:>2}: {what} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("t{i}")).collect()
}

fn random_composition(rng: &mut ChaCha8Rng) -> Composition {
    let g = GammaDist::new(3.0, 1.0).unwrap();
    Composition::normalized((0..4).map(|_| g.sample(rng) + 0.05).collect()).unwrap()
}

fn random_gtr(rng: &mut ChaCha8Rng) -> (ExchangeabilitySet, Composition, RateMatrix) {
    let rho = ExchangeabilitySet::from_fn(4, |_, _| rng.random_range(0.2..5.0)).unwrap();
    let pi = random_composition(rng);
    let q = build_gtr(&rho, &pi).unwrap();
    (rho, pi, q)
}

/// d drawn strictly inside the interval; half-lines are sampled up to
/// several widths past the lower end.
fn inside(b: &QuashBounds, rng: &mut ChaCha8Rng) -> f64 {
    let t = rng.random_range(0.001..0.999);
    if b.upper_is_finite() {
        b.lower + t * b.width()
    } else {
        b.lower + 5.0 * t * b.capped_width()
    }
}

fn off_diagonals(m: &SquareMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..4).flat_map(move |u| (0..4).filter(move |&v| v != u).map(move |v| m[(u, v)]))
}

#[test]
fn c01_quash_validity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_off, mut worst_row, mut outside_caught, mut outside_tried) = (0.0f64, 0.0f64, 0, 0);
    for _ in 0..1000 {
        let (_, _, q) = random_gtr(&mut rng);
        let b = bounds(&q).unwrap();
        let c = rng.random_range(0.1..3.0);
        let qj = quadratic_transform_raw(q.entries(), c, inside(&b, &mut rng));
        worst_off = worst_off.min(off_diagonals(&qj).fold(f64::INFINITY, f64::min));
        worst_row = worst_row.max(qj.row_sums().iter().fold(0.0, |m, r| m.max(r.abs())));
        let eps = 1e-6 * b.capped_width();
        let mut outside = vec![b.lower - eps];
        if b.upper_is_finite() {
            outside.push(b.upper + eps);
        }
        for d in outside {
            outside_tried += 1;
            if off_diagonals(&quadratic_transform_raw(q.entries(), c, d)).any(|x| x < 0.0) {
                outside_caught += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "QuASH validity",
        worst_off >= -1e-12 && worst_row <= 1e-10 && outside_caught == outside_tried && secs < 5.0,
        format!("min off-diag {worst_off:.2e}, max |row sum| {worst_row:.2e}, outside {outside_caught}/{outside_tried}, {secs:.2}s"),
    );
}

#[test]
fn c02_reversibility_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut stat, mut bal, mut fact) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (_, pi, q) = random_gtr(&mut rng);
        let b = bounds(&q).unwrap();
        let (c, d) = (rng.random_range(0.1..3.0), inside(&b, &mut rng));
        let qj = quadratic_transform(&q, SiteCoefficients::new(c, d).unwrap()).unwrap();
        let p = pi.probs();
        stat = stat.max(qj.entries().left_mul_vec(p).iter().fold(0.0, |m, x| m.max(x.abs())));
        for u in 0..4 {
            for v in 0..4 {
                bal = bal.max((p[u] * qj.get(u, v) - p[v] * qj.get(v, u)).abs());
            }
        }
        // S from the baseline by definition: s_uv = q_uv / π_v.
        let s = SquareMatrix::from_fn(4, |u, v| q.get(u, v) / p[v]);
        let sps = SquareMatrix::from_fn(4, |u, v| (0..4).map(|w| s[(u, w)] * p[w] * s[(w, v)]).sum::<f64>());
        let expected = SquareMatrix::from_fn(4, |u, v| c * (s[(u, v)] - d * sps[(u, v)]));
        fact = fact.max(reversible_factorization(&qj, &pi).unwrap().max_abs_diff(&expected));
    }
    report(
        2,
        "stationarity, detailed balance, factorization",
        stat <= 1e-10 && bal <= 1e-10 && fact <= 1e-10,
        format!("|πQ_j| {stat:.2e}, balance {bal:.2e}, S_j {fact:.2e}"),
    );
}

#[test]
fn c03_jukes_cantor_bounds() {
    let mut worst = 0.0f64;
    let mut upper_inf = true;
    for delta in [0.1f64, 0.25, 1.0, 3.0] {
        let m = SquareMatrix::from_fn(4, |u, v| if u == v { -3.0 * delta } else { delta });
        let b = bounds(&RateMatrix::new(m).unwrap()).unwrap();
        let expect = -1.0 / (4.0 * delta);
        worst = worst.max(((b.lower - expect) / expect).abs());
        upper_inf &= b.upper == f64::INFINITY;
    }
    report(3, "Jukes-Cantor bounds", worst <= 1e-14 && upper_inf, format!("max rel err {worst:.2e}, u = ∞: {upper_inf}"));
}

#[test]
fn c04_tn93_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (r1, r2) = (rng.random_range(0.1..10.0), rng.random_range(0.1..10.0));
        let pi = random_composition(&mut rng);
        let q = build_tn93(r1, r2, &pi).unwrap();
        let b = bounds(&q).unwrap();
        let coeff = SiteCoefficients::new(rng.random_range(0.1..3.0), inside(&b, &mut rng)).unwrap();
        let (bj, r1j, r2j) = tn93_transformed_rates(r1, r2, &pi, coeff).unwrap();
        let s = reversible_factorization(&quadratic_transform(&q, coeff).unwrap(), &pi).unwrap();
        // A=0 G=1 C=2 T=3
        for (u, v) in [(0, 2), (0, 3), (1, 2), (1, 3)] {
            worst = worst.max((s[(u, v)] - bj).abs());
        }
        worst = worst.max((s[(2, 3)] - r1j).abs()).max((s[(0, 1)] - r2j).abs());
    }
    report(4, "TN93 closed form", worst <= 1e-10, format!("max abs err {worst:.2e}"));
}

#[test]
fn c05_quadratic_coefficient_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let n = 1_000_000;
    let mut worst_z = 0.0f64;
    for beta in [0.1, 1.0, 10.0] {
        for (l, u) in [(-0.5, 2.0), (-0.2, 0.3), (-1.0, f64::INFINITY), (-0.05, f64::INFINITY)] {
            let dist = QuadDistribution::new(beta, QuashBounds::new(l, u).unwrap()).unwrap();
            let (mean, var) = quad_moments(&dist);
            let xs: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let c2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            let c4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n as f64;
            let z_mean = (m - mean).abs() / (c2 / n as f64).sqrt();
            let z_var = (c2 - var).abs() / ((c4 - c2 * c2) / n as f64).sqrt();
            worst_z = worst_z.max(z_mean).max(z_var);
        }
    }
    let mut exp_err = 0.0f64;
    for beta in [0.1, 1.0, 10.0] {
        let dist = QuadDistribution::new(beta, QuashBounds::new(0.0, f64::INFINITY).unwrap()).unwrap();
        let (mean, var) = quad_moments(&dist);
        let (em, ev) = (1.0 / beta, 1.0 / (beta * beta));
        exp_err = exp_err.max(((mean - em) / em).abs()).max(((var - ev) / ev).abs());
    }
    report(
        5,
        "quadratic coefficient moments",
        worst_z <= 3.0 && exp_err <= 1e-9,
        format!("max |z| {worst_z:.2}, exponential case rel err {exp_err:.2e}"),
    );
}

fn mask(c: u8) -> [bool; 4] {
    match c {
        b'A' => [true, false, false, false],
        b'G' => [false, true, false, false],
        b'C' => [false, false, true, false],
        b'T' => [false, false, false, true],
        b'R' => [true, true, false, false],
        b'Y' => [false, false, true, true],
        _ => [true; 4],
    }
}

/// Sum over every joint assignment of internal states.
fn enumerate_site(tree: &Phylogeny, mats: &[SquareMatrix<f64>], root: &[f64], column: &[u8]) -> f64 {
    let n = tree.n_leaves();
    let internal: Vec<usize> = (n..tree.n_nodes()).collect();
    let mut total = 0.0;
    let mut state = vec![0usize; tree.n_nodes()];
    for code in 0..4usize.pow(internal.len() as u32) {
        let mut c = code;
        for &v in &internal {
            state[v] = c % 4;
            c /= 4;
        }
        let r = tree.root();
        let mut p = root[state[r]];
        for &v in &internal {
            if v != r {
                p *= mats[v][(state[tree.parent(v).unwrap()], state[v])];
            }
        }
        for (leaf, &ch) in column.iter().enumerate() {
            let from = state[tree.parent(leaf).unwrap()];
            p *= mask(ch).iter().enumerate().filter(|(_, &ok)| ok).map(|(s, _)| mats[leaf][(from, s)]).sum::<f64>();
        }
        total += p;
    }
    total
}

#[test]
fn c06_pruning_matches_enumeration() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let alphabet = b"AGCTAGCTAGCTRY-N";
    let (mut worst, mut trees, mut cases) = (0.0f64, 0, 0);
    for n in 2..=5 {
        let labels = names(n);
        for base in enumerate_rooted(&labels) {
            trees += 1;
            for _ in 0..50 {
                let mut tree = base.clone();
                let rates: Vec<(Composition, RateMatrix)> = (0..tree.n_nodes())
                    .map(|_| {
                        let (_, pi, q) = random_gtr(&mut rng);
                        (pi, q)
                    })
                    .collect();
                let mut mats = vec![SquareMatrix::identity(4); tree.n_nodes()];
                for v in tree.branches().collect::<Vec<_>>() {
                    let ell = rng.random_range(0.01..1.5);
                    tree.set_length(v, ell).unwrap();
                    mats[v] = transition_matrix_taylor(&rates[v].1, ell).entries().clone();
                }
                let eigens: Vec<ReversibleEigen> =
                    rates.iter().map(|(pi, q)| ReversibleEigen::new(q, pi).unwrap()).collect();
                let root = random_composition(&mut rng);
                let rows: Vec<Vec<u8>> =
                    (0..n).map(|_| (0..8).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()).collect();
                let aln = Alignment::new(labels.clone(), rows).unwrap();
                let patterns = quash::PatternTable::uncompressed(&aln);
                let model =
                    SubstitutionModel::new(eigens, (0..tree.n_nodes()).collect(), root.clone()).unwrap();
                let mut engine = LikelihoodEngine::new(&patterns, &labels, 1).unwrap();
                engine.evaluate_full(&tree, &model, &EffectGrid::homogeneous()).unwrap();
                for j in 0..aln.n_sites() {
                    let expect = enumerate_site(&tree, &mats, root.probs(), &aln.column(j));
                    let got = engine.site_log_likelihoods()[j].exp();
                    worst = worst.max(((got - expect) / expect).abs());
                }
                cases += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        6,
        "pruning equals enumeration",
        worst <= 1e-12 && secs < 30.0,
        format!("{trees} trees, {cases} parameterizations, max rel err {worst:.2e}, {secs:.1}s"),
    );
}

fn simulated(state: &ModelState, kc: usize, kd: usize, m: usize, seed: u64) -> Alignment {
    let grid = state.effect_grid(kc, kd).unwrap();
    simulate_alignment(&state.tree, &state.substitution_model().unwrap(), &grid, m, seed).unwrap()
}

#[test]
fn c07_root_placement() {
    let mut worst = 0.0f64;
    let mut reroots = 0;
    for (i, family) in [Family::S1, Family::S2, Family::S3].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(107 + i as u64);
        let state = ModelState::sample_prior(family, names(7), &PriorConfig::default(), &mut rng).unwrap();
        let patterns = compress_patterns(&simulated(&state, 4, 4, 300, 7));
        let model = state.substitution_model().unwrap();
        let grid = state.effect_grid(4, 4).unwrap();
        let base = grid_log_likelihood(&patterns, &state.tree, &model, &grid).unwrap();
        for v in state.tree.branches().collect::<Vec<_>>() {
            for frac in [0.3, 0.9] {
                let t = state.tree.rerooted(v, frac).unwrap();
                worst = worst.max((grid_log_likelihood(&patterns, &t, &model, &grid).unwrap() - base).abs());
                reroots += 1;
            }
        }
    }

    // Composition step change on the branches inside clade (a, b), scored on
    // two rootings of one unrooted tree.
    let labels: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
    let t1 = parse_newick_with_labels("((a:0.2,b:0.2):0.3,(c:0.2,(d:0.2,e:0.2):0.1):0.1);", &labels).unwrap();
    let t2 = parse_newick_with_labels("(e:0.1,(d:0.2,(c:0.2,(a:0.2,b:0.2):0.4):0.1):0.1);", &labels).unwrap();
    let gc = Composition::new(vec![0.1, 0.4, 0.4, 0.1]).unwrap();
    let at = Composition::new(vec![0.4, 0.1, 0.1, 0.4]).unwrap();
    let step = |t: &Phylogeny| {
        let sets = t.leaf_sets();
        let comps: Vec<Composition> = (0..t.n_nodes())
            .map(|v| if v != t.root() && sets[v].indices().all(|i| i < 2) { at.clone() } else { gc.clone() })
            .collect();
        ModelState::new(Family::NS1, 2.0, 3.0, comps, None, None, t.clone()).unwrap()
    };
    let (s1, s2) = (step(&t1), step(&t2));
    let patterns = compress_patterns(&simulated(&s1, 1, 1, 500, 17));
    let ns_gap = (s1.log_likelihood(&patterns, 1, 1).unwrap() - s2.log_likelihood(&patterns, 1, 1).unwrap()).abs();
    // Same rootings under one stationary composition agree.
    let flat = |t: &Phylogeny| {
        ModelState::new(Family::NS1, 2.0, 3.0, vec![gc.clone(); t.n_nodes()], None, None, t.clone()).unwrap()
    };
    let flat_gap =
        (flat(&t1).log_likelihood(&patterns, 1, 1).unwrap() - flat(&t2).log_likelihood(&patterns, 1, 1).unwrap()).abs();
    report(
        7,
        "root invariance",
        worst <= 1e-9 && flat_gap <= 1e-9 && ns_gap > 1e-3,
        format!("{reroots} rerootings max diff {worst:.2e}; step change diff {ns_gap:.3}; homogeneous {flat_gap:.2e}"),
    );
}

#[test]
fn c08_spectrum_and_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let (mut eig_err, mut rate_err) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (_, pi, q) = random_gtr(&mut rng);
        let b = bounds(&q).unwrap();
        let d = inside(&b, &mut rng);
        let base = ReversibleEigen::new(&q, &pi).unwrap();
        let unit = quadratic_transform(&q, SiteCoefficients::new(1.0, d).unwrap()).unwrap();
        // pick c so the slowest mode decays at a rate in [0.2, 0.5]
        let c = rng.random_range(0.2..0.5) / spectral_info(&unit).unwrap().nu;
        let qj = quadratic_transform(&q, SiteCoefficients::new(c, d).unwrap()).unwrap();

        let mut mapped: Vec<f64> = base.eigenvalues().iter().map(|&l| c * l - c * d * l * l).collect();
        let mut direct: Vec<f64> = general_eigenvalues(qj.entries()).unwrap().iter().map(|z| z.re).collect();
        mapped.sort_by(f64::total_cmp);
        direct.sort_by(f64::total_cmp);
        eig_err = eig_err.max(mapped.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

        let nu = -mapped[2];
        let p = pi.probs();
        let (xs, ys): (Vec<f64>, Vec<f64>) = (1..=50)
            .map(|ell| {
                let t = transition_matrix_taylor(&qj, ell as f64);
                let dev = (0..4).flat_map(|u| (0..4).map(move |v| (u, v))).map(|(u, v)| (t.get(u, v) - p[v]).abs());
                (ell as f64, dev.fold(0.0, f64::max).ln())
            })
            .unzip();
        let (mx, my) = (xs.iter().sum::<f64>() / 50.0, ys.iter().sum::<f64>() / 50.0);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        rate_err = rate_err.max((-slope - nu).abs() / nu);
    }
    report(
        8,
        "spectrum and geometric convergence",
        eig_err <= 1e-8 && rate_err <= 0.05,
        format!("eigenvalue err {eig_err:.2e}, decay rate rel err {:.2}%", 100.0 * rate_err),
    );
}

#[test]
fn c09_model_nesting() {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let truth = ModelState::sample_prior(Family::S3, names(10), &PriorConfig::default(), &mut rng).unwrap();
    let patterns = compress_patterns(&simulated(&truth, 4, 4, 200, 9));
    let with = |family: Family, alpha: Option<f64>, beta: Option<f64>| {
        let mut s = truth.clone();
        s.family = family;
        s.alpha = alpha;
        s.beta_d = beta;
        s.log_likelihood(&patterns, 4, 4).unwrap()
    };
    let alpha = truth.alpha;
    let s3_s2 = (with(Family::S3, alpha, Some(1e6)) - with(Family::S2, alpha, None)).abs();
    let s2_s1 = (with(Family::S2, Some(1e6), None) - with(Family::S1, None, None)).abs();
    report(
        9,
        "model nesting",
        s3_s2 <= 1e-4 && s2_s1 <= 1e-4,
        format!("|S3(β=1e6) − S2| {s3_s2:.2e}, |S2(α=1e6) − S1| {s2_s1:.2e}"),
    );
}

fn ks_distance(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn unrooted_key(t: &Phylogeny) -> Vec<Split> {
    let mut v: Vec<Split> = splits_of(t, false).into_iter().filter(|s| !s.is_trivial()).collect();
    v.sort();
    v
}

#[test]
fn c10_prior_recovery() {
    let start = Instant::now();
    let labels = names(5);
    let config = RunConfig::new(Family::S3, 1_000_000, 10_000, 5, 110);
    let trace = run_chain(&config, Target::PriorOnly(&labels), None).unwrap();
    let p = PriorConfig::default();
    let gamma = |shape: f64, rate: f64| Gamma::new(shape, rate).unwrap();
    let n_free = (2 * labels.len() - 3) as f64;
    let marginals: Vec<(&str, Vec<f64>, Box<dyn Fn(f64) -> f64>)> = vec![
        ("rho1", trace.scalar("rho1").unwrap(), Box::new(move |x| gamma(p.rho_shape, p.rho_rate).cdf(x))),
        ("rho2", trace.scalar("rho2").unwrap(), Box::new(move |x| gamma(p.rho_shape, p.rho_rate).cdf(x))),
        ("alpha", trace.scalar("alpha").unwrap(), Box::new(move |x| gamma(p.alpha_shape, p.alpha_rate).cdf(x))),
        ("beta", trace.scalar("beta").unwrap(), Box::new(move |x| gamma(p.beta_shape, p.beta_rate).cdf(x))),
        ("tree_length", trace.scalar("tree_length").unwrap(), Box::new(move |x| gamma(n_free, p.branch_rate).cdf(x))),
        (
            "pi_A",
            trace.states.iter().map(|s| s.compositions[0].probs()[0]).collect(),
            Box::new(|x| Beta::new(1.0, 3.0).unwrap().cdf(x)),
        ),
        (
            "pi_T",
            trace.states.iter().map(|s| s.compositions[0].probs()[3]).collect(),
            Box::new(|x| Beta::new(1.0, 3.0).unwrap().cdf(x)),
        ),
    ];
    let mut ks = Vec::new();
    for (name, xs, cdf) in &marginals {
        ks.push((*name, ks_distance(xs.clone(), cdf)));
    }
    let worst_ks = ks.iter().map(|(_, d)| *d).fold(0.0, f64::max);

    // Topologies every 100 sweeps, far beyond their autocorrelation time.
    let trees = enumerate_unrooted(&labels);
    let index: HashMap<Vec<Split>, usize> = trees.iter().enumerate().map(|(i, t)| (unrooted_key(t), i)).collect();
    let mut counts = [0usize; 15];
    for s in trace.states.iter().step_by(20) {
        counts[index[&unrooted_key(&s.tree)]] += 1;
    }
    let total: usize = counts.iter().sum();
    let e = total as f64 / 15.0;
    let x2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // chi-square, 14 degrees of freedom, upper 1% point
    let secs = start.elapsed().as_secs_f64();
    let detail = ks.iter().map(|(n, d)| format!("{n} {d:.4}")).collect::<Vec<_>>().join(", ");
    report(
        10,
        "prior recovery",
        trace.len() >= 100_000 && worst_ks < 0.01 && x2 < 29.141 && secs < 300.0,
        format!("{} samples; KS {detail}; topology χ² {x2:.1} over {total}; {secs:.0}s", trace.len()),
    );
}

#[test]
fn c11_simulation_recovery() {
    let start = Instant::now();
    let labels = names(8);
    let newick = "(((t0:0.08,t1:0.08):0.06,(t2:0.08,t3:0.08):0.06):0.04,\
                  ((t4:0.08,t5:0.08):0.06,(t6:0.08,t7:0.08):0.06):0.04);";
    let tree = parse_newick_with_labels(newick, &labels).unwrap();
    let pi = Composition::new(vec![0.3, 0.2, 0.2, 0.3]).unwrap();
    let truth = ModelState::with_composition(Family::S2, 4.0, 2.0, pi, Some(0.5), None, tree).unwrap();
    let aln = simulated(&truth, 4, 1, 500, 1);
    let patterns = compress_patterns(&aln);
    let config = RunConfig::new(Family::S2, 50_000, 10_000, 20, 211);
    let trace = run_chain(&config, Target::Data(&patterns), None).unwrap();

    let consensus = majority_rule_consensus(&trace.tree_sample().unwrap(), false).unwrap();
    let true_splits = unrooted_key(&truth.tree);
    let supports: Vec<f64> = true_splits.iter().map(|s| consensus.support(s).unwrap_or(0.0)).collect();
    let mut found: Vec<Split> = consensus.nontrivial().into_iter().cloned().collect();
    found.sort();
    let (lo, hi) = credible_interval(&trace.scalar("alpha").unwrap(), 0.95);
    let secs = start.elapsed().as_secs_f64();
    report(
        11,
        "simulation recovery",
        found == true_splits && supports.iter().all(|&s| s >= 0.9) && lo <= 0.5 && 0.5 <= hi && secs < 600.0,
        format!(
            "min true-split support {:.3}, topology recovered {}, α 95% CI [{lo:.3}, {hi:.3}], {secs:.0}s",
            supports.iter().copied().fold(1.0, f64::min),
            found == true_splits
        ),
    );
}

#[test]
fn c12_posterior_predictive() {
    let hand = Alignment::from_strings(&[("x", "ACA-"), ("y", "ACG-"), ("z", "ATCN"), ("w", "ATR?")]).unwrap();
    let counts = distinct_char_counts(&hand);
    let (stats, dropped) = distinct_char_summary(&hand).unwrap();
    let one = Alignment::from_strings(&[("x", "A"), ("y", "G")]).unwrap();
    let (single, _) = distinct_char_summary(&one).unwrap();
    // columns count 1, 2, 3 and an all-gap column: mean 2, sd sqrt(2/2) = 1
    let hand_ok = counts == [1, 2, 3, 0]
        && dropped == 1
        && stats.mean_distinct == 2.0
        && stats.sd_distinct == 1.0
        && single.mean_distinct == 2.0
        && single.sd_distinct == 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(112);
    let mut truth = ModelState::sample_prior(Family::S2, names(8), &PriorConfig::default(), &mut rng).unwrap();
    truth.alpha = Some(0.3);
    let aln = simulated(&truth, 4, 1, 500, 12);
    let observed = distinct_char_summary(&aln).unwrap().0.mean_distinct;
    let patterns = compress_patterns(&aln);
    let predictive_mean = |family: Family| {
        let config = RunConfig::new(family, 6_000, 3_000, 30, 312);
        let trace = run_chain(&config, Target::Data(&patterns), None).unwrap();
        let draws = posterior_predictive_distribution(&trace.states, 4, 4, aln.n_sites(), 200, 412).unwrap();
        draws.iter().map(|d| d.mean_distinct).sum::<f64>() / draws.len() as f64
    };
    let homogeneous = predictive_mean(Family::S1);
    let quadratic = predictive_mean(Family::S3);
    report(
        12,
        "posterior predictive machinery",
        hand_ok && homogeneous > quadratic,
        format!("hand cases {hand_ok}; observed {observed:.3}, S1 predictive {homogeneous:.3}, S3 predictive {quadratic:.3}"),
    );
}

#[derive(Clone, Default)]
struct Buffer(Arc<Mutex<Vec<u8>>>);

impl Write for Buffer {
    fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(b);
        Ok(b.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl Buffer {
    fn bytes(&self) -> Vec<u8> {
        self.0.lock().unwrap().clone()
    }
}

/// Everything one seeded pipeline produces, as bytes.
fn pipeline(seed: u64) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = ModelState::sample_prior(Family::NS3, names(6), &PriorConfig::default(), &mut rng).unwrap();
    let aln = simulated(&truth, 2, 2, 150, seed);
    let patterns = compress_patterns(&aln);
    let mut config = RunConfig::new(Family::NS3, 1_500, 500, 10, seed);
    config.kc = 2;
    config.kd = 2;
    let (tsv, trees, states) = (Buffer::default(), Buffer::default(), Buffer::default());
    let mut writer =
        TraceWriter::new(Box::new(tsv.clone()), Box::new(trees.clone()), Some(Box::new(states.clone()))).unwrap();
    let trace = run_chain(&config, Target::Data(&patterns), Some(&mut writer)).unwrap();
    drop(writer);

    let sample = trace.tree_sample().unwrap();
    let consensus = majority_rule_consensus(&sample, true).unwrap().to_newick().into_bytes();
    let mut splits = Vec::new();
    cumulative_split_frequencies(&[sample], true).unwrap().write_csv(&mut splits).unwrap();
    let p = PriorConfig::default();
    let mut density = Vec::new();
    density_summary(&trace.scalar("beta").unwrap(), |x| gamma_log_density(x, p.beta_shape, p.beta_rate).exp(), Some(0.0), 128)
        .unwrap()
        .write_csv(&mut density)
        .unwrap();
    let draws = posterior_predictive_distribution(&trace.states, 2, 2, aln.n_sites(), 20, seed).unwrap();
    let mut predictive = Vec::new();
    write_predictive_csv(&mut predictive, &draws, distinct_char_summary(&aln).unwrap().0).unwrap();
    vec![aln.to_fasta().into_bytes(), tsv.bytes(), trees.bytes(), states.bytes(), consensus, splits, density, predictive]
}

#[test]
fn c13_determinism() {
    let a = pipeline(113);
    let b = pipeline(113);
    let c = pipeline(114);
    let identical = a == b;
    let nonempty = a.iter().all(|x| !x.is_empty());
    let seed_matters = a[0] != c[0] && a[1] != c[1];
    report(
        13,
        "determinism",
        identical && nonempty && seed_matters,
        format!("{} artifacts bit-identical: {identical}; different seed differs: {seed_matters}", a.len()),
    );
}
