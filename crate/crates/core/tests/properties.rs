use std::collections::BTreeMap;

use fairplan::allocator::{ipf, move_in_marginals, simulate, uniform_seed};
use fairplan::geo::decay;
use fairplan::inequality::{decompose, ge_index, ge_index_weighted};
use fairplan::model::{apply_edits, rectangle, Building, CityDesign, Edit, FunctionType, PlanningConfig};
use fairplan::recommend::{linear_minimization_oracle, materialize, Polytope, RecommendConstraints};
use fairplan::scenario;
use fairplan::store::{city_from_str, city_to_string, round_significant};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn benefits() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1.0f64..1000.0, 2..60)
}

fn alpha() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![-1.0, 0.5, 2.0, 3.0])
}

proptest! {
    #[test]
    fn ge_is_non_negative(b in benefits(), a in alpha()) {
        prop_assert!(ge_index(&b, a).unwrap() >= -1e-15);
    }

    #[test]
    fn ge_is_scale_invariant(b in benefits(), a in alpha(), c in 0.01f64..100.0) {
        let scaled: Vec<f64> = b.iter().map(|x| x * c).collect();
        let (g, gs) = (ge_index(&b, a).unwrap(), ge_index(&scaled, a).unwrap());
        prop_assert!((g - gs).abs() <= 1e-9 * g.max(1e-12));
    }

    #[test]
    fn integer_weights_equal_replication(b in benefits(), k in 1usize..4) {
        let weights = vec![k as f64; b.len()];
        let replicated: Vec<f64> = b.iter().flat_map(|&x| std::iter::repeat_n(x, k)).collect();
        let (w, r) = (ge_index_weighted(&b, &weights, 2.0).unwrap(), ge_index(&replicated, 2.0).unwrap());
        prop_assert!((w - r).abs() <= 1e-12 * r.max(1e-12));
    }

    #[test]
    fn decomposition_adds_up(
        labeled in prop::collection::vec((0usize..5, 1.0f64..1000.0), 2..120),
        a in alpha(),
    ) {
        let names = ["a", "b", "c", "d", "e"];
        let r = decompose(labeled.iter().map(|&(g, b)| (names[g], b)), a).unwrap();
        prop_assert!((r.total - r.between - r.within).abs() <= 1e-9 * r.total.abs().max(1e-12));
        let between: f64 = r.per_group.values().map(|t| t.between).sum();
        prop_assert!((between - r.between).abs() <= 1e-12);
    }

    #[test]
    fn transfers_to_poorer_reduce_inequality(b in benefits(), a in alpha(), u in 0.05f64..0.95) {
        let (lo, hi) = (0..b.len()).fold((0, 0), |(lo, hi), i| {
            (if b[i] < b[lo] { i } else { lo }, if b[i] > b[hi] { i } else { hi })
        });
        prop_assume!(b[hi] - b[lo] > 1e-6);
        let t = u * (b[hi] - b[lo]) / 2.0;
        let mut moved = b.clone();
        moved[lo] += t;
        moved[hi] -= t;
        prop_assert!(ge_index(&moved, a).unwrap() < ge_index(&b, a).unwrap());
    }

    #[test]
    fn ipf_hits_marginals(
        rows in prop::collection::vec(0.05f64..1.0, 1..20),
        cols in prop::collection::vec(0.05f64..1.0, 1..20),
    ) {
        let scale = rows.iter().sum::<f64>() / cols.iter().sum::<f64>();
        let cols: Vec<f64> = cols.iter().map(|c| c * scale).collect();
        let fit = ipf(&rows, &cols, &uniform_seed(&rows, &cols)).unwrap();
        for (got, want) in fit.matrix.row_sums().iter().zip(&rows).chain(fit.matrix.col_sums().iter().zip(&cols)) {
            prop_assert!((got - want).abs() < 1e-6);
        }
        prop_assert!(fit.matrix.data.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn marginals_sum_to_capacity_and_follow_benefit(
        b in prop::collection::vec(-100.0f64..500.0, 2..80),
        frac in 0.01f64..0.99,
    ) {
        let positive = b.iter().filter(|&&x| x > 0.0).count();
        prop_assume!(positive > 0);
        let capacity = frac * positive as f64;
        let m = move_in_marginals(&b, capacity).unwrap();
        prop_assert!((m.p.iter().sum::<f64>() - capacity).abs() <= 1e-6);
        for i in 0..b.len() {
            prop_assert!((0.0..=1.0).contains(&m.p[i]));
            if b[i] <= 0.0 {
                prop_assert_eq!(m.p[i], 0.0);
            }
            for j in 0..b.len() {
                if b[i] < b[j] {
                    prop_assert!(m.p[i] <= m.p[j]);
                }
            }
        }
    }

    #[test]
    fn decay_is_monotone_and_cut_off(d1 in 0.0f64..3000.0, d2 in 0.0f64..3000.0) {
        let config = PlanningConfig::default();
        let f = FunctionType::PARK;
        let (near, far) = (d1.min(d2), d1.max(d2));
        prop_assert!(decay(&config, &f, near) >= decay(&config, &f, far));
        if far > config.accessibility_cutoff_radius {
            prop_assert_eq!(decay(&config, &f, far), 0.0);
        }
    }

    #[test]
    fn rounding_is_idempotent(x in -1e12f64..1e12) {
        let r = round_significant(x);
        prop_assert_eq!(round_significant(r), r);
        prop_assert!((r - x).abs() <= 1e-8 * x.abs());
    }
}

fn random_city() -> impl Strategy<Value = CityDesign> {
    let building = (
        1u32..4,
        5.0f64..40.0,
        5.0f64..40.0,
        prop::collection::vec(0.0f64..3000.0, 6),
    );
    prop::collection::vec(building, 1..10).prop_map(|specs| {
        let types = FunctionType::defaults();
        let buildings = specs
            .into_iter()
            .enumerate()
            .map(|(i, (extra, w, d, areas))| {
                let floor_areas: BTreeMap<_, _> = types
                    .iter()
                    .cloned()
                    .zip(areas.into_iter().map(round_significant))
                    .filter(|(_, a)| *a > 0.0)
                    .collect();
                let needed = (floor_areas.values().sum::<f64>() / (w * d)).ceil() as u32;
                Building {
                    id: format!("b{i}"),
                    block_id: format!("k{}", i % 3),
                    footprint: rectangle(i as f64 * 50.0, 0.0, w, d),
                    floors: needed.max(1) + extra - 1,
                    floor_areas,
                }
            })
            .collect();
        CityDesign::new(["k0", "k1", "k2"], buildings, "local meters")
    })
}

fn random_constraints() -> impl Strategy<Value = RecommendConstraints> {
    (0.0f64..0.3, 0.0f64..3.0, 0.0f64..2000.0).prop_map(|(fraction, height, cap)| RecommendConstraints {
        budget_fraction: Some(fraction),
        max_height_increase: height,
        residential_change_cap: cap,
        ..RecommendConstraints::default()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn city_round_trips(city in random_city()) {
        let text = city_to_string(&city);
        let back = city_from_str(&text, &FunctionType::defaults()).unwrap();
        prop_assert_eq!(city_to_string(&back), text);
        prop_assert_eq!(back.buildings.len(), city.buildings.len());
    }

    #[test]
    fn samples_and_vertices_are_admissible(
        city in random_city(),
        constraints in random_constraints(),
        gradient_seed in any::<u64>(),
    ) {
        let config = PlanningConfig::default();
        let polytope = Polytope::new(&city, &config, &constraints).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(gradient_seed);
        let samples: Vec<Vec<f64>> = (0..20).map(|_| polytope.sample(&mut rng)).collect();
        for s in &samples {
            prop_assert!(polytope.contains(s, 1e-6), "{:?}", polytope.violations(s, 1e-6));
        }
        let g: Vec<f64> = samples[0].iter().enumerate().map(|(i, x)| x.sin() + (i as f64).cos()).collect();
        let vertex = linear_minimization_oracle(&g, &polytope).unwrap();
        prop_assert!(polytope.contains(&vertex, 1e-6), "{:?}", polytope.violations(&vertex, 1e-6));
        let dot = |x: &[f64]| x.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
        let best = dot(&vertex);
        prop_assert!(best <= 1e-9);
        for s in &samples {
            prop_assert!(best <= dot(s) + 1e-6 * (1.0 + dot(s).abs()));
        }
    }

    #[test]
    fn feasible_plans_materialize_without_negative_areas(
        city in random_city(),
        constraints in random_constraints(),
        seed in any::<u64>(),
    ) {
        let config = PlanningConfig::default();
        let polytope = Polytope::new(&city, &config, &constraints).unwrap();
        let mut grid = polytope.zero();
        grid.values = polytope.sample(&mut ChaCha8Rng::seed_from_u64(seed));
        let deltas = grid.to_map();
        let edits = materialize(&city, &deltas).unwrap();
        let mut after = city.clone();
        for e in &edits {
            if let Edit::Modify { building } = e {
                prop_assert!(building.floor_areas.values().all(|&a| a >= 0.0));
                after.buildings.insert(building.id.clone(), building.clone());
            }
        }
        for (k, block) in polytope.blocks.iter().enumerate() {
            for (f, ty) in polytope.types.iter().enumerate() {
                let want = polytope.current[k * polytope.types.len() + f] + grid.get(k, f);
                let got = after.block_floor_area(block, ty);
                prop_assert!((got - want).abs() <= 1e-6 * (1.0 + want.abs()));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn allocation_respects_capacity(seed in any::<u64>()) {
        let sc = scenario::load(scenario::BUNDLED).unwrap();
        let sim = simulate(&sc.design, &sc.population, &sc.config, seed).unwrap();
        let caps: BTreeMap<String, u32> = sc
            .design
            .residential_buildings()
            .map(|b| (b.id.clone(), b.occupancy_capacity(sc.config.area_per_resident)))
            .collect();
        for (id, n) in sim.allocation.occupancy() {
            prop_assert!(n <= caps[&id]);
        }
        let total: u32 = caps.values().sum();
        prop_assert!(sim.allocation.allocated_count() as u32 <= total);
    }

    #[test]
    fn rejected_edits_leave_design_untouched(floors in 0u32..3) {
        let sc = scenario::load(scenario::BUNDLED).unwrap();
        let mut b = sc.design.buildings.values().next().unwrap().clone();
        b.floors = floors;
        let edit = [Edit::Modify { building: b }];
        match apply_edits(&sc.design, &edit) {
            Ok(next) => prop_assert_eq!(next.revision, sc.design.revision + 1),
            Err(_) => prop_assert_eq!(sc.design.revision, 0),
        }
    }
}
