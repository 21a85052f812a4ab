use proptest::prelude::*;
use spordinal::io::{read_dataset, write_dataset, RecordSchema};
use spordinal::synth::{generate, PopulationConfig, RandomTruth, TruthSpec};
use spordinal::OrdinalDataset;

/// Parallel truth, so generation never rejects a unit.
fn config(n: usize, n_lhu: usize, seed: u64) -> PopulationConfig {
    PopulationConfig {
        n,
        n_lhu,
        truth: TruthSpec::Random(RandomTruth {
            nonparallel: 0.0,
            ..Default::default()
        }),
        seed,
        ..Default::default()
    }
}

/// The population's data with survey weights attached.
fn weighted(data: &OrdinalDataset, seed: u64) -> OrdinalDataset {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let w = (0..data.len()).map(|_| rng.random_range(0.1..5.0)).collect();
    OrdinalDataset::new(
        data.categories().to_vec(),
        data.variables().to_vec(),
        data.records().to_vec(),
        data.responses().to_vec(),
        Some(w),
    )
    .unwrap()
}

fn schema(data: &OrdinalDataset) -> RecordSchema {
    RecordSchema {
        weight: Some("w".into()),
        ..RecordSchema::for_variables(data.categories().to_vec(), data.variables().to_vec())
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generation_is_reproducible(n in 1..300usize, n_lhu in 0..6usize, seed in any::<u64>()) {
        let cfg = PopulationConfig { truth: PopulationConfig::default().truth, ..config(n, n_lhu, seed) };
        let (a, b) = match (generate(&cfg), generate(&cfg)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(a), Err(b)) => {
                prop_assert_eq!(a.to_string(), b.to_string());
                return Ok(());
            }
            _ => panic!("only one of two identical runs failed"),
        };
        prop_assert_eq!(&a.dataset, &b.dataset);
        prop_assert_eq!(&a.truth, &b.truth);
        prop_assert_eq!(&a.design, &b.design);
        prop_assert_eq!(a.dataset.len(), n);
    }

    #[test]
    fn seeds_change_the_draw(seed in any::<u64>()) {
        let a = generate(&config(200, 4, seed)).unwrap();
        let b = generate(&config(200, 4, seed.wrapping_add(1))).unwrap();
        prop_assert_ne!(a.dataset.responses(), b.dataset.responses());
    }

    #[test]
    fn datasets_survive_a_round_trip(n in 1..200usize, n_lhu in 1..5usize, seed in any::<u64>()) {
        let data = weighted(&generate(&config(n, n_lhu, seed)).unwrap().dataset, seed);
        let schema = schema(&data);
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data, &schema).unwrap();
        let (back, report) = read_dataset(&buf[..], &schema).unwrap();
        prop_assert_eq!(&back, &data);
        prop_assert_eq!(report.rows_in, n);
        prop_assert_eq!(report.rows_dropped, 0);
    }

    #[test]
    fn dropped_rows_are_counted_by_code(
        n in 1..100usize, seed in any::<u64>(), bad in prop::collection::vec(prop::sample::select(vec!["8", "9", "NA"]), 0..20),
    ) {
        let data = generate(&config(n, 2, seed)).unwrap().dataset;
        let schema = RecordSchema::for_variables(data.categories().to_vec(), data.variables().to_vec());
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data, &schema).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().nth(1).unwrap();
        let rest = first.split_once(',').unwrap().1;
        let mut edited = text.clone();
        for code in &bad {
            edited.push_str(&format!("{code},{rest}\n"));
        }
        let (back, report) = read_dataset(edited.as_bytes(), &schema).unwrap();
        prop_assert_eq!(&back, &data);
        prop_assert_eq!(report.rows_in, report.rows_used + report.rows_dropped);
        prop_assert_eq!(report.rows_dropped, bad.len());
        for (code, count) in &report.dropped_codes {
            prop_assert_eq!(*count, bad.iter().filter(|b| *b == code).count());
        }
    }
}
