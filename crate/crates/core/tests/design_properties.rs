use proptest::prelude::*;
use spordinal::data::{Record, Value};
use spordinal::design::{ColumnRole, DesignSpec, GroupBlock, VariableKind, VariableSpec};
use spordinal::OrdinalDataset;

#[derive(Debug, Clone)]
struct Layout {
    binaries: usize,
    categoricals: Vec<usize>,
    numerics: usize,
}

fn layout() -> impl Strategy<Value = Layout> {
    (0..3usize, prop::collection::vec(3..5usize, 0..3), 0..3usize)
        .prop_filter("at least one variable", |(b, c, z)| b + c.len() + z > 0)
        .prop_map(|(binaries, categoricals, numerics)| Layout {
            binaries,
            categoricals,
            numerics,
        })
}

fn specs(l: &Layout) -> Vec<VariableSpec> {
    let mut v: Vec<VariableSpec> = (0..l.binaries).map(|i| VariableSpec::binary(&format!("b{i}"), "no", "yes")).collect();
    for (i, &k) in l.categoricals.iter().enumerate() {
        let levels: Vec<String> = (0..k).map(|j| format!("l{j}")).collect();
        let refs: Vec<&str> = levels.iter().map(String::as_str).collect();
        v.push(VariableSpec::categorical(&format!("c{i}"), &refs));
    }
    v.extend((0..l.numerics).map(|i| VariableSpec::numeric(&format!("z{i}"))));
    v
}

fn main_width(spec: &VariableSpec) -> usize {
    match &spec.kind {
        VariableKind::Binary { .. } | VariableKind::Numeric => 1,
        VariableKind::Categorical { levels } => levels.len() - 1,
    }
}

/// Random records for `specs`, with group labels from a pool of `n_lhu`.
fn dataset(specs: &[VariableSpec], n: usize, n_lhu: usize, seed: u64) -> OrdinalDataset {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<Record> = (0..n)
        .map(|_| {
            let values = specs
                .iter()
                .map(|s| match &s.kind {
                    VariableKind::Binary { levels } => Value::Level(levels[rng.random_range(0..2)].clone()),
                    VariableKind::Categorical { levels } => Value::Level(levels[rng.random_range(0..levels.len())].clone()),
                    VariableKind::Numeric => Value::Number(rng.random_range(-10.0..10.0)),
                })
                .collect();
            let mut r = Record::new(values);
            r.lhu = Some(format!("u{}", rng.random_range(0..n_lhu)));
            r
        })
        .collect();
    let y = (0..n).map(|_| rng.random_range(0..3)).collect();
    OrdinalDataset::new(vec!["a".into(), "b".into(), "c".into()], specs.to_vec(), records, y, None).unwrap()
}

fn spec(interactions: bool) -> DesignSpec {
    DesignSpec {
        group: GroupBlock::Lhu,
        interactions,
        scaling: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rebuilding_is_bit_identical(l in layout(), n in 5..40usize, n_lhu in 1..5usize, seed in any::<u64>()) {
        let data = dataset(&specs(&l), n, n_lhu, seed);
        let first = spec(true).fit(&data).unwrap();
        prop_assert_eq!(&spec(true).fit(&data).unwrap(), &first);
        let (again, report) = spec(true).transfer(&data, &first.scaling).unwrap();
        prop_assert_eq!(&again, &first);
        prop_assert!(report.out_of_range.is_empty());
    }

    #[test]
    fn column_count_follows_the_variable_layout(
        l in layout(), n in 5..40usize, n_lhu in 1..5usize, interactions in any::<bool>(), seed in any::<u64>()
    ) {
        let s = specs(&l);
        let data = dataset(&s, n, n_lhu, seed);
        let d = spec(interactions).fit(&data).unwrap();
        let widths: Vec<usize> = s.iter().map(main_width).collect();
        let mut pairs = 0;
        for a in 0..widths.len() {
            for b in a + 1..widths.len() {
                pairs += widths[a] * widths[b];
            }
        }
        let levels: std::collections::BTreeSet<_> = data.records().iter().map(|r| r.lhu.clone()).collect();
        let expected = widths.iter().sum::<usize>() + if interactions { pairs } else { 0 } + levels.len();
        prop_assert_eq!(d.n_columns(), expected);
    }

    #[test]
    fn group_block_is_one_hot(l in layout(), n in 5..40usize, n_lhu in 1..5usize, seed in any::<u64>()) {
        let data = dataset(&specs(&l), n, n_lhu, seed);
        let d = spec(true).fit(&data).unwrap();
        let group = d.group_columns();
        for (i, row) in d.values.rows().into_iter().enumerate() {
            let ones: Vec<usize> = group.iter().copied().filter(|&c| row[c] == 1.0).collect();
            prop_assert_eq!(ones.len(), 1);
            prop_assert!(group.iter().all(|&c| row[c] == 0.0 || row[c] == 1.0));
            let label = data.records()[i].lhu.as_ref().unwrap();
            prop_assert_eq!(d.columns[ones[0]].level.as_ref(), Some(label));
        }
    }

    #[test]
    fn interactions_are_products_of_scaled_parents(l in layout(), n in 5..40usize, seed in any::<u64>()) {
        let data = dataset(&specs(&l), n, 2, seed);
        let d = spec(true).fit(&data).unwrap();
        for (k, meta) in d.columns.iter().enumerate() {
            if meta.role != ColumnRole::Interaction {
                continue;
            }
            let (a, b) = (meta.parents[0], meta.parents[1]);
            prop_assert_ne!(&d.columns[a].sources, &d.columns[b].sources);
            for i in 0..n {
                prop_assert_eq!(d.values[[i, k]], d.values[[i, a]] * d.values[[i, b]]);
            }
        }
    }
}
