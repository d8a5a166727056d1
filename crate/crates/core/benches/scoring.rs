use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use policyx::corpus::{Corpus, GoldAnnotation, PolicyRecord};
use policyx::evaluation::build_report_with;
use policyx::extraction::{Extraction, Extractor, FoodPrediction, Slot};
use policyx::gateway::{BackendConfig, Gateway, MockScript};
use policyx::par::Execution;
use policyx::prompting::{MethodId, TemplateSet};
use policyx::taxonomy::{
    EffectiveYear, FoodCategory, FoodFlags, GroupMap, LegalStrategy, PolicyType, StrategySet,
    Taxonomy,
};

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn synthetic(n: usize, seed: u64) -> (Corpus, Vec<Extraction>) {
    let taxonomy = Taxonomy::default();
    let states = taxonomy.states();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let strategies = |rng: &mut ChaCha8Rng| {
        let a = LegalStrategy::ALL[rng.random_range(0..7)];
        let b = LegalStrategy::ALL[rng.random_range(0..7)];
        StrategySet::from_strategies([a, b]).unwrap()
    };
    let mut records = Vec::with_capacity(n);
    let mut extractions = Vec::with_capacity(n);
    for i in 0..n {
        let id = format!("s-{i:06}");
        let gold = GoldAnnotation {
            state: states[rng.random_range(0..states.len())].clone(),
            effect_year: EffectiveYear::new(rng.random_range(1990..=2024)).unwrap(),
            policy_type: PolicyType::ALL[rng.random_range(0..4)],
            strategies: strategies(&mut rng),
            food: FoodFlags::from_bits(std::array::from_fn(|_| rng.random_range(0..=1))),
        };
        let mut e = Extraction::empty(&id, MethodId::RoleBased);
        e.state = Slot::Value(states[rng.random_range(0..states.len())].clone());
        e.effect_year = Slot::Value(gold.effect_year);
        e.policy_type = Slot::Value(PolicyType::ALL[rng.random_range(0..4)]);
        e.strategies = Slot::Value(strategies(&mut rng));
        e.food = FoodPrediction(std::array::from_fn(|_| match rng.random_range(0..5) {
            0 => Slot::Missing,
            k => Slot::Value(k % 2 == 0),
        }));
        extractions.push(e);
        records.push(PolicyRecord {
            id,
            title: format!("Synthetic policy {i}"),
            summary: "A synthetic summary.".into(),
            gold: Some(gold),
        });
    }
    (Corpus::new(records).unwrap(), extractions)
}

fn scoring(c: &mut Criterion) {
    let groups = GroupMap::default();
    let mut group = c.benchmark_group("build_report");
    for n in [1_000, 50_000] {
        let (corpus, extractions) = synthetic(n, 1);
        for mode in MODES {
            group.bench_with_input(BenchmarkId::new(format!("{mode:?}"), n), &n, |b, _| {
                b.iter(|| {
                    build_report_with(black_box(&extractions), &corpus, &groups, "bench", mode)
                        .unwrap()
                })
            });
        }
    }
    group.finish();
}

fn extraction(c: &mut Criterion) {
    let (corpus, _) = synthetic(500, 2);
    let mut script = MockScript::default();
    for r in corpus.records() {
        let g = r.gold.as_ref().unwrap();
        let mut s = g.strategies.iter().map(|s| s.display());
        script.insert(
            format!("{}/PolicyAnalyst", r.id),
            format!(
                "Reasoning first.\n```json\n{{\"state\": \"{}\", \"effect_year\": \"{}\", \"policy_type\": \"{}\"}}\n```",
                g.state.as_str(),
                g.effect_year,
                g.policy_type.display()
            ),
        );
        script.insert(
            format!("{}/LegalStrategist", r.id),
            format!(
                "{{\"strategy_1\": \"{}\", \"strategy_2\": \"{}\"}}",
                s.next().unwrap_or(""),
                s.next().unwrap_or("")
            ),
        );
        let food: Vec<String> = FoodCategory::ALL
            .iter()
            .map(|c| format!("\"{}\": {}", c.key(), u8::from(g.food.get(*c))))
            .collect();
        script.insert(
            format!("{}/FoodExpert", r.id),
            format!("{{{}}}", food.join(", ")),
        );
    }
    let templates = TemplateSet::builtin();
    let taxonomy = Taxonomy::default();
    let records: Vec<&PolicyRecord> = corpus.records().iter().collect();
    let mut group = c.benchmark_group("run_corpus_mock");
    for mode in MODES {
        let gw = Gateway::new(BackendConfig::Mock(script.clone()), None, 8).unwrap();
        let extractor = Extractor::new(&gw, &templates, &taxonomy, "bench").with_execution(mode);
        group.bench_function(format!("{mode:?}"), |b| {
            b.iter(|| extractor.run_corpus(black_box(&records), MethodId::RoleBased, &[]))
        });
    }
    group.finish();
}

criterion_group!(benches, scoring, extraction);
criterion_main!(benches);
