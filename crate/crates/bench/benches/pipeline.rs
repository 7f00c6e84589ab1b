use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use std::hint::black_box;

use cptsketch::generator::{generate_batch, generate_batch_parallel};
use cptsketch::semantics::TraceOracle;
use cptsketch::{back_parse, generate_bpts, parse, RuleRenderer, Style};
use cptsketch_bench::params;

fn generation(c: &mut Criterion) {
    let mut g = c.benchmark_group("generate");
    g.throughput(Throughput::Elements(2500));
    g.bench_function("2500 trees, serial", |b| {
        b.iter(|| generate_batch(&params(1), 2500).unwrap().count())
    });
    g.bench_function("2500 trees, rayon", |b| {
        b.iter(|| generate_batch_parallel(&params(1), 2500).unwrap().len())
    });
    g.finish();
}

fn notation(c: &mut Criterion) {
    let trees: Vec<_> = generate_batch(&params(2), 200).unwrap().map(|i| i.tree).collect();
    let texts: Vec<String> = trees
        .iter()
        .map(|t| cptsketch::serialize(t, Style::Ascii).unwrap())
        .collect();
    c.bench_function("serialize 200", |b| {
        b.iter(|| {
            for t in &trees {
                black_box(cptsketch::serialize(t, Style::Unicode).unwrap());
            }
        })
    });
    c.bench_function("parse 200", |b| {
        b.iter(|| {
            for s in &texts {
                black_box(parse(s).unwrap());
            }
        })
    });
}

fn sketch(c: &mut Criterion) {
    let trees: Vec<_> = generate_batch(&params(3), 200).unwrap().map(|i| i.tree).collect();
    c.bench_function("rule render 200", |b| {
        b.iter(|| {
            for t in &trees {
                black_box(generate_bpts(t, &RuleRenderer).unwrap());
            }
        })
    });
    let texts: Vec<String> = trees
        .iter()
        .map(|t| generate_bpts(t, &RuleRenderer).unwrap().text)
        .collect();
    c.bench_function("back-parse 200", |b| {
        b.iter(|| {
            for s in &texts {
                black_box(back_parse(s).unwrap());
            }
        })
    });
}

fn traces(c: &mut Criterion) {
    let tree = parse("seq(a_1,xor_c_1(loop(c_2,a_4),par(a_2,a_3,a_5,a_6)))").unwrap();
    c.bench_function("traces, bound 2", |b| {
        b.iter_batched(
            || tree.clone(),
            |t| TraceOracle::new(2).enumerate(&t).unwrap().len(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, generation, notation, sketch, traces);
criterion_main!(benches);
