use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use matscreen_core::canvas::{AccessMode, Canvas, Value};
use matscreen_core::numerics::{analyze_beef, bm3_energy, fit_eos};
use matscreen_core::qeio::{parse_input_str, render_input, CalcSpec, ParseMode, PseudoCatalog};
use matscreen_core::rng::CounterRng;
use matscreen_core::structlab::{build_molecule, build_surface, place_adsorbate};

fn eos(c: &mut Criterion) {
    let volumes: Vec<f64> = (0..7).map(|i| 20.0 * (0.925 + 0.025 * i as f64)).collect();
    let energies: Vec<f64> = volumes.iter().map(|&v| bm3_energy(-15.0, 20.0, 0.01, 4.2, v)).collect();
    c.bench_function("fit_eos 7 points", |b| b.iter(|| fit_eos(black_box(&volumes), black_box(&energies)).unwrap()));
}

fn beef(c: &mut Criterion) {
    let r = CounterRng::stream(42, "bench");
    let draw = |off: u64| (0..2000u64).map(|m| r.normal_at(m + off) * 0.05).collect::<Vec<f64>>();
    let (slab, mol, top, fcc) = (draw(0), draw(2000), draw(4000), draw(6000));
    c.bench_function("analyze_beef 2000 members", |b| {
        b.iter(|| analyze_beef(black_box(&slab), &mol, &top, &fcc).unwrap())
    });
}

fn qe_io(c: &mut Criterion) {
    let (slab, sites) = build_surface("Pt", "fcc", 3.913, "111", [2, 2, 6], 3, 10.0).unwrap();
    let co = build_molecule("CO", &[[0.0; 3], [0.0, 0.0, 1.143]]).unwrap();
    let s = place_adsorbate(&slab, &co, sites["fcc"], &[], 2.0).unwrap();
    let mut spec = CalcSpec::default();
    spec.attach(&s, &PseudoCatalog::builtin()).unwrap();
    let (text, _) = render_input(&spec, &s).unwrap();
    c.bench_function("render_input 26 atoms", |b| b.iter(|| render_input(black_box(&spec), &s).unwrap()));
    c.bench_function("parse_input 26 atoms", |b| {
        b.iter(|| parse_input_str(black_box(&text), ParseMode::Strict).unwrap())
    });
}

fn canvas(c: &mut Criterion) {
    c.bench_function("canvas 1000 writes + snapshot", |b| {
        b.iter_batched(
            Canvas::new,
            |mut cv| {
                for i in 0..1000 {
                    let key = format!("k{}", i % 50);
                    cv.upsert("bench", &key, Value::num_list([i as f64, 1.0]), AccessMode::Normal).unwrap();
                }
                cv.to_snapshot_string()
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, eos, beef, qe_io, canvas);
criterion_main!(benches);
