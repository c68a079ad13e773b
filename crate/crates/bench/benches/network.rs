use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use image::{Rgb, RgbImage};

use maskpad_core::network::{Model, ModelConfig, Variant};
use maskpad_core::Grid;

fn passes(c: &mut Criterion) {
    let img = RgbImage::from_fn(224, 224, |x, y| Rgb([(x * 7 % 256) as u8, (y * 3 % 256) as u8, ((x + y) % 256) as u8]));
    let label = Grid::from_vec(14, 14, (0..196).map(|i| f64::from(i % 3 == 0)).collect()).unwrap();
    let mut group = c.benchmark_group("network");
    group.sample_size(10);
    for v in Variant::ALL {
        let model = Model::<f32>::new(ModelConfig::for_variant(v)).unwrap();
        group.bench_function(format!("{v}/forward"), |b| b.iter(|| model.forward(black_box(&img)).unwrap()));
        group.bench_function(format!("{v}/forward_backward"), |b| {
            b.iter(|| {
                let x = model.prepare(&img).unwrap();
                model.loss_and_grad(x, black_box(&label), 0.0, 1.0).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, passes);
criterion_main!(benches);
