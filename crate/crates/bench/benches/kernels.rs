use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use phtrans_bench::input;
use phtrans_core::autodiff::ops;
use phtrans_core::swin3d::{build_attention_mask, WindowAttention, WindowSpec};
use phtrans_core::{ParamBuilder, ParamSet, Tape, Var};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3d");
    for (ch, ext) in [(8usize, 16usize), (32, 16), (64, 8)] {
        let x = Var::constant(input(&[1, ch, ext, ext, ext], 0));
        let w = Var::constant(input(&[ch, ch, 3, 3, 3], 1));
        let b = Var::constant(input(&[ch], 2));
        g.bench_with_input(BenchmarkId::new("3x3x3", format!("c{ch}_{ext}^3")), &(), |bn, _| {
            bn.iter(|| ops::conv3d(&x, &w, Some(&b), [1; 3], [1; 3]).unwrap())
        });
        let wt = Var::constant(input(&[ch, ch / 2, 2, 2, 2], 3));
        g.bench_with_input(BenchmarkId::new("transpose_2x2x2", format!("c{ch}_{ext}^3")), &(), |bn, _| {
            bn.iter(|| ops::conv_transpose3d(&x, &wt, None, [2; 3]).unwrap())
        });
    }
    g.finish();
}

fn conv_backward(c: &mut Criterion) {
    let x = input(&[2, 16, 16, 16, 16], 4);
    let w = input(&[16, 16, 3, 3, 3], 5);
    c.bench_function("conv3d_forward_backward_c16_16^3", |bn| {
        bn.iter(|| {
            let tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let wv = tape.leaf(w.clone());
            let y = ops::sum(&ops::conv3d(&xv, &wv, None, [1; 3], [1; 3]).unwrap()).unwrap();
            tape.backward(&y).unwrap()
        })
    });
}

fn norm(c: &mut Criterion) {
    let x = Var::constant(input(&[2, 32, 16, 32, 32], 6));
    let g = Var::constant(input(&[32], 7));
    let b = Var::constant(input(&[32], 8));
    c.bench_function("instance_norm_c32_16x32x32", |bn| bn.iter(|| ops::instance_norm(&x, &g, &b, ops::NORM_EPS).unwrap()));
}

fn attention(c: &mut Criterion) {
    let mut grp = c.benchmark_group("window_attention");
    for (window, dims, dim, heads) in [([2, 4, 4], [4, 8, 8], 32usize, 2usize), ([3, 6, 6], [6, 12, 12], 64, 4)] {
        let mut set = ParamSet::<f32>::new();
        let attn = WindowAttention::build(&mut ParamBuilder::new(&mut set, 0), "a", dim, heads, window).unwrap();
        let spec = WindowSpec::shifted_for(window, dims).unwrap();
        let nw = spec.num_windows(dims).unwrap();
        let x = Var::constant(input(&[nw, spec.tokens(), dim], 9));
        let mask = Var::constant(build_attention_mask::<f32>(dims, &spec).unwrap());
        let p = set.constants();
        grp.bench_function(format!("{window:?}_c{dim}_h{heads}"), |bn| {
            bn.iter(|| attn.forward(&p, &x, Some(&mask)).unwrap().output)
        });
    }
    grp.finish();
}

criterion_group!(benches, conv, conv_backward, norm, attention);
criterion_main!(benches);
