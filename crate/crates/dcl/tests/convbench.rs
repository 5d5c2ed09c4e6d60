// temporary micro-benchmark
use dcl::ops::{conv2d, conv2d_backward};
use dcl::tensor::{Kernel4, Tensor3};
use std::time::Instant;

#[test]
#[ignore]
fn convbench() {
    let x = Tensor3::<f32>::from_fn(64, 64, 8, |i, j, c| ((i * 64 + j) * 8 + c) as f32 * 1e-4);
    let k = Kernel4::<f32>::from_vec(5, 5, 8, 8, (0..5 * 5 * 8 * 8).map(|v| v as f32 * 1e-3).collect())
        .unwrap();
    let dy = Tensor3::<f32>::from_fn(64, 64, 8, |_, _, _| 0.5f32);

    let n = 200;
    let t = Instant::now();
    for _ in 0..n {
        std::hint::black_box(conv2d(&x, &k).unwrap());
    }
    let fwd = t.elapsed().as_secs_f64() / n as f64;
    let t = Instant::now();
    for _ in 0..n {
        std::hint::black_box(conv2d_backward(&x, &k, &dy).unwrap());
    }
    let bwd = t.elapsed().as_secs_f64() / n as f64;
    let macs = 64.0 * 64.0 * 8.0 * (5.0 * 5.0 * 8.0);
    println!(
        "fwd {:.2} ms ({:.2} GMAC/s), bwd {:.2} ms ({:.2} GMAC/s)",
        fwd * 1e3,
        macs / fwd / 1e9,
        bwd * 1e3,
        2.0 * macs / bwd / 1e9
    );
}
