//! Lagrange-coded encode/decode on real vectors: exact recovery of a single
//! embedding and of a many-sender aggregate, with the masking collision that
//! shows one share reveals nothing.
//!
//! ```bash
//! cargo run --release --example lcc_roundtrip
//! ```

use hifgl::coding::{self, ShareBundle};
use hifgl::rng;

fn main() {
    // the worked scalar case: h = 5 masked with z = 7 at T = 1
    let params = coding::generate_params(1, 0).unwrap();
    println!(
        "T=1 params: alphas {:?}, betas {:?}",
        params.alphas(),
        params.betas()
    );
    let bundle = coding::lcc_encode(&[5.0], &params, &[vec![7.0]]).unwrap();
    println!(
        "encode h=[5] with mask [7]: shares {:?} (the polynomial 2x-1 at x=1,2)",
        bundle.shares()
    );
    let back = coding::lcc_decode(&bundle, &params).unwrap();
    println!("decode -> {back:?}");

    // aggregation: sum of two senders' bundles decodes to the sum
    let other = coding::lcc_encode(&[10.0], &params, &[vec![2.0]]).unwrap();
    let mut agg = bundle.clone();
    agg.add_assign(&other).unwrap();
    println!(
        "summed shares {:?} decode to {:?} = 5 + 10",
        agg.shares(),
        coding::lcc_decode(&agg, &params).unwrap()
    );

    // a single share cannot identify h: two different (h, z) collide
    let a = coding::lcc_encode(&[5.0], &params, &[vec![7.0]]).unwrap();
    let b = coding::lcc_encode(&[1.0], &params, &[vec![1.0]]).unwrap();
    println!(
        "share collision: (h=5, z=7) and (h=1, z=1) both emit first share {}",
        a.shares()[0][0]
    );
    assert_eq!(a.shares()[0][0], b.shares()[0][0]);

    // random sweep: 64 senders, d = 64, per-message masks
    let mut stream = rng::stream(42);
    for t in 1..=4 {
        let params = coding::generate_params(t, 11).unwrap();
        let dim = 64;
        let mut agg = ShareBundle::zeros(params.share_count(), dim);
        let mut expected = vec![0.0; dim];
        for sender in 0..64u64 {
            let h: Vec<f64> = (0..dim).map(|_| rng::uniform_in(&mut stream, 3.0)).collect();
            for (e, x) in expected.iter_mut().zip(&h) {
                *e += x;
            }
            let masks = coding::draw_masks(&params, dim, &[t as u64, sender]);
            agg.add_assign(&coding::lcc_encode(&h, &params, &masks).unwrap())
                .unwrap();
        }
        let decoded = coding::lcc_decode(&agg, &params).unwrap();
        let worst = decoded
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
            .fold(0.0f64, f64::max);
        println!("T={t}: 64-sender aggregate, worst relative error {worst:.2e}");
        assert!(worst < 1e-6);
    }
}
