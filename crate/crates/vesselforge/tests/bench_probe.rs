//! Throwaway throughput probe (run with --nocapture).

use std::time::Instant;

use vesselforge::tensor::{ConvSpec, Padding, Tensor};

fn randv(len: usize, seed: u64) -> Vec<f32> {
    let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
    (0..len)
        .map(|_| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f32 / (1u64 << 53) as f32 - 0.5
        })
        .collect()
}

#[test]
#[ignore]
fn conv_throughput() {
    // Representative mid-network layer: 64ch -> 64ch, 3x3, 32x32 map.
    for (ic, oc, hw, reps) in [(32usize, 32usize, 64usize, 20u32), (64, 64, 32, 40), (128, 128, 16, 80)] {
        let x = Tensor::<f32>::from_vec(vec![1, ic, hw, hw], randv(ic * hw * hw, 1)).unwrap();
        let w = Tensor::<f32>::from_vec(vec![oc, ic, 3, 3], randv(oc * ic * 9, 2)).unwrap();
        let b = Tensor::<f32>::from_vec(vec![oc], randv(oc, 3)).unwrap();
        let spec = ConvSpec::new((3, 3), 1, 1, Padding::same((3, 3), 1)).unwrap();

        let t0 = Instant::now();
        let mut sink = 0.0f32;
        for _ in 0..reps {
            let y = x.conv2d(&w, &b, &spec).unwrap();
            sink += y.data()[0];
        }
        let fwd = t0.elapsed().as_secs_f64() / reps as f64;

        let t0 = Instant::now();
        for _ in 0..reps {
            let y = x.conv2d(&w, &b, &spec).unwrap();
            y.sum_all().backward().unwrap();
            x.zero_grad();
            w.zero_grad();
            b.zero_grad();
        }
        let fwbw = t0.elapsed().as_secs_f64() / reps as f64;

        let macs = (hw * hw * ic * oc * 9) as f64;
        println!(
            "{}x{}x{}:{} fw {:.2} ms ({:.2} GFLOP/s), fw+bw {:.2} ms ({:.2} GFLOP/s) [{sink}]",
            ic,
            hw,
            hw,
            oc,
            fwd * 1e3,
            2.0 * macs / fwd / 1e9,
            fwbw * 1e3,
            6.0 * macs / fwbw / 1e9,
        );
    }
}
