use ntk_hessian::activations::make_nonlin;
use ntk_hessian::gaussmoments::{bi_expect, Cov2, QuadRule};

fn main() {
    let sp = make_nonlin("softplus").unwrap();
    let cases = [
        (10.0, 9.0, 10.0, 0usize, 0usize),
        (10.0, 9.0, 10.0, 2, 0),
        (10.0, 9.0, 10.0, 1, 3),
        (10.0, 9.0, 10.0, 3, 1),
        (0.5, -0.3 * (5.0f64).sqrt(), 10.0, 2, 2),
        (10.0, 0.2 * (0.1f64).sqrt(), 0.01, 4, 0),
        (0.01, 0.005, 0.01, 0, 0),
    ];
    for (a, c, b, fo, go) in cases {
        let k = Cov2::new(a, c, b);
        print!("K=({a},{c:.3},{b}) pair ({fo},{go}): ");
        let mut prev = None;
        for order in [32usize, 64, 128, 256, 512] {
            let rule = QuadRule::gauss_hermite(order).unwrap();
            let v = bi_expect(&sp, fo, &sp, go, k, &rule).unwrap();
            if let Some(p) = prev {
                let rel = (v - p as f64).abs() / (v.abs().max(1e-6));
                print!("{order}:{v:.12e}(d={rel:.1e}) ");
            } else {
                print!("{order}:{v:.12e} ");
            }
            prev = Some(v);
        }
        println!();
    }
}
