mod support {
    pub mod gradcheck;
    pub mod reference;
}

use support::gradcheck::{self, PRIMITIVES};
use support::reference::Conv3dSpec;

const TOL: f64 = 1e-3;

#[test]
fn every_primitive_matches_finite_differences() {
    for (name, check) in PRIMITIVES {
        for seed in 0..20 {
            let err = check(seed);
            assert!(err < TOL, "{name} seed {seed}: relative error {err:.3e}");
        }
    }
}

#[test]
fn conv3d_sum_gradient_on_reference_shape() {
    let spec = Conv3dSpec {
        c_in: 2,
        c_out: 3,
        input: [5, 5, 5],
        kernel: [3, 3, 3],
        stride: [1, 1, 1],
        padding: [1, 1, 1],
    };
    for seed in [1, 2, 3] {
        let err = gradcheck::conv3d_with(spec, seed, true);
        assert!(err < TOL, "seed {seed}: {err:.3e}");
    }
}
