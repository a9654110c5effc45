use rdlasso::kernelfit::{KernelFamily, Sample};
use rdlasso::localpoly::{mse_optimal_bandwidth_with, BandwidthOptions, BandwidthSelector};
use rdlasso::sim::{draw_sample, Dgp, DgpSpec};

fn options(selector: BandwidthSelector) -> BandwidthOptions {
    BandwidthOptions {
        selector,
        ..Default::default()
    }
}

#[test]
fn first_design_mean_bandwidth() {
    let spec = DgpSpec::new(Dgp::Dgp1, 500, 0, 1).unwrap();
    let opts = options(BandwidthSelector::ThreeStep);
    let mean = (0..200)
        .map(|r| {
            mse_optimal_bandwidth_with(&draw_sample(&spec, r), &[], None, KernelFamily::Triangular, &opts)
                .unwrap()
                .h
        })
        .sum::<f64>()
        / 200.0;
    assert!((0.185..=0.205).contains(&mean), "mean h {mean}");
}

#[test]
fn bandwidths_scale_with_running_variable() {
    let s = draw_sample(&DgpSpec::new(Dgp::Dgp2, 500, 3, 8).unwrap(), 2);
    for c in [0.25, 3.0, 40.0] {
        let scaled = Sample::new(s.x().iter().map(|x| c * x).collect(), s.y().to_vec(), s.z().clone(), 0.0).unwrap();
        for selector in [BandwidthSelector::TwoStep, BandwidthSelector::ThreeStep] {
            for selected in [vec![], vec![0, 2]] {
                let o = options(selector);
                let a = mse_optimal_bandwidth_with(&s, &selected, None, KernelFamily::Triangular, &o).unwrap();
                let b = mse_optimal_bandwidth_with(&scaled, &selected, None, KernelFamily::Triangular, &o).unwrap();
                assert!((b.h / (c * a.h) - 1.0).abs() < 1e-6, "{selector:?} c={c}: {} vs {}", b.h, a.h);
                assert!((b.b / (c * a.b) - 1.0).abs() < 1e-6);
            }
        }
    }
}
