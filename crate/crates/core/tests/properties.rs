use proptest::prelude::*;

use qtraj_core::discrete::{measurement_step, MeasurementChannel};
use qtraj_core::linalg::expm4;
use qtraj_core::model::{build_total_hamiltonian, build_unitary};
use qtraj_core::sde::{euler_step_raw, lindblad, theta};
use qtraj_core::{c, CMat2, CMat4, CVec2, DensityMatrix, ModelConfig, Observable, WaveFunction};

fn matrix() -> impl Strategy<Value = CMat2> {
    prop::array::uniform8(-1.0f64..1.0)
        .prop_map(|v| CMat2::new(c(v[0], v[1]), c(v[2], v[3]), c(v[4], v[5]), c(v[6], v[7])))
}

fn state() -> impl Strategy<Value = DensityMatrix> {
    (prop::array::uniform4(-1.0f64..1.0), 0.0f64..1.0)
        .prop_filter("nonzero vector", |(v, _)| {
            v.iter().map(|x| x * x).sum::<f64>() > 1e-3
        })
        .prop_map(|(v, w)| {
            let psi = WaveFunction::normalized(CVec2::new(c(v[0], v[1]), c(v[2], v[3]))).unwrap();
            DensityMatrix::new(
                psi.projector().matrix().scale_re(w) + CMat2::identity().scale_re(0.5 * (1.0 - w)),
            )
            .unwrap()
        })
}

fn config() -> impl Strategy<Value = ModelConfig> {
    (matrix(), matrix(), 0.1f64..3.0, 1u32..2000, 0.0f64..6.3).prop_map(|(h, cc, phi, n, th)| {
        let mut cfg = ModelConfig::amplitude_damping(phi, n, 1.0);
        cfg.h0 = h.hermitian_part();
        cfg.c = cc;
        cfg.theta = th;
        cfg.observable = Observable::new(phi, -1.0, 1.0).unwrap();
        cfg
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn interaction_unitary_is_unitary(cfg in config()) {
        let u = build_unitary(&cfg);
        prop_assert!(u.unitarity_defect() < 1e-12);
        prop_assert_eq!(u.reassemble(), u.u);
        let h = build_total_hamiltonian(&cfg);
        prop_assert!((h.adjoint() - h).max_norm() < 1e-12);
    }

    #[test]
    fn measurement_keeps_states_valid(cfg in config(), rho in state(), draw in 0.0f64..1.0) {
        let channel = MeasurementChannel::from_config(&cfg);
        let step = measurement_step(&rho, &channel, draw).unwrap();
        prop_assert!((step.p + step.q - 1.0).abs() < 1e-12);
        prop_assert!(DensityMatrix::new(*step.next_state.matrix()).is_ok());
        prop_assert!(step.next_state.min_eigenvalue() > -1e-12);
    }

    #[test]
    fn generator_and_diffusion_are_traceless(cfg in config(), rho in state()) {
        let l = lindblad(rho.matrix(), &cfg.h0, &cfg.c);
        let t = theta(rho.matrix(), &cfg.c);
        prop_assert!(l.trace().norm() < 1e-13);
        prop_assert!(t.trace().norm() < 1e-13);
        prop_assert!(l.hermiticity_defect() < 1e-14);
        let step = euler_step_raw(rho.matrix(), 1e-3, 0.05, &cfg.h0, &cfg.c);
        prop_assert!((step.trace().re - 1.0).abs() < 1e-13);
    }

    #[test]
    fn pure_states_stay_pure_under_measurement(cfg in config(), v in prop::array::uniform4(-1.0f64..1.0), draw in 0.0f64..1.0) {
        prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        let psi = WaveFunction::normalized(CVec2::new(c(v[0], v[1]), c(v[2], v[3]))).unwrap();
        let channel = MeasurementChannel::from_config(&cfg);
        let step = measurement_step(&psi.projector(), &channel, draw).unwrap();
        prop_assert!((step.next_state.purity() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn expm_of_zero_and_inverse(scale in 0.0f64..5.0) {
        let z = CMat4::zero();
        prop_assert_eq!(expm4(&z), CMat4::identity());
        let mut a = CMat4::zero();
        a.0[0][1] = c(scale, 0.0);
        a.0[1][0] = c(-scale, 0.0);
        let prod = expm4(&a) * expm4(&(CMat4::zero() - a));
        prop_assert!((prod - CMat4::identity()).max_norm() < 1e-12);
    }
}
