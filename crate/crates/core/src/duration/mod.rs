//! Duration and variance predictors, Gaussian upsampling and the
//! duration-derived positional encoding.

mod positional;
mod predictor;
mod upsample;

pub use positional::{duration_positional_encoding, frame_progress, positional_batch, track_positional_encoding};
pub use predictor::{duration_loss, duration_loss_values, ScalarPredictor};
pub use upsample::{
    frame_count, frame_times, gaussian_upsample, teacher_forced_upsample, token_centers, upsample_batch,
    upsample_weights, ConditioningTrack, DurationTrack, VARIANCE_FLOOR,
};

/// Start time of every token interval.
pub fn token_starts(durations: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    durations
        .iter()
        .map(|&d| {
            let s = acc;
            acc += d;
            s
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use candle_core::{DType, Device, Tensor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::config::ModelConfig;
    use crate::nn::{Init, ParamKind, ParamStore};

    fn rows(t: &Tensor) -> Vec<Vec<f64>> {
        t.to_dtype(DType::F64).unwrap().to_vec2::<f64>().unwrap()
    }

    fn h_rows(l: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..l * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, (l, d), &Device::Cpu).unwrap()
    }

    #[test]
    fn single_token_copies_its_row() {
        let h = h_rows(1, 5, 1);
        let tr = gaussian_upsample(&h, &DurationTrack::new(vec![4.0], vec![0.7]).unwrap()).unwrap();
        assert_eq!(tr.n_frames(), 4);
        let f = rows(&tr.frames);
        let h0 = &rows(&h)[0];
        for r in f {
            for (a, b) in r.iter().zip(h0) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn narrow_gaussians_give_hard_assignment() {
        let h = h_rows(2, 3, 2);
        let tr = gaussian_upsample(&h, &DurationTrack::new(vec![2.0, 2.0], vec![0.01, 0.01]).unwrap()).unwrap();
        assert_eq!(tr.token_centers, vec![1.0, 3.0]);
        assert_eq!(tr.frame_times, vec![0.5, 1.5, 2.5, 3.5]);
        let f = rows(&tr.frames);
        let hr = rows(&h);
        for (k, row) in f.iter().enumerate() {
            let src = &hr[k / 2];
            for (a, b) in row.iter().zip(src) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn huge_variance_averages_rows() {
        let h = h_rows(3, 4, 3);
        let tr = gaussian_upsample(&h, &DurationTrack::new(vec![1.0, 5.0, 2.0], vec![1e6; 3]).unwrap()).unwrap();
        let hr = rows(&h);
        for row in rows(&tr.frames) {
            for j in 0..4 {
                let mean = (hr[0][j] + hr[1][j] + hr[2][j]) / 3.0;
                assert!((row[j] - mean).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn upsampling_is_order_sensitive() {
        let h = h_rows(2, 4, 4);
        let a = gaussian_upsample(&h, &DurationTrack::new(vec![1.0, 5.0], vec![1.0, 1.0]).unwrap()).unwrap();
        let rev = Tensor::cat(&[h.narrow(0, 1, 1).unwrap(), h.narrow(0, 0, 1).unwrap()], 0).unwrap();
        let b = gaussian_upsample(&rev, &DurationTrack::new(vec![5.0, 1.0], vec![1.0, 1.0]).unwrap()).unwrap();
        let diff = (a.frames - b.frames).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff > 1e-3);
    }

    #[test]
    fn rejects_degenerate_tracks() {
        assert!(DurationTrack::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(DurationTrack::new(vec![], vec![]).is_err());
        assert!(DurationTrack::new(vec![1.0], vec![0.0]).is_err());
        assert!(DurationTrack::new(vec![1.0, 2.0], vec![1.0]).is_err());
    }

    #[test]
    fn rounding_is_half_up_with_floor_one() {
        assert_eq!(frame_count(&[1.25, 1.25]), 3);
        assert_eq!(frame_count(&[1.2, 1.2]), 2);
        assert_eq!(frame_count(&[0.1]), 1);
    }

    proptest! {
        #[test]
        fn weights_are_row_stochastic(
            d in proptest::collection::vec(0.0f64..10.0, 1..6),
            v in proptest::collection::vec(1e-3f64..50.0, 6),
        ) {
            prop_assume!(d.iter().sum::<f64>() >= 1.0);
            let l = d.len();
            let track = DurationTrack::new(d.clone(), v[..l].to_vec()).unwrap();
            let tr = gaussian_upsample(&h_rows(l, 2, 0), &track).unwrap();
            prop_assert_eq!(tr.n_frames(), frame_count(&d));
            prop_assert!(tr.frame_times.windows(2).all(|w| w[0] < w[1]));
            for row in rows(&tr.weights) {
                prop_assert!(row.iter().all(|&w| w >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn first_frame_progress_below_reciprocal_duration(d in proptest::collection::vec(1u32..12, 1..7)) {
            let d: Vec<f64> = d.iter().map(|&x| x as f64).collect();
            let n = frame_count(&d);
            let prog = frame_progress(&d, n);
            let mut seen = vec![false; d.len()];
            for &(i, p) in &prog {
                if !seen[i] {
                    seen[i] = true;
                    prop_assert!(p < 1.0 / d[i]);
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
            let pe = duration_positional_encoding(&d, n, 16).unwrap();
            prop_assert_eq!(pe.len(), n * 16);
        }
    }

    #[test]
    fn doubling_durations_doubles_boundaries() {
        let d = [3.0, 5.0, 2.0, 7.0];
        let d2: Vec<f64> = d.iter().map(|x| x * 2.0).collect();
        let (a, b) = (token_starts(&d), token_starts(&d2));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(2.0 * x, *y);
        }
        // frames that open each token in the doubled track sit at twice the boundary
        let prog = frame_progress(&d2, frame_count(&d2));
        for (i, s) in b.iter().enumerate() {
            let k = prog.iter().position(|&(j, _)| j == i).unwrap();
            assert!((k as f64 + 0.5 - s) < 1.0 && k as f64 + 0.5 >= *s);
        }
    }

    #[test]
    fn duration_loss_examples() {
        assert_eq!(duration_loss_values(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(duration_loss_values(&[2.0, 3.0, 5.0], &[1.0, 2.0, 4.0]).unwrap(), 1.0);
        assert_eq!(duration_loss_values(&[1.0], &[1.0, 2.0]).unwrap_err().category(), "input");
        let p = Tensor::new(&[[2f32, 3.0, 9.0]], &Device::Cpu).unwrap();
        let t = Tensor::new(&[[1f32, 2.0, 0.0]], &Device::Cpu).unwrap();
        let l = duration_loss(&p, &t, &[2]).unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(l, 1.0);
    }

    struct Heads {
        store: ParamStore,
        dur: ScalarPredictor,
        var: ScalarPredictor,
    }

    fn heads() -> Heads {
        let cfg = ModelConfig::tiny();
        let mut store = ParamStore::new(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut init = Init::new(&mut store, &mut rng);
        let dur = ScalarPredictor::new(&mut init.pp("duration"), &cfg, 8.0, 0.0).unwrap();
        let var = ScalarPredictor::new(&mut init.pp("variance"), &cfg, 4.0, 1e-4).unwrap();
        Heads { store, dur, var }
    }

    #[test]
    fn predictor_outputs_are_positive() {
        let hd = heads();
        for seed in 0..5 {
            let x = (h_rows(6, 32, seed).unsqueeze(0).unwrap() * 50.0).unwrap();
            let d = rows(&hd.dur.forward(&x, &[6], None).unwrap());
            let v = rows(&hd.var.forward(&x, &[6], None).unwrap());
            assert!(d[0].iter().all(|&x| x >= 0.0));
            assert!(v[0].iter().all(|&x| x >= 1e-4));
        }
    }

    #[test]
    fn variance_gradient_reaches_predictor_through_sigma() {
        let hd = heads();
        let bridged = h_rows(3, 32, 9).unsqueeze(0).unwrap();
        let target = h_rows(12, 32, 10);
        let truth = [3u32, 5, 4];
        let loss = || {
            let v = hd.var.forward(&bridged, &[3], None).unwrap().squeeze(0).unwrap();
            let tr = teacher_forced_upsample(&bridged.squeeze(0).unwrap(), &truth, &v).unwrap();
            assert_eq!(tr.n_frames(), 12);
            (tr.frames - &target).unwrap().sqr().unwrap().mean_all().unwrap()
        };
        let name = "variance.out.bias";
        let p = hd.store.get(name).unwrap();
        let orig = p.tensor().to_vec1::<f64>().unwrap()[0];
        let at = |x: f64| {
            hd.store.set(name, &Tensor::new(&[x], &Device::Cpu).unwrap()).unwrap();
            loss().to_scalar::<f64>().unwrap()
        };
        let fd = (at(orig + 1e-4) - at(orig - 1e-4)) / 2e-4;
        at(orig);
        assert!(fd.abs() > 1e-8, "finite difference {fd}");
        let grads = loss().backward().unwrap();
        let g = grads.get(p.tensor()).unwrap().to_vec1::<f64>().unwrap()[0];
        assert!((g - fd).abs() / fd.abs() < 1e-3);
    }

    #[test]
    fn duration_loss_does_not_reach_upstream() {
        let hd = heads();
        let mut up_store = ParamStore::new(DType::F64);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut init = Init::new(&mut up_store, &mut rng);
        let upstream = crate::nn::Linear::new(&mut init.pp("upstream"), 8, 32, true).unwrap();
        let x = h_rows(4, 8, 1).unsqueeze(0).unwrap();
        let bridged = upstream.forward(&x).unwrap();
        let pred = hd.dur.forward(&bridged, &[4], None).unwrap();
        let truth = Tensor::new(&[[4f64, 6.0, 5.0, 9.0]], &Device::Cpu).unwrap();
        let grads = duration_loss(&pred, &truth, &[4]).unwrap().backward().unwrap();
        for p in up_store.iter() {
            let zero = grads
                .get(p.tensor())
                .map(|g| g.abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap() == 0.0)
                .unwrap_or(true);
            assert!(zero, "{} received a gradient", p.name);
        }
        let own = hd.store.iter().filter(|p| p.kind == ParamKind::Trainable && p.name.starts_with("duration"));
        assert!(own.into_iter().any(|p| grads.get(p.tensor()).is_some()));
    }
}
