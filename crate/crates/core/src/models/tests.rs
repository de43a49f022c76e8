use super::*;

fn tiny(kind: VariantKind) -> VariantSpec {
    VariantSpec {
        input_len: 4,
        horizon: 3,
        hidden: 4,
        order: 1,
        slots: 3,
        memory_width: 4,
        spatial_embed: 3,
        modal_embed: 2,
        seed: 7,
        ..VariantSpec::new(kind, 3, 2, 5)
    }
}

fn batch(spec: &VariantSpec, b: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::uniform(
        &[b, spec.input_len, spec.nodes, spec.channels],
        1.0,
        &mut rng,
    );
    let c = Tensor::uniform(
        &[b, spec.input_len + spec.horizon, spec.cov_width],
        1.0,
        &mut rng,
    );
    (x, c)
}

#[test]
fn every_variant_forecasts_horizon_by_regions_by_channels() {
    for kind in VariantKind::ALL {
        let spec = VariantSpec {
            hidden: 6,
            order: 2,
            ..VariantSpec::new(kind, 6, 4, 9)
        };
        let model = build_variant(spec).unwrap();
        let (x, c) = batch(&spec, 2, 1);
        let pred = model.predict(&x, &c).unwrap();
        assert_eq!(pred.values.shape(), &[2, 8, 6, 4], "{kind}");
        assert!(pred.values.is_finite());
        assert_eq!(pred.attention.is_some(), kind.has_memory(), "{kind}");
    }
}

#[test]
fn variant_names_round_trip() {
    for kind in VariantKind::ALL {
        assert_eq!(kind.name().parse::<VariantKind>().unwrap(), kind);
    }
    assert_eq!(
        "east_net".parse::<VariantKind>().unwrap(),
        VariantKind::EastNet
    );
    assert!(matches!(
        "gwnet".parse::<VariantKind>(),
        Err(Error::Config(_))
    ));
}

#[test]
fn same_seed_gives_bitwise_identical_parameters() {
    for kind in VariantKind::ALL {
        let a = build_variant(tiny(kind)).unwrap();
        let b = build_variant(tiny(kind)).unwrap();
        assert_eq!(a.store(), b.store());
    }
    let c = build_variant(VariantSpec {
        seed: 8,
        ..tiny(VariantKind::StNet)
    })
    .unwrap();
    assert_ne!(
        c.store(),
        build_variant(tiny(VariantKind::StNet)).unwrap().store()
    );
}

#[test]
fn invalid_specs_are_contract_errors() {
    let bad = [
        VariantSpec {
            hidden: 0,
            ..tiny(VariantKind::StNet)
        },
        VariantSpec {
            input_len: 3,
            ..tiny(VariantKind::EastNet)
        },
        VariantSpec {
            identity_modal: true,
            ..tiny(VariantKind::StNet)
        },
    ];
    for spec in bad {
        assert!(
            matches!(build_variant(spec), Err(Error::Contract(_))),
            "{spec:?}"
        );
    }
}

#[test]
fn single_branch_has_fewer_parameters_than_two_branches() {
    let spec = VariantSpec::new(VariantKind::StNet, 12, 4, 68);
    let st = build_variant(spec).unwrap().param_count();
    let hmi = build_variant(VariantSpec {
        kind: VariantKind::HmiNet,
        ..spec
    })
    .unwrap()
    .param_count();
    assert!(st < hmi, "{st} vs {hmi}");
}

#[test]
fn generated_decoder_kernels_are_not_stored() {
    let model = build_variant(tiny(VariantKind::EastNet)).unwrap();
    let store = model.store();
    for branch in ["spatial", "modal"] {
        for l in 0..2 {
            for gate in ["update", "reset", "candidate"] {
                assert!(store
                    .find(&format!("{branch}.dec{l}.{gate}.kernel"))
                    .is_none());
                assert!(store
                    .find(&format!("{branch}.dec{l}.{gate}.bias"))
                    .is_some());
                assert!(store
                    .find(&format!("{branch}.enc{l}.{gate}.kernel"))
                    .is_some());
            }
        }
    }
    let hmi = build_variant(tiny(VariantKind::HmiNet)).unwrap();
    assert!(hmi.store().find("spatial.dec0.update.kernel").is_some());
}

#[test]
fn covariate_embedding_contracts() {
    let tape = Tape::new();
    let rows = Tensor::new(
        &[3, 4],
        vec![1., 0., 0., 0., 0., 0., 1., 0., 1., 0., 0., 0.],
    )
    .unwrap();
    let covs = tape.constant(rows.clone());
    let zero = tape.constant(Tensor::zeros(&[4, 2]));
    let e = embed_tcov(&tape, covs, zero).unwrap();
    assert!(tape.value(e).data().iter().all(|&v| v == 0.0));

    let eye = tape.constant(Tensor::eye(4));
    let e = embed_tcov(&tape, covs, eye).unwrap();
    assert_eq!(*tape.value(e), rows);
    {
        let v = tape.value(e);
        assert_eq!(v.data()[..4], v.data()[8..]);
    }

    let wrong = tape.constant(Tensor::zeros(&[5, 2]));
    assert!(matches!(
        embed_tcov(&tape, covs, wrong),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn fusion_is_the_bilinear_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let hs = Tensor::uniform(&[1, 3, 2], 1.0, &mut rng);
    let hm = Tensor::uniform(&[1, 4, 2], 1.0, &mut rng);
    let tape = Tape::new();
    let (s, w, m) = (
        tape.constant(hs.clone()),
        tape.constant(Tensor::eye(2)),
        tape.constant(hm.clone()),
    );
    let out = fuse_views(&tape, s, w, m).unwrap();
    let v = tape.value(out);
    for i in 0..3 {
        for j in 0..4 {
            let want: f64 = (0..2).map(|k| hs.at(&[0, i, k]) * hm.at(&[0, j, k])).sum();
            assert!((v.at(&[0, i, j]) - want).abs() < 1e-15);
        }
    }
}

/// Copy single-branch weights into an identity-modal HMINet. Its first
/// recurrent layers see `v'` extra covariate columns, which get zero rows.
fn copy_single_branch(st: &Model, hmi: &mut Model) {
    let spec = *st.spec();
    let (c, extra, q) = (spec.channels, spec.cov_embed, spec.hidden);
    let names: Vec<String> = st.store().iter().map(|p| p.name.clone()).collect();
    for name in names {
        let src = st.store().value(st.store().find(&name).unwrap()).clone();
        let id = hmi
            .store()
            .find(&name)
            .unwrap_or_else(|| panic!("missing {name}"));
        let dst_shape = hmi.store().value(id).shape().to_vec();
        let value = if dst_shape == src.shape() {
            src
        } else {
            let [k1, p_src, qq] = [src.shape()[0], src.shape()[1], src.shape()[2]];
            assert_eq!(dst_shape, vec![k1, p_src + extra, qq]);
            let mut t = Tensor::zeros(&dst_shape);
            for k in 0..k1 {
                for r in 0..p_src {
                    let dr = if r < c { r } else { r + extra };
                    for j in 0..q {
                        t.set(&[k, dr, j], src.at(&[k, r, j]));
                    }
                }
            }
            t
        };
        hmi.store_mut().set_value(id, value).unwrap();
    }
    let proj = hmi.covariate_projection().unwrap();
    let zeros = Tensor::zeros(hmi.store().value(proj).shape());
    hmi.store_mut().set_value(proj, zeros).unwrap();
}

#[test]
fn identity_modal_view_reduces_to_single_branch() {
    let spec = VariantSpec {
        hidden: 5,
        order: 2,
        ..VariantSpec::new(VariantKind::StNet, 4, 3, 6)
    };
    let st = build_variant(spec).unwrap();
    let mut hmi = build_variant(VariantSpec {
        kind: VariantKind::HmiNet,
        identity_modal: true,
        seed: 99,
        ..spec
    })
    .unwrap();
    copy_single_branch(&st, &mut hmi);
    let (x, c) = batch(&spec, 3, 4);
    let a = st.predict(&x, &c).unwrap().values;
    let b = hmi.predict(&x, &c).unwrap().values;
    assert!(a.max_abs_diff(&b) < 1e-12, "{}", a.max_abs_diff(&b));
}

fn permute_regions(t: &Tensor, perm: &[usize], axis: usize) -> Tensor {
    let shape = t.shape();
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let mut data = vec![0.0; t.numel()];
    for o in 0..outer {
        for (i, &src) in perm.iter().enumerate() {
            let d = (o * n + i) * inner;
            let s = (o * n + src) * inner;
            data[d..d + inner].copy_from_slice(&t.data()[s..s + inner]);
        }
    }
    Tensor::new(shape, data).unwrap()
}

#[test]
fn relabeling_regions_permutes_forecasts() {
    let perm = [2, 0, 3, 1];
    for kind in [VariantKind::StNet, VariantKind::StNetTcov] {
        let spec = VariantSpec {
            hidden: 4,
            order: 2,
            ..VariantSpec::new(kind, 4, 2, 5)
        };
        let model = build_variant(spec).unwrap();
        let mut relabeled = model.clone();
        for id in [model.spatial_branch().source, model.spatial_branch().target] {
            let v = permute_regions(model.store().value(id), &perm, 0);
            relabeled.store_mut().set_value(id, v).unwrap();
        }
        let (x, c) = batch(&spec, 2, 5);
        let a = model.predict(&x, &c).unwrap().values;
        let b = relabeled
            .predict(&permute_regions(&x, &perm, 2), &c)
            .unwrap()
            .values;
        let want = permute_regions(&a, &perm, 2);
        assert!(b.max_abs_diff(&want) < 1e-12, "{kind}");
    }
}

fn covariate_sensitivity(model: &Model) -> f64 {
    let (x, c) = batch(model.spec(), 2, 6);
    let tape = Tape::new();
    let binding = model.store().bind(&tape);
    let xv = tape.constant(x);
    let cv = tape.param(&c);
    let out = model.forward(&tape, &binding, xv, cv).unwrap();
    let loss = tape.sum(out.forecast);
    let grads = tape.backward(loss).unwrap();
    grads.get_or_zeros(cv).data().iter().map(|g| g.abs()).sum()
}

#[test]
fn forecasts_depend_on_covariates_exactly_for_covariate_variants() {
    for kind in VariantKind::ALL {
        let mut model = build_variant(tiny(kind)).unwrap();
        if let Some(proj) = model.covariate_projection() {
            assert_eq!(
                covariate_sensitivity(&model),
                0.0,
                "{kind} starts covariate-neutral"
            );
            let shape = model.store().value(proj).shape().to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            model
                .store_mut()
                .set_value(proj, Tensor::uniform(&shape, 0.5, &mut rng))
                .unwrap();
        }
        let s = covariate_sensitivity(&model);
        if kind.uses_covariates() {
            assert!(s > 1e-8, "{kind}: {s}");
        } else {
            assert_eq!(s, 0.0, "{kind}");
        }
    }
}

#[test]
fn every_variant_passes_gradient_check() {
    for kind in VariantKind::ALL {
        let model = build_variant(tiny(kind)).unwrap();
        let (x, c) = batch(model.spec(), 2, 8);
        let report = gradient_check(&model, &x, &c, 40, 1e-5, 1).unwrap();
        assert!(report.max_rel_error < 1e-6, "{kind}: {report:?}");
    }
}

#[test]
fn non_finite_weights_name_the_failing_step() {
    let mut model = build_variant(tiny(VariantKind::StNet)).unwrap();
    let out = model.output_weight();
    let nan = model.store().value(out).map(|_| f64::NAN);
    model.store_mut().set_value(out, nan).unwrap();
    let (x, c) = batch(model.spec(), 1, 2);
    match model.predict(&x, &c) {
        Err(Error::Numeric(msg)) => assert!(msg.contains("decode step 1"), "{msg}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn wrong_window_shape_is_rejected() {
    let model = build_variant(tiny(VariantKind::HmiNet)).unwrap();
    let spec = *model.spec();
    let (x, _) = batch(&spec, 1, 2);
    let c = Tensor::zeros(&[1, spec.input_len, spec.cov_width]);
    assert!(matches!(model.predict(&x, &c), Err(Error::Shape { .. })));
}

#[test]
fn single_window_forecast_matches_batched_prediction() {
    let model = build_variant(tiny(VariantKind::EastNet)).unwrap();
    let (x, c) = batch(model.spec(), 1, 3);
    let s = *model.spec();
    let one = model
        .forecast(
            &x.reshape(&[s.input_len, s.nodes, s.channels]).unwrap(),
            &c.reshape(&[s.input_len + s.horizon, s.cov_width]).unwrap(),
        )
        .unwrap();
    let many = model.predict(&x, &c).unwrap().values;
    assert_eq!(one.values.data(), many.data());
}

#[test]
fn checkpoint_round_trip_preserves_forecasts() {
    for kind in VariantKind::ALL {
        let mut model = build_variant(tiny(kind)).unwrap();
        if let Some(bank) = model.memory_bank().cloned() {
            model.store_mut().set_trainable(bank.records, false);
        }
        let bytes = encode_checkpoint(&model);
        let loaded = decode_checkpoint(&bytes).unwrap();
        assert_eq!(loaded.store(), model.store(), "{kind}");
        let (x, c) = batch(model.spec(), 2, 4);
        assert_eq!(
            model.predict(&x, &c).unwrap(),
            loaded.predict(&x, &c).unwrap()
        );
    }
}

#[test]
fn corrupted_checkpoints_are_format_errors() {
    let model = build_variant(tiny(VariantKind::StNetMem)).unwrap();
    let bytes = encode_checkpoint(&model);
    assert!(matches!(
        decode_checkpoint(&bytes[..bytes.len() - 1]),
        Err(Error::Format { .. })
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        decode_checkpoint(&bad),
        Err(Error::Format { offset: 0, .. })
    ));
    let mut extra = bytes;
    extra.push(0);
    assert!(matches!(
        decode_checkpoint(&extra),
        Err(Error::Format { .. })
    ));
}
