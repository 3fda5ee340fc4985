use daflow::data::{make_batch, SyntheticDataset};
use daflow::model::{DafnConfig, MergeMode, Sdafn, TryOnBatch};
use daflow::tensor::{Dims, Tensor};
use daflow::Error;

fn small(samples: usize) -> DafnConfig {
    DafnConfig {
        levels: 3,
        samples,
        fpn_channels: vec![4, 6, 8],
        mfe_hidden: vec![8, 6, 4, 4],
        mfe_kernels: vec![3, 3, 3, 3],
        shallow_channels: vec![4, 6],
        ..DafnConfig::default()
    }
}

fn batch(n: usize, h: usize, w: usize) -> TryOnBatch {
    let ds = SyntheticDataset::new(5, n, h, w);
    let samples: Vec<_> = (0..n).map(|i| ds.get(i).sample()).collect();
    make_batch(&samples.iter().collect::<Vec<_>>(), 3.0).unwrap().0
}

#[test]
fn untrained_network_decodes_the_even_mix() {
    for mode in [MergeMode::JointSoftmax, MergeMode::Concat] {
        let model = Sdafn::<f32>::new(DafnConfig { merge_mode: mode, ..small(3) }, 1).unwrap();
        let b = batch(2, 32, 24);
        let p = model.predict(&b).unwrap();
        let want = model.identity_render(&b).unwrap();
        let gap = p.image.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(gap < 1e-6, "{mode:?}: {gap}");
        assert!(p.flow_src.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn output_shapes() {
    let model = Sdafn::<f32>::new(small(4), 2).unwrap();
    let b = batch(2, 32, 24);
    let p = model.predict(&b).unwrap();
    assert_eq!(p.image.dims(), Dims::new(2, 3, 32, 24));
    assert_eq!(p.flow_src.dims(), Dims::new(2, 8, 32, 24));
    assert_eq!(p.attn_src.dims(), Dims::new(2, 4, 32, 24));
    assert!(p.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let single = Sdafn::<f32>::new(DafnConfig { single_branch: true, ..small(2) }, 2).unwrap();
    assert!(single.predict(&b).unwrap().flow_ref.is_none());
}

#[test]
fn bad_inputs_are_shape_errors() {
    let model = Sdafn::<f32>::new(small(2), 3).unwrap();
    let mut b = batch(1, 32, 24);
    b.keypoints = Tensor::zeros(Dims::new(1, 5, 32, 24));
    assert!(matches!(model.predict(&b), Err(Error::Shape { .. } | Error::ShapeMismatch { .. })));
    let odd = batch(1, 30, 24);
    assert!(model.predict(&odd).is_err());
}

#[test]
fn same_resolution_inference_is_a_plain_forward() {
    let model = Sdafn::<f32>::new(small(2), 4).unwrap();
    let b = batch(1, 32, 24);
    assert_eq!(model.infer_at_resolution(&b, (32, 24), None).unwrap().image, model.predict(&b).unwrap().image);
    let hi = batch(1, 64, 48);
    assert_eq!(model.infer_at_resolution(&hi, (32, 24), None).unwrap().image.dims(), Dims::new(1, 3, 64, 48));
    assert!(model.infer_at_resolution(&hi, (30, 24), None).is_err());
}

#[test]
fn seeds_decide_initialization() {
    let a = Sdafn::<f32>::new(small(2), 9).unwrap();
    let b = Sdafn::<f32>::new(small(2), 9).unwrap();
    let c = Sdafn::<f32>::new(small(2), 10).unwrap();
    let values = |m: &Sdafn| m.params().iter().map(|(_, p)| p.value.clone()).collect::<Vec<_>>();
    assert_eq!(values(&a), values(&b));
    assert_ne!(values(&a), values(&c));
}
