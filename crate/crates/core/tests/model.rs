//! Shape contract of the full-size networks and weight transfer between phases.

use laneforge::autograd::Tape;
use laneforge::model::{
    encoder_forward, model_forward, transfer_weights, Checkpoint, ModelSpec, Phase, Variant, HEAD_PARAMS,
};
use laneforge::tensor::Tensor;

#[test]
fn full_size_bottleneck_and_heads() {
    for v in Variant::ALL {
        let spec = ModelSpec::full(v, Phase::Pretrain.head_channels());
        assert_eq!((spec.input_height, spec.input_width), (128, 256));
        assert_eq!((spec.bottleneck_channels(), spec.bottleneck_size()), (512, (8, 16)));
        let ck = Checkpoint::<f32>::init(&spec, Phase::Pretrain, 1).unwrap();
        let tape = Tape::new();
        let p = ck.params.bind(&tape, false);
        let frame = tape.constant(Tensor::zeros(&[1, 3, 128, 256]));
        assert_eq!(encoder_forward(&p, &spec, frame).unwrap().bottleneck.shape(), vec![1, 512, 8, 16]);
    }
    for phase in [Phase::Pretrain, Phase::Finetune] {
        let spec = ModelSpec::full(Variant::UnetConvLstm, phase.head_channels());
        let ck = Checkpoint::<f32>::init(&spec, phase, 2).unwrap();
        let tape = Tape::new();
        let frames = tape.constant(Tensor::zeros(&[spec.sequence_length, 3, 128, 256]));
        let out = model_forward(&ck.params.bind(&tape, false), &spec, frames).unwrap();
        assert_eq!(out.shape(), vec![1, phase.head_channels(), 128, 256]);
    }
    assert_eq!((Phase::Pretrain.head_channels(), Phase::Finetune.head_channels()), (3, 2));
}

#[test]
fn transfer_keeps_every_non_head_tensor() {
    for v in Variant::ALL {
        let pre = Checkpoint::<f32>::init(&ModelSpec::desk(v, 3), Phase::Pretrain, 7).unwrap();
        let fine = transfer_weights(&pre, &ModelSpec::desk(v, 2), 99).unwrap();
        assert_eq!(fine.phase, Phase::Finetune);
        assert_eq!(fine.head_seed, Some(99));
        let mut copied = 0;
        for (name, t) in fine.params.iter() {
            if HEAD_PARAMS.contains(&name.as_str()) {
                assert_eq!(t.shape()[0], 2, "{name}");
                continue;
            }
            let src = pre.params.get(name).unwrap();
            assert_eq!(t.shape(), src.shape());
            assert!(t.data().iter().zip(src.data()).all(|(a, b)| a.to_bits() == b.to_bits()), "{name}");
            copied += 1;
        }
        assert_eq!(copied + HEAD_PARAMS.len(), pre.params.len());
        assert_eq!(fine, transfer_weights(&pre, &ModelSpec::desk(v, 2), 99).unwrap());
    }
}

#[test]
fn transfer_rejects_mismatches() {
    let pre = Checkpoint::<f32>::init(&ModelSpec::desk(Variant::UnetConvLstm, 3), Phase::Pretrain, 7).unwrap();
    assert!(transfer_weights(&pre, &ModelSpec::desk(Variant::ScnnUnetAttention, 2), 1).is_err());
    assert!(transfer_weights(&pre, &ModelSpec::full(Variant::UnetConvLstm, 2), 1).is_err());
    let fine = transfer_weights(&pre, &ModelSpec::desk(Variant::UnetConvLstm, 2), 1).unwrap();
    assert!(transfer_weights(&fine, &ModelSpec::desk(Variant::UnetConvLstm, 2), 1).is_err());
}

#[test]
fn checkpoint_bytes_round_trip() {
    let ck = Checkpoint::<f32>::init(&ModelSpec::desk(Variant::ScnnUnetConvLstm, 2), Phase::Finetune, 3).unwrap();
    let bytes = ck.to_bytes().unwrap();
    assert_eq!(Checkpoint::<f32>::from_bytes(&bytes).unwrap(), ck);
    assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}
