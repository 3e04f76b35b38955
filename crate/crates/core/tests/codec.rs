use covor::comms::{account, BaselineCostModel, Codec, CodecError, Message, KEYFRAME_BYTES, RANGE_BYTES};
use covor::measurements::{AnchorRangeMsg, InterRangeMsg, KeyframeMsg};
use covor::sim3::{Matrix7, Sim3Pose, Twist7, Vector7};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_message(rng: &mut impl Rng) -> Message {
    let t = rng.random_range(0.0..1e4);
    match rng.random_range(0..3) {
        0 => {
            let xi = Vector7::from_fn(|_, _| rng.random_range(-0.5..0.5));
            let a = Matrix7::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let cov = a * a.transpose() + Matrix7::identity() * 1e-3;
            let cov = (cov + cov.transpose()) * 0.5;
            Message::KeyframeMsg(KeyframeMsg::new(rng.random(), t, Sim3Pose::exp(&Twist7(xi)), cov).unwrap())
        }
        1 => {
            let a: u16 = rng.random_range(0..1000);
            let b = a + rng.random_range(1..100);
            Message::InterRangeMsg(InterRangeMsg::new(a, b, t, rng.random_range(0.0..200.0), rng.random_range(1e-4..1.0)).unwrap())
        }
        _ => Message::AnchorRangeMsg(
            AnchorRangeMsg::new(rng.random(), rng.random(), t, rng.random_range(0.0..200.0), rng.random_range(1e-4..1.0)).unwrap(),
        ),
    }
}

fn assert_same(a: &Message, b: &Message) {
    match (a, b) {
        (Message::KeyframeMsg(x), Message::KeyframeMsg(y)) => {
            assert_eq!((x.agent_id, x.timestamp, x.covariance), (y.agent_id, y.timestamp, y.covariance));
            assert!((x.pose.to_matrix() - y.pose.to_matrix()).amax() < 1e-12);
        }
        _ => assert_eq!(a, b),
    }
}

#[test]
fn thousand_messages_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let msgs: Vec<Message> = (0..1000).map(|_| random_message(&mut rng)).collect();
    for codec in [Codec::default(), Codec::full_covariance()] {
        let bytes = codec.encode_stream(&msgs).unwrap();
        let back = codec.decode_stream(&bytes).unwrap();
        assert_eq!(back.len(), msgs.len());
        for (a, b) in msgs.iter().zip(&back) {
            assert_same(a, b);
            assert_eq!(codec.encode(a).unwrap().len(), codec.encoded_len(a));
        }
        // the decoded stream re-encodes to a stream that decodes to the same values
        let again = codec.decode_stream(&codec.encode_stream(&back).unwrap()).unwrap();
        for (a, b) in back.iter().zip(&again) {
            assert_same(a, b);
        }
    }
}

#[test]
fn range_frames_are_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let codec = Codec::default();
    for _ in 0..500 {
        let m = random_message(&mut rng);
        if matches!(m, Message::KeyframeMsg(_)) {
            continue;
        }
        let bytes = codec.encode(&m).unwrap();
        assert_eq!(bytes.len(), RANGE_BYTES);
        let back = codec.decode(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(codec.encode(&back).unwrap(), bytes);
    }
}

#[test]
fn every_truncation_is_malformed() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let codec = Codec::default();
    for _ in 0..20 {
        let bytes = codec.encode(&random_message(&mut rng)).unwrap();
        for cut in 0..bytes.len() {
            assert!(matches!(codec.decode(&bytes[..cut]), Err(CodecError::MalformedFrame(_))), "cut {cut}");
        }
    }
}

#[test]
fn accounting_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let msgs: Vec<Message> = (0..300).map(|_| random_message(&mut rng)).collect();
    let codec = Codec::default();
    let once = account(&msgs, &codec, &BaselineCostModel::default());
    let doubled: Vec<Message> = msgs.iter().chain(&msgs).cloned().collect();
    let twice = account(&doubled, &codec, &BaselineCostModel::default());
    assert_eq!(twice.covor_bytes, 2 * once.covor_bytes);
    let kf = msgs.iter().filter(|m| matches!(m, Message::KeyframeMsg(_))).count() as u64;
    assert_eq!(once.covor_bytes, KEYFRAME_BYTES as u64 * kf + RANGE_BYTES as u64 * (300 - kf));
}

#[test]
fn keyframes_only_cost_291_each() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let kfs: Vec<Message> = std::iter::repeat_with(|| random_message(&mut rng))
        .filter(|m| matches!(m, Message::KeyframeMsg(_)))
        .take(50)
        .collect();
    let rep = account(&kfs, &Codec::default(), &BaselineCostModel::default());
    assert_eq!(rep.covor_bytes, 291 * 50);
    assert_eq!(rep.series.len(), 51);
    for (k, row) in rep.series.iter().enumerate() {
        assert_eq!(row.covor_bytes, 291 * k as u64);
        assert_eq!(row.dslam, BaselineCostModel::default().dslam * k as f64);
    }
}

proptest! {
    #[test]
    fn fuzzed_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..600)) {
        let codec = Codec::default();
        match codec.decode_stream(&bytes) {
            Ok(msgs) => {
                for m in msgs {
                    prop_assert!(codec.encoded_len(&m) > 0);
                }
            }
            Err(CodecError::MalformedFrame(_)) | Err(CodecError::UnknownMsgType(_)) => {}
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }

    #[test]
    fn bit_flips_never_panic(seed in any::<u64>(), flip in 0usize..291, bit in 0u8..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codec = Codec::default();
        let mut bytes = codec.encode(&random_message(&mut rng)).unwrap();
        let i = flip % bytes.len();
        bytes[i] ^= 1 << bit;
        let _ = codec.decode(&bytes);
    }
}
