use caps_ood::capfile::{decode_caps, encode_caps, load_caps, save_caps};
use caps_ood::checkpoint::{decode_model, encode_model, load_model, save_model};
use caps_ood::core::caps::CapTable;
use caps_ood::core::dataset::EmbeddingDataset;
use caps_ood::core::linalg::Matrix;
use caps_ood::core::rng::RngStream;
use caps_ood::core::sae::{InputNormalizer, SaeModel};
use caps_ood::emb1::{
    decode_embeddings, encode_embeddings, read_embeddings, write_embeddings, HEADER_LEN,
};
use caps_ood::Error;
use proptest::prelude::*;

fn dataset() -> impl Strategy<Value = EmbeddingDataset> {
    (
        1usize..=64,
        1usize..=32,
        any::<bool>(),
        any::<bool>(),
        1i32..10,
    )
        .prop_flat_map(|(n, d, t, p, c)| {
            (
                prop::collection::vec(-1e6f32..1e6, n * d),
                prop::collection::vec(0..c, n),
                prop::collection::vec(0..c, n),
            )
                .prop_map(move |(data, tl, pl)| {
                    EmbeddingDataset::new("x", n, d, data, t.then_some(tl), p.then_some(pl))
                        .unwrap()
                })
        })
}

fn model(seed: u64) -> (SaeModel, InputNormalizer) {
    let mut rng = RngStream::new(seed);
    let d_in = 1 + rng.below(10);
    let d_latent = 1 + rng.below(30);
    let k = 1 + rng.below(d_latent);
    let mut m = SaeModel::init(d_in, d_latent, k, &mut rng).unwrap();
    for p in m.parameters_mut() {
        for v in p.as_mut_slice() {
            *v += f64::from((rng.uniform() - 0.5) as f32);
        }
    }
    m.round_to_f32();
    let mean = (0..d_in)
        .map(|_| f64::from((rng.uniform() * 4.0 - 2.0) as f32))
        .collect();
    let scale = f64::from((0.1 + rng.uniform()) as f32);
    (m, InputNormalizer { mean, scale })
}

fn table(seed: u64) -> CapTable {
    let mut rng = RngStream::new(seed);
    let c = 1 + rng.below(8);
    let d = 1 + rng.below(50);
    let values = (0..c * d)
        .map(|_| {
            if rng.uniform() < 0.3 {
                0.0
            } else {
                f64::from(rng.uniform() as f32)
            }
        })
        .collect();
    let counts = (0..c).map(|_| rng.below(1000) as u64 + 1).collect();
    let q = f64::from((0.01 + 0.99 * rng.uniform()) as f32);
    CapTable::from_parts(Matrix::from_vec(c, d, values).unwrap(), counts, q).unwrap()
}

proptest! {
    #[test]
    fn emb1_roundtrip(ds in dataset()) {
        let bytes = encode_embeddings(&ds);
        prop_assert_eq!(bytes.len(), HEADER_LEN + 4 * ds.len() * (ds.dim() + usize::from(ds.true_labels().is_some()) + usize::from(ds.pred_labels().is_some())));
        let back = decode_embeddings(&bytes, "x").unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(encode_embeddings(&back), bytes);
    }

    #[test]
    fn sae1_roundtrip(seed in any::<u64>()) {
        let (m, nz) = model(seed);
        let bytes = encode_model(&m, &nz).unwrap();
        let (m2, nz2) = decode_model(&bytes).unwrap();
        prop_assert_eq!(&m2, &m);
        prop_assert_eq!(&nz2, &nz);
        prop_assert_eq!(encode_model(&m2, &nz2).unwrap(), bytes);
    }

    #[test]
    fn cap1_roundtrip(seed in any::<u64>()) {
        let t = table(seed);
        let bytes = encode_caps(&t).unwrap();
        let back = decode_caps(&bytes).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(encode_caps(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_is_always_detected(seed in any::<u64>(), cut in 0.0f64..1.0) {
        let t = table(seed);
        let bytes = encode_caps(&t).unwrap();
        let keep = (cut * bytes.len() as f64) as usize;
        prop_assert!(decode_caps(&bytes[..keep]).is_err());
    }
}

#[test]
fn files_roundtrip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = EmbeddingDataset::new(
        "x",
        2,
        3,
        vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        Some(vec![0, 1]),
        None,
    )
    .unwrap();
    let path = dir.path().join("train.emb1");
    write_embeddings(&ds, &path).unwrap();
    let back = read_embeddings(&path).unwrap();
    assert_eq!(back.name, "train");
    assert_eq!(back.data(), ds.data());

    let (m, nz) = model(1);
    save_model(&m, &nz, dir.path().join("m.sae1")).unwrap();
    assert_eq!(load_model(dir.path().join("m.sae1")).unwrap(), (m, nz));

    let t = table(2);
    save_caps(&t, dir.path().join("c.cap1")).unwrap();
    assert_eq!(load_caps(dir.path().join("c.cap1")).unwrap(), t);

    assert!(matches!(
        read_embeddings(dir.path().join("missing.emb1")),
        Err(Error::Io { .. })
    ));
    assert!(matches!(
        load_caps(dir.path().join("m.sae1")),
        Err(Error::BadMagic { .. })
    ));
}

#[test]
fn exit_codes_by_error_kind() {
    use caps_ood::core::Error as Core;
    assert_eq!(Error::Usage("x".into()).exit_code(), 1);
    assert_eq!(Error::Core(Core::InvalidConfig("x")).exit_code(), 1);
    assert_eq!(Error::MissingIdTrain.exit_code(), 2);
    assert_eq!(
        Error::TruncatedFile {
            expected: 9,
            actual: 1
        }
        .exit_code(),
        2
    );
    let nan = Core::NonFiniteLoss {
        epoch: 0,
        step: 0,
        recon: f64::NAN,
        aux: 0.0,
    };
    assert_eq!(Error::Core(nan).exit_code(), 3);
}
