use mfcd::settings::Settings;
use mfcd::{checkpoint, clip, stream, video};
use mfcd_core::codec::{encode, CodecParams, Frame, RawVideo};
use mfcd_core::model::NamedTensor;
use mfcd_core::tensor::Tensor;
use mfcd_core::xform::{assemble_clip_decoded, ClipFormat};
use proptest::prelude::*;

fn raw_video() -> impl Strategy<Value = (RawVideo, CodecParams)> {
    (
        prop::sample::select(vec![4usize, 8]),
        1usize..=2,
        1usize..=2,
        prop::sample::select(vec![1usize, 3]),
        1usize..=9,
        1usize..=5,
        0usize..=3,
    )
        .prop_flat_map(|(block, by, bx, c, frames, gop_size, search)| {
            let (h, w) = (block * by, block * bx);
            prop::collection::vec(prop::collection::vec(any::<u8>(), h * w * c), frames).prop_map(move |px| {
                let frames = px.into_iter().map(|p| Frame::new(h, w, c, p).unwrap()).collect();
                (
                    RawVideo::new(frames).unwrap(),
                    CodecParams {
                        block,
                        search,
                        gop_size,
                    },
                )
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn stream_bytes_round_trip((v, params) in raw_video()) {
        let s = encode(&v, params).unwrap();
        let bytes = stream::to_bytes(&s).unwrap();
        prop_assert_eq!(&stream::from_bytes(&bytes).unwrap(), &s);
        // Every strict prefix is rejected rather than misread.
        for cut in [0, bytes.len() / 3, bytes.len() - 1] {
            prop_assert!(stream::from_bytes(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn video_bytes_round_trip((v, _) in raw_video()) {
        let bytes = video::to_bytes(&v).unwrap();
        prop_assert_eq!(bytes.len(), video::HEADER_LEN + v.len() * v.height() * v.width() * v.channels());
        prop_assert_eq!(video::from_bytes(&bytes).unwrap(), v);
    }

    #[test]
    fn clip_bytes_keep_f32_values((v, params) in raw_video(), tag in 0u8..4) {
        let s = encode(&v, params).unwrap();
        let format = ClipFormat::from_tag(tag).unwrap();
        let gop = &s.gops[0];
        prop_assume!(format != ClipFormat::ResOnly || gop.len() > 1);
        let c = assemble_clip_decoded(gop, format).unwrap();
        let back = clip::from_bytes(&clip::to_bytes(&c).unwrap()).unwrap();
        prop_assert_eq!(back.shape(), c.shape());
        prop_assert_eq!(back.format(), format);
        for (a, b) in back.data().iter().zip(c.data()) {
            prop_assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn checkpoint_bits_round_trip(
        tensors in prop::collection::vec(
            ("[a-z_.0-9]{0,12}", prop::collection::vec(1usize..=4, 0..=3))
                .prop_flat_map(|(name, shape)| {
                    let n = shape.iter().product::<usize>();
                    (Just(name), Just(shape), prop::collection::vec(any::<u32>(), n))
                }),
            0..5,
        )
    ) {
        let named: Vec<NamedTensor<f32>> = tensors
            .into_iter()
            .map(|(name, shape, bits)| NamedTensor {
                name,
                value: Tensor::new(shape, bits.into_iter().map(f32::from_bits).collect()).unwrap(),
            })
            .collect();
        let bytes = checkpoint::to_bytes(&named).unwrap();
        let back = checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.len(), named.len());
        for (a, b) in back.iter().zip(&named) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert_eq!(a.value.shape(), b.value.shape());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.value), bits(&b.value));
        }
        prop_assert_eq!(checkpoint::to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn parsers_never_panic_on_garbage(bytes in prop::collection::vec(any::<u8>(), 0..256), magic in 0usize..5) {
        let mut buf = match magic {
            0 => b"MFCS\x01\x00".to_vec(),
            1 => b"MFRV\x01\x00".to_vec(),
            2 => b"MFCT\x01\x00".to_vec(),
            3 => b"MFCDW\x01\x00".to_vec(),
            _ => Vec::new(),
        };
        buf.extend(bytes);
        let _ = stream::from_bytes(&buf);
        let _ = video::from_bytes(&buf);
        let _ = clip::from_bytes(&buf);
        let _ = checkpoint::from_bytes(&buf);
    }

    #[test]
    fn parse_errors_point_inside_the_input(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let mut buf = b"MFCS\x01\x00".to_vec();
        buf.extend(bytes);
        if let Err(e) = stream::from_bytes(&buf) {
            prop_assert!(e.offset <= buf.len());
        }
    }

    #[test]
    fn rendered_settings_parse_back(
        seed in any::<u64>(),
        lr in 1e-5f64..1.0,
        tau in 0.1f64..20.0,
        epochs in 1usize..100,
        widths in prop::collection::vec(1usize..=8, 1..=3),
        hints in any::<bool>(),
        noise in any::<u8>(),
    ) {
        let mut s = Settings { seed, ..Settings::default() };
        s.train.lr = lr;
        s.train.tau = tau;
        s.train.epochs = epochs;
        s.model.stage_widths = widths.iter().map(|w| 4 * w).collect();
        s.train.hint_layers = hints.then(|| (0..widths.len()).rev().collect());
        s.noise_amplitude = noise;
        prop_assume!(s.validate().is_ok());
        prop_assert_eq!(Settings::parse(&s.render()).unwrap(), s);
    }
}
