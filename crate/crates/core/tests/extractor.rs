use pdqrng::extractor::io::*;
use pdqrng::extractor::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn bits_strategy(max: usize) -> impl Strategy<Value = Vec<bool>> {
    prop::collection::vec(any::<bool>(), 0..max)
}

/// i.i.d. raw bits with `P(1) = (1 + eps)/2`, packed directly.
fn biased_raw(n: usize, eps: f64, seed: u64) -> BitStream {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let threshold = ((1.0 + eps) / 2.0 * 2f64.powi(64)) as u64;
    let mut words = Vec::with_capacity(n.div_ceil(64));
    for w in 0..n.div_ceil(64) {
        let take = (n - 64 * w).min(64);
        let mut acc = 0u64;
        for j in 0..take {
            acc |= ((rng.random::<u64>() < threshold) as u64) << j;
        }
        words.push(acc);
    }
    BitStream::from_words(words, n, StreamKind::Raw).unwrap()
}

#[test]
fn block_parity_bias_decays_as_power_of_epsilon() {
    let eps = 0.05;
    let n = 1_000_000_000;
    let x = extract(&biased_raw(n, eps, 1), false).unwrap();
    for k in 1..=4usize {
        let d = block_parity(&distill(&x, k).unwrap());
        let m = d.len() as f64;
        // E[(−1)^D] over a block of k independent bits is (−ε)^k
        let measured = (m - 2.0 * d.count_ones() as f64) / m;
        let want = (-eps).powi(k as i32);
        let sigma = 1.0 / m.sqrt();
        assert!((measured - want).abs() < 3.0 * sigma, "k = {k}: {measured:e} vs {want:e} (σ = {sigma:e})");
    }
}

#[test]
fn distill_three_of_ten() {
    let x = BitStream::from_u8s(&[1, 0, 0, 1, 1, 1, 0, 0, 0, 1], StreamKind::Extracted);
    let z = distill(&x, 3).unwrap();
    assert_eq!(z.to_u8s(), vec![1, 1, 0]);
    assert_eq!(z.kind(), StreamKind::Distilled(3));
    assert!(distill(&x, 0).is_err());
}

proptest! {
    #[test]
    fn differentiate_inverts_extract(bits in bits_strategy(2000), x0 in any::<bool>()) {
        let raw = BitStream::from_bits(bits.iter().copied(), StreamKind::Raw);
        let x = extract(&raw, x0).unwrap();
        prop_assert_eq!(differentiate(&x, x0), raw);
    }

    #[test]
    fn extract_matches_scalar_loop(bits in bits_strategy(2000), x0 in any::<bool>()) {
        let raw = BitStream::from_bits(bits.iter().copied(), StreamKind::Raw);
        let mut state = x0;
        let want: Vec<bool> = bits.iter().map(|&d| { state ^= d; state }).collect();
        let got: Vec<bool> = extract(&raw, x0).unwrap().iter().collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn chunked_extract_is_bit_exact(bits in bits_strategy(5000), x0 in any::<bool>(), chunk in 1usize..20) {
        let raw = BitStream::from_bits(bits, StreamKind::Raw);
        prop_assert_eq!(extract_chunked(&raw, x0, chunk).unwrap(), extract(&raw, x0).unwrap());
    }

    #[test]
    fn word_packing_round_trips(bits in bits_strategy(1000)) {
        let s = BitStream::from_bits(bits.iter().copied(), StreamKind::Raw);
        let again = BitStream::from_words(s.clone().into_words(), s.len(), StreamKind::Raw).unwrap();
        prop_assert_eq!(&again, &s);
        prop_assert_eq!(s.iter().collect::<Vec<_>>(), bits);
    }

    #[test]
    fn bitfile_round_trips(bits in bits_strategy(1000), k in 1u32..100) {
        let s = BitStream::from_bits(bits, StreamKind::Distilled(k));
        let mut buf = Vec::new();
        write_bitstream(&s, &mut buf).unwrap();
        prop_assert_eq!(buf.len(), HEADER_LEN + 8 * s.len().div_ceil(64));
        prop_assert_eq!(read_bitstream(&buf[..]).unwrap(), s);
    }

    #[test]
    fn export_formats_round_trip(bits in bits_strategy(1000)) {
        let s = BitStream::from_bits(bits, StreamKind::Extracted);
        for format in [ExportFormat::Ascii01, ExportFormat::RawBytes] {
            let mut buf = Vec::new();
            export(&s, format, &mut buf).unwrap();
            let back = import(&buf[..], format, Some(s.len()), StreamKind::Extracted).unwrap();
            prop_assert_eq!(&back, &s);
        }
    }

    #[test]
    fn distilled_differences_are_raw_block_parities(bits in bits_strategy(3000), k in 1usize..12) {
        let raw = BitStream::from_bits(bits.iter().copied(), StreamKind::Raw);
        let z = distill(&extract(&raw, false).unwrap(), k).unwrap();
        prop_assert_eq!(z.len(), bits.len() / k);
        let d = block_parity(&z);
        for (i, got) in d.iter().enumerate() {
            // z_{i+1} ⊕ z_i covers raw bits ik+1 ..= (i+1)k
            let want = bits[i * k + 1..=(i + 1) * k].iter().fold(false, |a, &b| a ^ b);
            prop_assert_eq!(got, want);
        }
    }
}

#[test]
fn large_export_round_trip() {
    let s = biased_raw(1_000_000, 0.0, 9).with_kind(StreamKind::Extracted);
    for format in [ExportFormat::Ascii01, ExportFormat::RawBytes] {
        let mut buf = Vec::new();
        export(&s, format, &mut buf).unwrap();
        assert_eq!(import(&buf[..], format, Some(s.len()), StreamKind::Extracted).unwrap(), s);
    }
}
