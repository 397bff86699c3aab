use num_bigint::BigUint;
use proptest::prelude::*;

use svsp_core::token::AckToken;
use svsp_core::wire::{
    decode, encode, HaltReason, HelloStatus, Message, Packet, MAX_CHUNK_PAYLOAD, MAX_DATAGRAM,
    MAX_NACK_SEQS,
};

fn biguint(max_bytes: usize) -> impl Strategy<Value = BigUint> {
    prop::collection::vec(any::<u8>(), 0..=max_bytes).prop_map(|b| BigUint::from_bytes_be(&b))
}

fn message() -> impl Strategy<Value = Message> {
    prop_oneof![
        ("[a-z0-9/._-]{0,255}", biguint(64), biguint(128), biguint(4)).prop_map(
            |(content_name, dh_public, rsa_n, rsa_e)| {
                Message::Hello {
                    content_name,
                    dh_public,
                    rsa_n,
                    rsa_e,
                }
            }
        ),
        (biguint(64), any::<bool>()).prop_map(|(dh_public, ok)| Message::HelloReply {
            dh_public,
            status: if ok {
                HelloStatus::Ok
            } else {
                HelloStatus::NotFound
            },
        }),
        (1usize..=64, 0usize..=8, any::<u16>()).prop_flat_map(|(width, count, first_block)| {
            prop::collection::vec(prop::collection::vec(any::<u8>(), width), count).prop_map(
                move |blocks| Message::Metafile {
                    total_blocks: u16::MAX,
                    first_block: first_block.min(u16::MAX - blocks.len() as u16),
                    blocks,
                },
            )
        }),
        (
            any::<u32>(),
            prop::collection::vec(any::<u8>(), 0..=MAX_CHUNK_PAYLOAD),
            any::<u32>()
        )
            .prop_map(|(seq, payload, crc32)| Message::Chunk {
                seq,
                payload,
                crc32
            }),
        (any::<u32>(), any::<[u8; 16]>()).prop_map(|(window_index, value)| Message::AckToken(
            AckToken {
                window_index,
                value
            }
        )),
        prop::collection::vec(any::<u32>(), 0..=MAX_NACK_SEQS)
            .prop_map(|missing_seqs| Message::Nack { missing_seqs }),
        prop_oneof![
            Just(HaltReason::TokenTimeout),
            Just(HaltReason::TokenInvalid),
            Just(HaltReason::Replay),
            Just(HaltReason::Internal),
        ]
        .prop_map(|reason| Message::Halt { reason }),
        any::<[u8; 32]>().prop_map(|content_sha256| Message::Fin { content_sha256 }),
    ]
}

fn packet() -> impl Strategy<Value = Packet> {
    (any::<u64>(), message()).prop_map(|(session_id, message)| Packet {
        session_id,
        message,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip(p in packet()) {
        let bytes = encode(&p).unwrap();
        prop_assert!(bytes.len() <= MAX_DATAGRAM);
        prop_assert_eq!(decode(&bytes).unwrap(), p);
    }

    #[test]
    fn mutated_datagrams_never_panic(p in packet(), flips in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..8), cut in any::<prop::sample::Index>()) {
        let mut bytes = encode(&p).unwrap();
        for (at, x) in flips {
            let i = at.index(bytes.len());
            bytes[i] ^= x;
        }
        let keep = cut.index(bytes.len() + 1);
        // anything that still decodes must re-encode to the same bytes
        if let Ok(decoded) = decode(&bytes[..keep]) {
            prop_assert_eq!(encode(&decoded).unwrap(), bytes[..keep].to_vec());
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..=MAX_DATAGRAM + 8)) {
        let _ = decode(&bytes);
    }
}
