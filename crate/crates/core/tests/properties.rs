mod support;

use proptest::prelude::*;
use relaysim::actguard::{contact_hash, GeoCell, TimeBucket};
use relaysim::gaen::{
    decrypt_aem, derive_aemk, derive_rpi, derive_rpik, encrypt_aem, generate_tek, Aem, Aemk, DeviceSeed,
    RotationSchedule, Rpi,
};
use relaysim::radio::{
    decode_advertisement, encode_advertisement, AdvertisementPacket, Decoded, RadioConfig, SimClock, Transmission,
    World, PACKET_LEN,
};
use relaysim::Position;

// Cross-checked against an independent HKDF/HMAC/SHA-256 implementation.
#[test]
fn key_schedule_vectors() {
    let tek = generate_tek(&DeviceSeed::derive(2021, 0), 0);
    assert_eq!(hex::encode(tek.bytes), "dcdeab2bd6dfc51f4aaca3d5a2f81dd5");
    let rpik = derive_rpik(&tek);
    let aemk = derive_aemk(&tek);
    assert_eq!(rpik.to_hex(), "3166d77364f35b5c6c0327537285d249");
    assert_eq!(aemk.to_hex(), "9ea9d44cdcf834f364a0d1a2f49dfbad");

    let s = RotationSchedule::default();
    let rpi0 = derive_rpi(&rpik, 0, &s).unwrap();
    let rpi11 = derive_rpi(&rpik, 11, &s).unwrap();
    assert_eq!(rpi0.to_hex(), "ff9a17699ea4ac2e65d11245c235658b");
    assert_eq!(rpi11.to_hex(), "1693f190d3ff44c20cffdfbbd2e74723");

    let aem = encrypt_aem(&aemk, &rpi0, -12);
    assert_eq!(aem.to_hex(), "efc0784a");
    assert_eq!(
        hex::encode(AdvertisementPacket::new(rpi0, aem).to_bytes()),
        "6ffdff9a17699ea4ac2e65d11245c235658befc0784a"
    );
    let h = contact_hash(&rpi0, &rpi11, GeoCell { lat: 45_464, lon: 9_189 }, TimeBucket(48)).unwrap();
    assert_eq!(h.to_hex(), "a636dc197ce9ea11073d94d9d83a7f2de68e7b9b63c462f3ba3667c701116545");
}

#[test]
fn haversine_agrees_with_oracle() {
    let pts = [
        (45.46405, 9.18905, 45.47805, 9.22705),
        (0.0, 0.0, 0.0, 1.0),
        (-33.9, 151.2, 51.5, -0.12),
        (10.0, 10.0, 10.0, 10.0),
    ];
    for (a, b, c, d) in pts {
        let (p, q) = (Position::new(a, b), Position::new(c, d));
        let got = p.distance_m(&q);
        let want = support::oracle_distance_m(&p, &q);
        assert!((got - want).abs() <= 1e-6 * want.max(1.0), "{got} vs {want}");
    }
}

fn arb_rpi() -> impl Strategy<Value = Rpi> {
    any::<[u8; 16]>().prop_map(Rpi)
}

proptest! {
    #[test]
    fn aem_round_trips(key in any::<[u8; 16]>(), rpi in arb_rpi(), tx in -127i8..=127) {
        let aemk = Aemk(key);
        prop_assert_eq!(decrypt_aem(&aemk, &rpi, &encrypt_aem(&aemk, &rpi, tx)), tx);
    }

    #[test]
    fn packet_codec_is_a_bijection(rpi in arb_rpi(), aem in any::<[u8; 4]>()) {
        let bytes = encode_advertisement(&rpi.0, &aem).unwrap();
        prop_assert_eq!(bytes.len(), PACKET_LEN);
        prop_assert_eq!(decode_advertisement(&bytes), Decoded::Protocol { rpi, aem: Aem(aem) });
    }

    #[test]
    fn foreign_packets_are_not_protocol(bytes in proptest::collection::vec(any::<u8>(), 0..40)) {
        let ours = bytes.len() == PACKET_LEN && bytes[..2] == [0x6f, 0xfd];
        prop_assume!(!ours);
        prop_assert_eq!(decode_advertisement(&bytes), Decoded::NotProtocolPacket);
    }

    #[test]
    fn contact_hash_is_symmetric(a in arb_rpi(), b in arb_rpi(), lat in any::<i64>(), lon in any::<i64>(), t in any::<i64>()) {
        prop_assume!(a != b);
        let cell = GeoCell { lat, lon };
        prop_assert_eq!(
            contact_hash(&a, &b, cell, TimeBucket(t)).unwrap(),
            contact_hash(&b, &a, cell, TimeBucket(t)).unwrap()
        );
    }

    /// Nodes out of range hear nothing; nodes in range hear the exact bytes.
    #[test]
    fn broadcast_respects_range(offsets in proptest::collection::vec((-30.0f64..30.0, -30.0f64..30.0), 2..6)) {
        let origin = Position::new(45.0, 9.0);
        let positions: Vec<_> = offsets.iter().map(|&(n, e)| origin.offset_m(n, e)).collect();
        let world = World { clock: SimClock::new(0, 10).unwrap(), radio: RadioConfig::default(), positions: positions.clone() };
        let txs: Vec<_> = positions
            .iter()
            .enumerate()
            .map(|(i, &p)| Transmission { sender: i, position: p, tx_power_dbm: 0, payload: vec![i as u8; PACKET_LEN] })
            .collect();
        let deliveries = world.broadcast_step(&txs);
        for d in &deliveries {
            prop_assert!(d.sender != d.receiver);
            prop_assert_eq!(&d.payload, &txs[d.sender].payload);
            prop_assert!(support::oracle_distance_m(&positions[d.sender], &positions[d.receiver]) <= 10.0 + 1e-9);
        }
        for s in 0..positions.len() {
            for r in 0..positions.len() {
                let close = s != r && support::oracle_distance_m(&positions[s], &positions[r]) <= 10.0 - 1e-6;
                if close {
                    prop_assert!(deliveries.iter().any(|d| d.sender == s && d.receiver == r));
                }
            }
        }
    }
}
