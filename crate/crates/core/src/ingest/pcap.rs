//! Payload extraction from classic (non-ng) PCAP captures.
//!
//! Ethernet II / IPv4 / {TCP, UDP} only. One sample per packet that carries
//! a non-empty transport payload; no reassembly.

use super::{IngestError, Label, PayloadSample};

const MAGIC_USEC: u32 = 0xa1b2_c3d4;
const MAGIC_NSEC: u32 = 0xa1b2_3c4d;
const LINKTYPE_ETHERNET: u32 = 1;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;
const ETHERTYPE_IPV4: u16 = 0x0800;
const ETH_HEADER_LEN: usize = 14;
const PROTO_TCP: u8 = 6;
const PROTO_UDP: u8 = 17;

/// Why packets did not produce a sample.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PcapSkips {
    pub empty_payload: usize,
    pub non_ipv4: usize,
    pub unsupported_link: usize,
    pub unsupported_transport: usize,
    /// Headers cut short by the snap length, non-first IP fragments, or
    /// inconsistent length fields.
    pub malformed: usize,
}

impl PcapSkips {
    pub fn total(&self) -> usize {
        self.empty_payload + self.non_ipv4 + self.unsupported_link + self.unsupported_transport + self.malformed
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcapExtraction {
    pub samples: Vec<PayloadSample>,
    pub skipped: PcapSkips,
    pub packets: usize,
}

enum Skip {
    Empty,
    NonIpv4,
    Transport,
    Malformed,
}

/// Extracts transport payloads, labelling every sample `default_label`.
pub fn extract_pcap_payloads(raw: &[u8], default_label: Label, source: &str) -> Result<PcapExtraction, IngestError> {
    if raw.len() < 4 {
        return Err(IngestError::TruncatedHeader(raw.len()));
    }
    let magic_le = u32::from_le_bytes(raw[..4].try_into().unwrap());
    let little = match magic_le {
        MAGIC_USEC | MAGIC_NSEC => true,
        m if m.swap_bytes() == MAGIC_USEC || m.swap_bytes() == MAGIC_NSEC => false,
        m => return Err(IngestError::BadMagic(m)),
    };
    if raw.len() < GLOBAL_HEADER_LEN {
        return Err(IngestError::TruncatedHeader(raw.len()));
    }
    let rd32 = |b: &[u8]| -> u32 {
        let a: [u8; 4] = b[..4].try_into().unwrap();
        if little {
            u32::from_le_bytes(a)
        } else {
            u32::from_be_bytes(a)
        }
    };
    let linktype = rd32(&raw[20..24]);

    let mut out = PcapExtraction {
        samples: Vec::new(),
        skipped: PcapSkips::default(),
        packets: 0,
    };
    let mut pos = GLOBAL_HEADER_LEN;
    let mut index = 0;
    while pos < raw.len() {
        if raw.len() - pos < RECORD_HEADER_LEN {
            return Err(IngestError::TruncatedRecord { index, offset: pos });
        }
        let incl_len = rd32(&raw[pos + 8..pos + 12]) as usize;
        let data_start = pos + RECORD_HEADER_LEN;
        if raw.len() - data_start < incl_len {
            return Err(IngestError::TruncatedRecord { index, offset: pos });
        }
        let frame = &raw[data_start..data_start + incl_len];
        out.packets += 1;
        if linktype != LINKTYPE_ETHERNET {
            out.skipped.unsupported_link += 1;
        } else {
            match ethernet_payload(frame) {
                Ok(p) => out.samples.push(PayloadSample::new(
                    out.samples.len() as u64,
                    p.to_vec(),
                    default_label,
                    source,
                )),
                Err(Skip::Empty) => out.skipped.empty_payload += 1,
                Err(Skip::NonIpv4) => out.skipped.non_ipv4 += 1,
                Err(Skip::Transport) => out.skipped.unsupported_transport += 1,
                Err(Skip::Malformed) => out.skipped.malformed += 1,
            }
        }
        pos = data_start + incl_len;
        index += 1;
    }
    Ok(out)
}

fn ethernet_payload(frame: &[u8]) -> Result<&[u8], Skip> {
    if frame.len() < ETH_HEADER_LEN {
        return Err(Skip::Malformed);
    }
    let ethertype = u16::from_be_bytes([frame[12], frame[13]]);
    if ethertype != ETHERTYPE_IPV4 {
        return Err(Skip::NonIpv4);
    }
    ipv4_payload(&frame[ETH_HEADER_LEN..])
}

fn ipv4_payload(ip: &[u8]) -> Result<&[u8], Skip> {
    if ip.len() < 20 {
        return Err(Skip::Malformed);
    }
    if ip[0] >> 4 != 4 {
        return Err(Skip::NonIpv4);
    }
    let ihl = (ip[0] & 0x0f) as usize * 4;
    let total = u16::from_be_bytes([ip[2], ip[3]]) as usize;
    let frag_offset = u16::from_be_bytes([ip[6], ip[7]]) & 0x1fff;
    if ihl < 20 || total < ihl || ip.len() < ihl {
        return Err(Skip::Malformed);
    }
    if frag_offset != 0 {
        return Err(Skip::Malformed);
    }
    // Ethernet may pad short frames; the snap length may cut long ones.
    let end = total.min(ip.len());
    let body = &ip[ihl..end];
    let payload = match ip[9] {
        PROTO_TCP => {
            if body.len() < 20 {
                return Err(Skip::Malformed);
            }
            let off = (body[12] >> 4) as usize * 4;
            if off < 20 || off > body.len() {
                return Err(Skip::Malformed);
            }
            &body[off..]
        }
        PROTO_UDP => {
            if body.len() < 8 {
                return Err(Skip::Malformed);
            }
            let udp_len = u16::from_be_bytes([body[4], body[5]]) as usize;
            if udp_len < 8 {
                return Err(Skip::Malformed);
            }
            &body[8..udp_len.min(body.len())]
        }
        _ => return Err(Skip::Transport),
    };
    if payload.is_empty() {
        return Err(Skip::Empty);
    }
    Ok(payload)
}

/// Minimal capture writer used by tests and examples to build fixtures.
#[doc(hidden)]
pub mod fixture {
    pub enum Transport<'a> {
        Tcp { flags: u8, payload: &'a [u8] },
        Udp { payload: &'a [u8] },
    }

    /// Ethernet + IPv4 + transport frame carrying `t`.
    pub fn frame(t: Transport<'_>) -> Vec<u8> {
        let (proto, l4) = match t {
            Transport::Tcp { flags, payload } => {
                let mut h = vec![0u8; 20];
                h[0..2].copy_from_slice(&40000u16.to_be_bytes());
                h[2..4].copy_from_slice(&80u16.to_be_bytes());
                h[12] = 5 << 4;
                h[13] = flags;
                h.extend_from_slice(payload);
                (6u8, h)
            }
            Transport::Udp { payload } => {
                let mut h = vec![0u8; 8];
                h[0..2].copy_from_slice(&5353u16.to_be_bytes());
                h[2..4].copy_from_slice(&53u16.to_be_bytes());
                h[4..6].copy_from_slice(&((8 + payload.len()) as u16).to_be_bytes());
                h.extend_from_slice(payload);
                (17u8, h)
            }
        };
        let mut ip = vec![0u8; 20];
        ip[0] = 0x45;
        ip[2..4].copy_from_slice(&((20 + l4.len()) as u16).to_be_bytes());
        ip[8] = 64;
        ip[9] = proto;
        ip[12..16].copy_from_slice(&[10, 0, 0, 1]);
        ip[16..20].copy_from_slice(&[10, 0, 0, 2]);
        ip.extend_from_slice(&l4);
        let mut f = vec![0u8; 12];
        f.extend_from_slice(&0x0800u16.to_be_bytes());
        f.extend_from_slice(&ip);
        f
    }

    /// Wraps frames into a classic capture in the requested byte order.
    pub fn capture(frames: &[Vec<u8>], big_endian: bool, linktype: u32) -> Vec<u8> {
        let w32 = |v: u32| if big_endian { v.to_be_bytes() } else { v.to_le_bytes() };
        let w16 = |v: u16| if big_endian { v.to_be_bytes() } else { v.to_le_bytes() };
        let mut out = Vec::new();
        out.extend_from_slice(&w32(0xa1b2_c3d4));
        out.extend_from_slice(&w16(2));
        out.extend_from_slice(&w16(4));
        out.extend_from_slice(&w32(0));
        out.extend_from_slice(&w32(0));
        out.extend_from_slice(&w32(65535));
        out.extend_from_slice(&w32(linktype));
        for (i, f) in frames.iter().enumerate() {
            out.extend_from_slice(&w32(i as u32));
            out.extend_from_slice(&w32(0));
            out.extend_from_slice(&w32(f.len() as u32));
            out.extend_from_slice(&w32(f.len() as u32));
            out.extend_from_slice(f);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::fixture::{capture, frame, Transport};
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tcp_packet_with_five_bytes() {
        let cap = capture(
            &[frame(Transport::Tcp {
                flags: 0x18,
                payload: b"hello",
            })],
            false,
            1,
        );
        let ex = extract_pcap_payloads(&cap, Label::Normal, "p").unwrap();
        assert_eq!(ex.samples.len(), 1);
        assert_eq!(ex.samples[0].payload, b"hello");
        assert_eq!(ex.skipped.total(), 0);
    }

    #[test]
    fn syn_without_payload_is_skipped() {
        let cap = capture(
            &[frame(Transport::Tcp {
                flags: 0x02,
                payload: b"",
            })],
            false,
            1,
        );
        let ex = extract_pcap_payloads(&cap, Label::Normal, "p").unwrap();
        assert!(ex.samples.is_empty());
        assert_eq!(ex.skipped.empty_payload, 1);
        assert_eq!(ex.skipped.total(), 1);
    }

    #[test]
    fn byte_swapped_capture_matches_native() {
        let frames = vec![
            frame(Transport::Tcp {
                flags: 0x18,
                payload: b"GET / HTTP/1.1",
            }),
            frame(Transport::Udp {
                payload: b"\x01\x02dns",
            }),
        ];
        let le = extract_pcap_payloads(&capture(&frames, false, 1), Label::Anomalous, "p").unwrap();
        let be = extract_pcap_payloads(&capture(&frames, true, 1), Label::Anomalous, "p").unwrap();
        assert_eq!(le, be);
        assert_eq!(le.samples[1].payload, b"\x01\x02dns");
        assert!(le.samples.iter().all(|s| s.label == Label::Anomalous));
    }

    #[test]
    fn skips_non_ipv4_and_other_links() {
        let mut arp = frame(Transport::Udp { payload: b"x" });
        arp[12..14].copy_from_slice(&0x0806u16.to_be_bytes());
        let ex = extract_pcap_payloads(&capture(&[arp], false, 1), Label::Normal, "p").unwrap();
        assert_eq!(ex.skipped.non_ipv4, 1);

        let f = frame(Transport::Udp { payload: b"x" });
        let ex = extract_pcap_payloads(&capture(&[f], false, 101), Label::Normal, "p").unwrap();
        assert_eq!(ex.skipped.unsupported_link, 1);
        assert!(ex.samples.is_empty());
    }

    #[test]
    fn ethernet_padding_is_not_payload() {
        let mut f = frame(Transport::Tcp {
            flags: 0x18,
            payload: b"ab",
        });
        f.extend_from_slice(&[0u8; 6]);
        let ex = extract_pcap_payloads(&capture(&[f], false, 1), Label::Normal, "p").unwrap();
        assert_eq!(ex.samples[0].payload, b"ab");
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(matches!(
            extract_pcap_payloads(&[0u8; 24], Label::Normal, "p"),
            Err(IngestError::BadMagic(0))
        ));
        let f = frame(Transport::Tcp {
            flags: 0x18,
            payload: b"abc",
        });
        let cap = capture(&[f.clone(), f], false, 1);
        let cut = &cap[..cap.len() - 2];
        match extract_pcap_payloads(cut, Label::Normal, "p") {
            Err(IngestError::TruncatedRecord { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn extracted_bytes_equal_constructed_payload(
            payloads in prop::collection::vec((any::<bool>(), prop::collection::vec(any::<u8>(), 1..300)), 1..8),
            big in any::<bool>(),
        ) {
            let frames: Vec<_> = payloads
                .iter()
                .map(|(tcp, p)| if *tcp {
                    frame(Transport::Tcp { flags: 0x18, payload: p })
                } else {
                    frame(Transport::Udp { payload: p })
                })
                .collect();
            let ex = extract_pcap_payloads(&capture(&frames, big, 1), Label::Normal, "p").unwrap();
            prop_assert_eq!(ex.samples.len(), payloads.len());
            for (s, (_, p)) in ex.samples.iter().zip(&payloads) {
                prop_assert_eq!(&s.payload, p);
            }
        }
    }
}
