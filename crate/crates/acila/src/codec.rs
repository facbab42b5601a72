//! Bit-exact encoding of the SACL ID option inside simulated IPv6 packets.
//!
//! Both SACL IDs travel in a single TLV option inside a Hop-by-Hop
//! extension header. The option type is `0x1E`: the top two bits are `00`,
//! so devices that do not understand the option skip it and keep parsing,
//! which is what keeps the format compatible with ordinary IPv6 gear.
//!
//! Wire layout with IDs attached (extension header is 24 octets, so
//! Hdr Ext Len = 2):
//!
//! ```text
//! [next hdr][2][0x1E][16][client id, 8B BE][server id, 8B BE][1][2][0][0]
//! ```
//!
//! The LID travels out-of-band of the TLV, encoded into the Hop Limit
//! field as `lid % 128 + 100`; the gateway reads it and resets the field
//! to the default. LIDs congruent mod 128 collide — callers that hand out
//! LIDs keep them below 128 if they care.

use std::net::Ipv6Addr;

use thiserror::Error;

use crate::model::{FiveTuple, ModelError, Proto, SaclId};

/// Hop-by-Hop option type carrying both SACL IDs. Top two bits 00 (skip).
pub const SACL_OPTION_TYPE: u8 = 0x1E;
/// Option data length: two 64-bit IDs.
pub const SACL_OPTION_DATA_LEN: u8 = 16;
/// Hop Limit value gateways restore after reading a LID.
pub const DEFAULT_HOP_LIMIT: u8 = 64;
/// Inclusive Hop Limit band that carries a LID.
pub const LID_BAND: std::ops::RangeInclusive<u8> = 100..=227;

const IPV6_HEADER_LEN: usize = 40;
const HBH_NEXT_HEADER: u8 = 0;
const HBH_TOTAL_LEN: usize = 24;
const OPT_PAD1: u8 = 0;
const OPT_PADN: u8 = 1;
const TRANSPORT_HEADER_LEN: usize = 4;
const PROTO_TCP: u8 = 6;
const PROTO_UDP: u8 = 17;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("packet truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("not an IPv6 packet (version {0})")]
    NotIpv6(u8),
    #[error("IPv6 payload length field {field} disagrees with actual {actual}")]
    PayloadLengthMismatch { field: usize, actual: usize },
    #[error("option length overruns the extension header")]
    OptionOverrun,
    #[error("SACL option has data length {0}, expected 16")]
    BadSaclOptionLength(u8),
    #[error("unknown option type {0:#04x} with discard action bits")]
    WouldDiscard(u8),
    #[error("unsupported next header {0}")]
    UnsupportedNextHeader(u8),
    #[error("exactly one SACL ID is zero; the option carries both or neither")]
    HalfAttachedIds,
    #[error("payload too large for an IPv6 payload length field")]
    PayloadTooLarge,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A simulated IPv6 packet, as the data plane sees it after parsing.
///
/// `client_sacl`/`server_sacl` are either both absent (zero) or both
/// present: the wire option carries the pair atomically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaclPacket {
    pub src_ip: Ipv6Addr,
    pub dst_ip: Ipv6Addr,
    pub hop_limit: u8,
    pub proto: Proto,
    pub src_port: u16,
    pub dst_port: u16,
    pub client_sacl: SaclId,
    pub server_sacl: SaclId,
    pub payload_len: u16,
}

impl SaclPacket {
    pub fn has_ids(&self) -> bool {
        self.client_sacl.is_present() && self.server_sacl.is_present()
    }

    pub fn id_pair(&self) -> (SaclId, SaclId) {
        (self.client_sacl, self.server_sacl)
    }

    /// Connection key of this packet as it flows.
    pub fn five_tuple(&self) -> Result<FiveTuple, ModelError> {
        FiveTuple::new(
            self.src_ip,
            self.dst_ip,
            self.src_port,
            self.dst_port,
            self.proto,
        )
    }

    /// Copy with both IDs cleared, as delivered to a workload.
    pub fn stripped(&self) -> SaclPacket {
        SaclPacket {
            client_sacl: SaclId::ABSENT,
            server_sacl: SaclId::ABSENT,
            ..self.clone()
        }
    }
}

/// Raw bytes of a full IPv6 packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireBytes(pub Vec<u8>);

impl WireBytes {
    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn proto_number(proto: Proto) -> u8 {
    match proto {
        Proto::Tcp => PROTO_TCP,
        Proto::Udp => PROTO_UDP,
    }
}

fn proto_from_number(n: u8) -> Result<Proto, CodecError> {
    match n {
        PROTO_TCP => Ok(Proto::Tcp),
        PROTO_UDP => Ok(Proto::Udp),
        other => Err(CodecError::UnsupportedNextHeader(other)),
    }
}

/// Encodes a packet; the payload region is filled with zero bytes.
///
/// With both IDs absent no extension header is emitted; with both present
/// the Hop-by-Hop header described in the module docs is inserted between
/// the IPv6 header and the transport header. One ID present without the
/// other is an invariant breach.
pub fn encode(p: &SaclPacket) -> Result<WireBytes, CodecError> {
    if p.client_sacl.is_present() != p.server_sacl.is_present() {
        return Err(CodecError::HalfAttachedIds);
    }
    let ext_len = if p.has_ids() { HBH_TOTAL_LEN } else { 0 };
    let payload_field = ext_len + TRANSPORT_HEADER_LEN + p.payload_len as usize;
    if payload_field > u16::MAX as usize {
        return Err(CodecError::PayloadTooLarge);
    }

    let mut out = Vec::with_capacity(IPV6_HEADER_LEN + payload_field);
    // Fixed IPv6 header: version 6, zero traffic class and flow label.
    out.extend_from_slice(&[0x60, 0, 0, 0]);
    out.extend_from_slice(&(payload_field as u16).to_be_bytes());
    out.push(if p.has_ids() {
        HBH_NEXT_HEADER
    } else {
        proto_number(p.proto)
    });
    out.push(p.hop_limit);
    out.extend_from_slice(&p.src_ip.octets());
    out.extend_from_slice(&p.dst_ip.octets());

    if p.has_ids() {
        out.push(proto_number(p.proto));
        out.push((HBH_TOTAL_LEN / 8 - 1) as u8);
        out.push(SACL_OPTION_TYPE);
        out.push(SACL_OPTION_DATA_LEN);
        out.extend_from_slice(&p.client_sacl.0.to_be_bytes());
        out.extend_from_slice(&p.server_sacl.0.to_be_bytes());
        // PadN to the 8-octet boundary.
        out.extend_from_slice(&[OPT_PADN, 2, 0, 0]);
    }

    out.extend_from_slice(&p.src_port.to_be_bytes());
    out.extend_from_slice(&p.dst_port.to_be_bytes());
    out.resize(out.len() + p.payload_len as usize, 0);
    Ok(WireBytes(out))
}

struct Parsed {
    packet: SaclPacket,
    // Byte range of the whole Hop-by-Hop header, when present.
    hbh_range: Option<std::ops::Range<usize>>,
}

fn parse(w: &WireBytes) -> Result<Parsed, CodecError> {
    let b = w.as_slice();
    if b.len() < IPV6_HEADER_LEN {
        return Err(CodecError::Truncated {
            need: IPV6_HEADER_LEN,
            have: b.len(),
        });
    }
    let version = b[0] >> 4;
    if version != 6 {
        return Err(CodecError::NotIpv6(version));
    }
    let payload_field = u16::from_be_bytes([b[4], b[5]]) as usize;
    let actual = b.len() - IPV6_HEADER_LEN;
    if payload_field != actual {
        return Err(CodecError::PayloadLengthMismatch {
            field: payload_field,
            actual,
        });
    }
    let mut next_header = b[6];
    let hop_limit = b[7];
    let src_ip = Ipv6Addr::from(<[u8; 16]>::try_from(&b[8..24]).unwrap());
    let dst_ip = Ipv6Addr::from(<[u8; 16]>::try_from(&b[24..40]).unwrap());

    let mut offset = IPV6_HEADER_LEN;
    let mut client_sacl = SaclId::ABSENT;
    let mut server_sacl = SaclId::ABSENT;
    let mut hbh_range = None;

    if next_header == HBH_NEXT_HEADER {
        if b.len() < offset + 2 {
            return Err(CodecError::Truncated {
                need: offset + 2,
                have: b.len(),
            });
        }
        let hbh_len = (b[offset + 1] as usize + 1) * 8;
        if b.len() < offset + hbh_len {
            return Err(CodecError::Truncated {
                need: offset + hbh_len,
                have: b.len(),
            });
        }
        next_header = b[offset];
        let opts_end = offset + hbh_len;
        let mut cursor = offset + 2;
        let mut sacl_seen = false;
        while cursor < opts_end {
            let opt_type = b[cursor];
            if opt_type == OPT_PAD1 {
                cursor += 1;
                continue;
            }
            if cursor + 2 > opts_end {
                return Err(CodecError::OptionOverrun);
            }
            let opt_len = b[cursor + 1] as usize;
            let data_start = cursor + 2;
            if data_start + opt_len > opts_end {
                return Err(CodecError::OptionOverrun);
            }
            match opt_type {
                OPT_PADN => {}
                SACL_OPTION_TYPE if !sacl_seen => {
                    if opt_len != SACL_OPTION_DATA_LEN as usize {
                        return Err(CodecError::BadSaclOptionLength(opt_len as u8));
                    }
                    let data = &b[data_start..data_start + opt_len];
                    client_sacl = SaclId(u64::from_be_bytes(data[0..8].try_into().unwrap()));
                    server_sacl = SaclId(u64::from_be_bytes(data[8..16].try_into().unwrap()));
                    sacl_seen = true;
                }
                other => {
                    // Action bits (top two) decide the fate of unknown
                    // options: 00 skips, anything else discards.
                    if other >> 6 != 0 {
                        return Err(CodecError::WouldDiscard(other));
                    }
                }
            }
            cursor = data_start + opt_len;
        }
        hbh_range = Some(offset..opts_end);
        offset = opts_end;
    }

    let proto = proto_from_number(next_header)?;
    if b.len() < offset + TRANSPORT_HEADER_LEN {
        return Err(CodecError::Truncated {
            need: offset + TRANSPORT_HEADER_LEN,
            have: b.len(),
        });
    }
    let src_port = u16::from_be_bytes([b[offset], b[offset + 1]]);
    let dst_port = u16::from_be_bytes([b[offset + 2], b[offset + 3]]);
    let payload_len = (b.len() - offset - TRANSPORT_HEADER_LEN) as u16;

    Ok(Parsed {
        packet: SaclPacket {
            src_ip,
            dst_ip,
            hop_limit,
            proto,
            src_port,
            dst_port,
            client_sacl,
            server_sacl,
            payload_len,
        },
        hbh_range,
    })
}

/// Parses a packet, extracting the SACL ID pair if the option is present.
///
/// Unknown options whose type has 00 action bits are skipped; other
/// unknown options surface as [`CodecError::WouldDiscard`]. A packet with
/// no Hop-by-Hop header decodes with both IDs zero.
pub fn decode(w: &WireBytes) -> Result<SaclPacket, CodecError> {
    parse(w).map(|p| p.packet)
}

/// Removes the SACL option, relinking headers and fixing lengths.
///
/// Packets without the option pass through byte-identical. The transport
/// header and payload bytes are preserved exactly.
pub fn strip(w: &WireBytes) -> Result<WireBytes, CodecError> {
    let parsed = parse(w)?;
    let Some(range) = parsed.hbh_range else {
        return Ok(w.clone());
    };
    // The extension header we emit carries only the SACL option plus
    // padding, so stripping the option means dropping the whole header
    // and relinking Next Header.
    let b = w.as_slice();
    let mut out = Vec::with_capacity(b.len() - range.len());
    out.extend_from_slice(&b[..range.start]);
    out.extend_from_slice(&b[range.end..]);
    out[6] = b[range.start]; // transport proto moves up into the IPv6 header
    let payload_field = out.len() - IPV6_HEADER_LEN;
    out[4..6].copy_from_slice(&(payload_field as u16).to_be_bytes());
    Ok(WireBytes(out))
}

/// Encodes a LID into the Hop Limit field: `lid % 128 + 100`.
pub fn mark_lid(lid: u32) -> u8 {
    (lid % 128 + 100) as u8
}

/// Recovers a LID from the Hop Limit field, if the value sits in the LID
/// band. The caller resets the field to [`DEFAULT_HOP_LIMIT`].
pub fn read_lid(hop_limit: u8) -> Option<u32> {
    if LID_BAND.contains(&hop_limit) {
        Some(u32::from(hop_limit) - 100)
    } else {
        None
    }
}
