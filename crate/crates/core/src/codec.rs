//! Fixed-layout big-endian wire format for CAM payloads and the
//! single-hop broadcast frame that carries them.
//!
//! CAM payload (26 bytes):
//!
//! | offset | size | field                         | unit            |
//! |--------|------|-------------------------------|-----------------|
//! | 0      | 1    | protocol_version (= 2)        |                 |
//! | 1      | 1    | message_id (= 2, CAM)         |                 |
//! | 2      | 4    | station_id                    | u32             |
//! | 6      | 2    | generation_delta_time         | ms, epoch mod 2^16 |
//! | 8      | 4    | latitude                      | i32, 0.1 µdeg   |
//! | 12     | 4    | longitude                     | i32, 0.1 µdeg   |
//! | 16     | 4    | altitude                      | i32, cm         |
//! | 20     | 2    | speed                         | u16, 0.01 m/s   |
//! | 22     | 2    | heading                       | u16, 0.1 deg    |
//! | 24     | 1    | station_type                  | u8              |
//! | 25     | 1    | reserved (= 0)                |                 |
//!
//! Frame header (23 bytes) followed by `payload_len` payload bytes:
//!
//! | offset | size | field              |
//! |--------|------|--------------------|
//! | 0      | 2    | magic `0x4753`     |
//! | 2      | 1    | frame_type (1 = single-hop broadcast) |
//! | 3      | 4    | source_station_id  |
//! | 7      | 4    | source latitude (0.1 µdeg)  |
//! | 11     | 4    | source longitude (0.1 µdeg) |
//! | 15     | 4    | timestamp_ms (low 32 bits of epoch ms) |
//! | 19     | 2    | btp_dest_port      |
//! | 21     | 2    | payload_len        |

use thiserror::Error;

pub const CAM_LEN: usize = 26;
pub const FRAME_HEADER_LEN: usize = 23;
pub const CAM_PROTOCOL_VERSION: u8 = 2;
pub const CAM_MESSAGE_ID: u8 = 2;
pub const FRAME_MAGIC: u16 = 0x4753;
pub const FRAME_TYPE_SHB: u8 = 1;
pub const BTP_PORT_CAM: u16 = 2001;

pub const MAX_HEADING_TENTH_DEG: u16 = 3599;
pub const MAX_LATITUDE: i32 = 900_000_000;
pub const MAX_LONGITUDE: i32 = 1_800_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("truncated input: expected {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("wrong message type {0}, expected CAM ({CAM_MESSAGE_ID})")]
    WrongType(u8),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("field {field} out of range: {value}")]
    OutOfRange { field: &'static str, value: i64 },
    #[error("bad frame magic {0:#06x}")]
    BadMagic(u16),
    #[error("payload_len {declared} does not match {actual} remaining bytes")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("payload of {0} bytes does not fit a 16-bit length")]
    PayloadTooLong(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CamPayload {
    pub protocol_version: u8,
    pub message_id: u8,
    pub station_id: u32,
    pub generation_delta_time: u16,
    pub latitude_tenth_udeg: i32,
    pub longitude_tenth_udeg: i32,
    pub altitude_cm: i32,
    pub speed_cmps: u16,
    pub heading_tenth_deg: u16,
    pub station_type: u8,
}

impl Default for CamPayload {
    fn default() -> Self {
        Self {
            protocol_version: CAM_PROTOCOL_VERSION,
            message_id: CAM_MESSAGE_ID,
            station_id: 0,
            generation_delta_time: 0,
            latitude_tenth_udeg: 0,
            longitude_tenth_udeg: 0,
            altitude_cm: 0,
            speed_cmps: 0,
            heading_tenth_deg: 0,
            station_type: 0,
        }
    }
}

impl CamPayload {
    pub fn validate(&self) -> Result<(), CodecError> {
        if self.protocol_version != CAM_PROTOCOL_VERSION {
            return Err(CodecError::UnsupportedVersion(self.protocol_version));
        }
        if self.message_id != CAM_MESSAGE_ID {
            return Err(CodecError::WrongType(self.message_id));
        }
        if self.heading_tenth_deg > MAX_HEADING_TENTH_DEG {
            return Err(CodecError::OutOfRange {
                field: "heading_tenth_deg",
                value: self.heading_tenth_deg.into(),
            });
        }
        if !(-MAX_LATITUDE..=MAX_LATITUDE).contains(&self.latitude_tenth_udeg) {
            return Err(CodecError::OutOfRange {
                field: "latitude_tenth_udeg",
                value: self.latitude_tenth_udeg.into(),
            });
        }
        if !(-MAX_LONGITUDE..=MAX_LONGITUDE).contains(&self.longitude_tenth_udeg) {
            return Err(CodecError::OutOfRange {
                field: "longitude_tenth_udeg",
                value: self.longitude_tenth_udeg.into(),
            });
        }
        Ok(())
    }

    pub fn latitude_deg(&self) -> f64 {
        self.latitude_tenth_udeg as f64 * 1e-7
    }

    pub fn longitude_deg(&self) -> f64 {
        self.longitude_tenth_udeg as f64 * 1e-7
    }

    pub fn speed_mps(&self) -> f64 {
        self.speed_cmps as f64 * 0.01
    }

    pub fn heading_deg(&self) -> f64 {
        self.heading_tenth_deg as f64 * 0.1
    }
}

pub fn encode_cam(p: &CamPayload) -> Result<[u8; CAM_LEN], CodecError> {
    p.validate()?;
    let mut out = [0u8; CAM_LEN];
    out[0] = p.protocol_version;
    out[1] = p.message_id;
    out[2..6].copy_from_slice(&p.station_id.to_be_bytes());
    out[6..8].copy_from_slice(&p.generation_delta_time.to_be_bytes());
    out[8..12].copy_from_slice(&p.latitude_tenth_udeg.to_be_bytes());
    out[12..16].copy_from_slice(&p.longitude_tenth_udeg.to_be_bytes());
    out[16..20].copy_from_slice(&p.altitude_cm.to_be_bytes());
    out[20..22].copy_from_slice(&p.speed_cmps.to_be_bytes());
    out[22..24].copy_from_slice(&p.heading_tenth_deg.to_be_bytes());
    out[24] = p.station_type;
    Ok(out)
}

pub fn decode_cam(b: &[u8]) -> Result<CamPayload, CodecError> {
    if b.len() != CAM_LEN {
        return Err(CodecError::Truncated {
            expected: CAM_LEN,
            actual: b.len(),
        });
    }
    if b[1] != CAM_MESSAGE_ID {
        return Err(CodecError::WrongType(b[1]));
    }
    if b[25] != 0 {
        return Err(CodecError::OutOfRange {
            field: "reserved",
            value: b[25].into(),
        });
    }
    let p = CamPayload {
        protocol_version: b[0],
        message_id: b[1],
        station_id: u32::from_be_bytes([b[2], b[3], b[4], b[5]]),
        generation_delta_time: u16::from_be_bytes([b[6], b[7]]),
        latitude_tenth_udeg: i32::from_be_bytes([b[8], b[9], b[10], b[11]]),
        longitude_tenth_udeg: i32::from_be_bytes([b[12], b[13], b[14], b[15]]),
        altitude_cm: i32::from_be_bytes([b[16], b[17], b[18], b[19]]),
        speed_cmps: u16::from_be_bytes([b[20], b[21]]),
        heading_tenth_deg: u16::from_be_bytes([b[22], b[23]]),
        station_type: b[24],
    };
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub frame_type: u8,
    pub source_station_id: u32,
    pub source_lat_tenth_udeg: i32,
    pub source_lon_tenth_udeg: i32,
    pub timestamp_ms: u32,
    pub btp_dest_port: u16,
    pub payload: Vec<u8>,
}

impl Frame {
    /// Single-hop broadcast frame carrying an encoded CAM.
    pub fn cam(cam: &CamPayload, timestamp_ms: u64) -> Result<Frame, CodecError> {
        Ok(Frame {
            frame_type: FRAME_TYPE_SHB,
            source_station_id: cam.station_id,
            source_lat_tenth_udeg: cam.latitude_tenth_udeg,
            source_lon_tenth_udeg: cam.longitude_tenth_udeg,
            timestamp_ms: timestamp_ms as u32,
            btp_dest_port: BTP_PORT_CAM,
            payload: encode_cam(cam)?.to_vec(),
        })
    }
}

pub fn encode_frame(f: &Frame) -> Result<Vec<u8>, CodecError> {
    let len = u16::try_from(f.payload.len()).map_err(|_| CodecError::PayloadTooLong(f.payload.len()))?;
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + f.payload.len());
    out.extend_from_slice(&FRAME_MAGIC.to_be_bytes());
    out.push(f.frame_type);
    out.extend_from_slice(&f.source_station_id.to_be_bytes());
    out.extend_from_slice(&f.source_lat_tenth_udeg.to_be_bytes());
    out.extend_from_slice(&f.source_lon_tenth_udeg.to_be_bytes());
    out.extend_from_slice(&f.timestamp_ms.to_be_bytes());
    out.extend_from_slice(&f.btp_dest_port.to_be_bytes());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(&f.payload);
    Ok(out)
}

pub fn decode_frame(b: &[u8]) -> Result<Frame, CodecError> {
    if b.len() < FRAME_HEADER_LEN {
        return Err(CodecError::Truncated {
            expected: FRAME_HEADER_LEN,
            actual: b.len(),
        });
    }
    let magic = u16::from_be_bytes([b[0], b[1]]);
    if magic != FRAME_MAGIC {
        return Err(CodecError::BadMagic(magic));
    }
    let declared = u16::from_be_bytes([b[21], b[22]]) as usize;
    let rest = &b[FRAME_HEADER_LEN..];
    if declared > rest.len() {
        return Err(CodecError::Truncated {
            expected: FRAME_HEADER_LEN + declared,
            actual: b.len(),
        });
    }
    if declared < rest.len() {
        return Err(CodecError::LengthMismatch {
            declared,
            actual: rest.len(),
        });
    }
    Ok(Frame {
        frame_type: b[2],
        source_station_id: u32::from_be_bytes([b[3], b[4], b[5], b[6]]),
        source_lat_tenth_udeg: i32::from_be_bytes([b[7], b[8], b[9], b[10]]),
        source_lon_tenth_udeg: i32::from_be_bytes([b[11], b[12], b[13], b[14]]),
        timestamp_ms: u32::from_be_bytes([b[15], b[16], b[17], b[18]]),
        btp_dest_port: u16::from_be_bytes([b[19], b[20]]),
        payload: rest.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Hand-encoded from the layout table: 0x2A, 1000 = 0x03e8,
    // 446500000 = 0x1a9d0ca0, 109000000 = 0x067f3540, 1389 = 0x056d, 844 = 0x034c.
    const GOLDEN: [u8; CAM_LEN] = [
        0x02, 0x02, 0x00, 0x00, 0x00, 0x2a, 0x03, 0xe8, 0x1a, 0x9d, 0x0c, 0xa0, 0x06, 0x7f, 0x35,
        0x40, 0x00, 0x00, 0x00, 0x00, 0x05, 0x6d, 0x03, 0x4c, 0x05, 0x00,
    ];

    fn golden_payload() -> CamPayload {
        CamPayload {
            station_id: 0x2A,
            generation_delta_time: 1000,
            latitude_tenth_udeg: 446_500_000,
            longitude_tenth_udeg: 109_000_000,
            altitude_cm: 0,
            speed_cmps: 1389,
            heading_tenth_deg: 844,
            station_type: 5,
            ..CamPayload::default()
        }
    }

    #[test]
    fn golden_vector() {
        assert_eq!(encode_cam(&golden_payload()).unwrap(), GOLDEN);
        assert_eq!(decode_cam(&GOLDEN).unwrap(), golden_payload());
    }

    #[test]
    fn zero_payload_layout() {
        let b = encode_cam(&CamPayload::default()).unwrap();
        assert_eq!(&b[..2], &[2, 2]);
        assert!(b[2..].iter().all(|&x| x == 0));
    }

    #[test]
    fn decode_errors() {
        assert_eq!(
            decode_cam(&GOLDEN[..25]),
            Err(CodecError::Truncated { expected: 26, actual: 25 })
        );
        let mut wrong = GOLDEN;
        wrong[1] = 1;
        assert_eq!(decode_cam(&wrong), Err(CodecError::WrongType(1)));
        let mut heading = GOLDEN;
        heading[22..24].copy_from_slice(&3600u16.to_be_bytes());
        assert!(matches!(decode_cam(&heading), Err(CodecError::OutOfRange { .. })));
        let mut version = GOLDEN;
        version[0] = 3;
        assert_eq!(decode_cam(&version), Err(CodecError::UnsupportedVersion(3)));
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let p = CamPayload { latitude_tenth_udeg: 900_000_001, ..CamPayload::default() };
        assert!(encode_cam(&p).is_err());
        let p = CamPayload { longitude_tenth_udeg: -1_800_000_001, ..CamPayload::default() };
        assert!(encode_cam(&p).is_err());
        let p = CamPayload { message_id: 1, ..CamPayload::default() };
        assert_eq!(encode_cam(&p), Err(CodecError::WrongType(1)));
    }

    #[test]
    fn frame_errors() {
        let f = Frame::cam(&golden_payload(), 123_456).unwrap();
        let mut bytes = encode_frame(&f).unwrap();
        assert_eq!(bytes.len(), FRAME_HEADER_LEN + CAM_LEN);
        assert_eq!(decode_frame(&bytes).unwrap(), f);

        let mut bad = bytes.clone();
        bad[0] = 0;
        bad[1] = 0;
        assert_eq!(decode_frame(&bad), Err(CodecError::BadMagic(0)));

        bytes.pop();
        assert!(matches!(decode_frame(&bytes), Err(CodecError::Truncated { .. })));
        assert!(matches!(decode_frame(&bytes[..10]), Err(CodecError::Truncated { .. })));

        let mut long = encode_frame(&f).unwrap();
        long.push(0);
        assert!(matches!(decode_frame(&long), Err(CodecError::LengthMismatch { .. })));
    }

    pub(crate) fn arb_cam() -> impl Strategy<Value = CamPayload> {
        (
            any::<u32>(),
            any::<u16>(),
            -MAX_LATITUDE..=MAX_LATITUDE,
            -MAX_LONGITUDE..=MAX_LONGITUDE,
            any::<i32>(),
            any::<u16>(),
            0..=MAX_HEADING_TENTH_DEG,
            any::<u8>(),
        )
            .prop_map(|(id, gdt, lat, lon, alt, speed, heading, st)| CamPayload {
                station_id: id,
                generation_delta_time: gdt,
                latitude_tenth_udeg: lat,
                longitude_tenth_udeg: lon,
                altitude_cm: alt,
                speed_cmps: speed,
                heading_tenth_deg: heading,
                station_type: st,
                ..CamPayload::default()
            })
    }

    proptest! {
        #[test]
        fn cam_roundtrip(p in arb_cam()) {
            let bytes = encode_cam(&p).unwrap();
            prop_assert_eq!(bytes, encode_cam(&p).unwrap());
            prop_assert_eq!(decode_cam(&bytes).unwrap(), p);
        }

        #[test]
        fn frame_roundtrip(
            ft in any::<u8>(), id in any::<u32>(), lat in any::<i32>(), lon in any::<i32>(),
            ts in any::<u32>(), port in any::<u16>(), payload in proptest::collection::vec(any::<u8>(), 0..300)
        ) {
            let f = Frame {
                frame_type: ft, source_station_id: id, source_lat_tenth_udeg: lat,
                source_lon_tenth_udeg: lon, timestamp_ms: ts, btp_dest_port: port, payload,
            };
            prop_assert_eq!(decode_frame(&encode_frame(&f).unwrap()).unwrap(), f);
        }

        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_cam(&bytes);
            let _ = decode_frame(&bytes);
        }
    }
}
