//! Wire frame: fixed 22-byte little-endian header followed by the payload.
//!
//! ```text
//! offset size field
//!      0    4 magic "TMF1"
//!      4    1 version (1)
//!      5    2 origin node
//!      7    8 tag
//!     15    2 channel
//!     17    1 etype
//!     18    4 payload_len
//!     22    n payload
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"TMF1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 22;
pub const DEFAULT_MAX_FRAME: usize = 64 << 20;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub origin: u16,
    pub tag: u64,
    pub channel: u16,
    pub etype: u8,
    pub payload: Vec<u8>,
}

/// Receive-side matching key: sender, tag and channel.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MatchKey {
    pub origin: u16,
    pub tag: u64,
    pub channel: u16,
}

impl MatchKey {
    pub fn new(origin: u16, tag: u64, channel: u16) -> Self {
        MatchKey { origin, tag, channel }
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported frame version {0}")]
    BadVersion(u8),
    #[error("frame of {0} bytes exceeds limit of {1}")]
    TooLarge(usize, usize),
    #[error("truncated frame: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Frame {
    pub fn key(&self) -> MatchKey {
        MatchKey { origin: self.origin, tag: self.tag, channel: self.channel }
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn header_bytes(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(&MAGIC);
        h[4] = VERSION;
        h[5..7].copy_from_slice(&self.origin.to_le_bytes());
        h[7..15].copy_from_slice(&self.tag.to_le_bytes());
        h[15..17].copy_from_slice(&self.channel.to_le_bytes());
        h[17] = self.etype;
        h[18..22].copy_from_slice(&(self.payload.len() as u32).to_le_bytes());
        h
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.header_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parse the header, returning the frame fields (empty payload) and the
    /// declared payload length.
    pub fn decode_header(h: &[u8; HEADER_LEN], max_frame: usize) -> Result<(Frame, usize), FrameError> {
        let magic: [u8; 4] = h[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(FrameError::BadMagic(magic));
        }
        if h[4] != VERSION {
            return Err(FrameError::BadVersion(h[4]));
        }
        let len = u32::from_le_bytes(h[18..22].try_into().unwrap()) as usize;
        if HEADER_LEN + len > max_frame {
            return Err(FrameError::TooLarge(HEADER_LEN + len, max_frame));
        }
        let frame = Frame {
            origin: u16::from_le_bytes(h[5..7].try_into().unwrap()),
            tag: u64::from_le_bytes(h[7..15].try_into().unwrap()),
            channel: u16::from_le_bytes(h[15..17].try_into().unwrap()),
            etype: h[17],
            payload: Vec::new(),
        };
        Ok((frame, len))
    }

    /// Decode one frame from the front of `buf`; returns it and the bytes consumed.
    pub fn decode(buf: &[u8], max_frame: usize) -> Result<(Frame, usize), FrameError> {
        if buf.len() < HEADER_LEN {
            return Err(FrameError::Truncated { need: HEADER_LEN, have: buf.len() });
        }
        let (mut frame, len) = Frame::decode_header(buf[..HEADER_LEN].try_into().unwrap(), max_frame)?;
        let total = HEADER_LEN + len;
        if buf.len() < total {
            return Err(FrameError::Truncated { need: total, have: buf.len() });
        }
        frame.payload = buf[HEADER_LEN..total].to_vec();
        Ok((frame, total))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.header_bytes())?;
        w.write_all(&self.payload)
    }

    /// Read one frame; `Ok(None)` on clean EOF before a header.
    pub fn read_from<R: Read>(r: &mut R, max_frame: usize) -> Result<Option<Frame>, FrameError> {
        let mut h = [0u8; HEADER_LEN];
        let mut got = 0;
        while got < HEADER_LEN {
            match r.read(&mut h[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(FrameError::Truncated { need: HEADER_LEN, have: got }),
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let (mut frame, len) = Frame::decode_header(&h, max_frame)?;
        frame.payload = vec![0u8; len];
        r.read_exact(&mut frame.payload)?;
        Ok(Some(frame))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let f = Frame { origin: 0x0102, tag: 0x1122334455667788, channel: 0x0a0b, etype: 6, payload: vec![0xee; 3] };
        let b = f.encode();
        assert_eq!(
            b,
            vec![
                b'T', b'M', b'F', b'1', 1, 0x02, 0x01, 0x88, 0x77, 0x66, 0x55, 0x44, 0x33, 0x22, 0x11, 0x0b, 0x0a, 6,
                3, 0, 0, 0, 0xee, 0xee, 0xee
            ]
        );
    }

    #[test]
    fn rejects_bad_input() {
        let mut b = Frame { origin: 1, tag: 2, channel: 3, etype: 4, payload: vec![1, 2] }.encode();
        assert!(matches!(Frame::decode(&b[..10], DEFAULT_MAX_FRAME), Err(FrameError::Truncated { .. })));
        assert!(matches!(Frame::decode(&b, 23), Err(FrameError::TooLarge(24, 23))));
        b[4] = 9;
        assert!(matches!(Frame::decode(&b, DEFAULT_MAX_FRAME), Err(FrameError::BadVersion(9))));
        b[0] = b'X';
        assert!(matches!(Frame::decode(&b, DEFAULT_MAX_FRAME), Err(FrameError::BadMagic(_))));
    }

    #[test]
    fn stream_read_handles_eof() {
        let f = Frame { origin: 1, tag: 2, channel: 3, etype: 4, payload: vec![9; 100] };
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        f.write_to(&mut buf).unwrap();
        let mut r = &buf[..];
        assert_eq!(Frame::read_from(&mut r, DEFAULT_MAX_FRAME).unwrap(), Some(f.clone()));
        assert_eq!(Frame::read_from(&mut r, DEFAULT_MAX_FRAME).unwrap(), Some(f));
        assert_eq!(Frame::read_from(&mut r, DEFAULT_MAX_FRAME).unwrap(), None);
    }

    proptest! {
        #[test]
        fn encode_decode_roundtrip(origin: u16, tag: u64, channel: u16, etype: u8,
                                   payload in proptest::collection::vec(any::<u8>(), 0..512)) {
            let f = Frame { origin, tag, channel, etype, payload };
            let bytes = f.encode();
            let (g, used) = Frame::decode(&bytes, DEFAULT_MAX_FRAME).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(g, f);
        }
    }
}
