use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::permutation::Permutation;
use crate::vector::DenseVector;

/// Largest accepted frame body (type byte plus payload).
pub const MAX_FRAME: usize = 64 << 20;

const HELLO: u8 = 0x01;
const GRAD: u8 = 0x02;
const AVG_GRAD: u8 = 0x03;
const PERM: u8 = 0x04;
const DONE: u8 = 0x05;

/// Wire messages between workers and the order server.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// First message on every connection. `config_hash` fingerprints the
    /// resolved experiment config so mismatched peers are refused.
    Hello {
        worker_id: u16,
        n: u32,
        d: u32,
        config_hash: u64,
    },
    Grad {
        epoch: u32,
        step: u32,
        worker_id: u16,
        payload: DenseVector,
    },
    AvgGrad {
        epoch: u32,
        step: u32,
        payload: DenseVector,
    },
    Perm {
        epoch: u32,
        worker_id: u16,
        perm: Permutation,
    },
    Done,
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "Hello",
            Message::Grad { .. } => "Grad",
            Message::AvgGrad { .. } => "AvgGrad",
            Message::Perm { .. } => "Perm",
            Message::Done => "Done",
        }
    }
}

fn put_vector(out: &mut Vec<u8>, v: &DenseVector) {
    out.extend_from_slice(&(v.dim() as u32).to_le_bytes());
    for x in v.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Encodes one length-prefixed frame.
pub fn encode(msg: &Message) -> Vec<u8> {
    let mut out = vec![0u8; 4];
    match msg {
        Message::Hello {
            worker_id,
            n,
            d,
            config_hash,
        } => {
            out.push(HELLO);
            out.extend_from_slice(&worker_id.to_le_bytes());
            out.extend_from_slice(&n.to_le_bytes());
            out.extend_from_slice(&d.to_le_bytes());
            out.extend_from_slice(&config_hash.to_le_bytes());
        }
        Message::Grad {
            epoch,
            step,
            worker_id,
            payload,
        } => {
            out.push(GRAD);
            out.extend_from_slice(&epoch.to_le_bytes());
            out.extend_from_slice(&step.to_le_bytes());
            out.extend_from_slice(&worker_id.to_le_bytes());
            put_vector(&mut out, payload);
        }
        Message::AvgGrad {
            epoch,
            step,
            payload,
        } => {
            out.push(AVG_GRAD);
            out.extend_from_slice(&epoch.to_le_bytes());
            out.extend_from_slice(&step.to_le_bytes());
            put_vector(&mut out, payload);
        }
        Message::Perm {
            epoch,
            worker_id,
            perm,
        } => {
            out.push(PERM);
            out.extend_from_slice(&epoch.to_le_bytes());
            out.extend_from_slice(&worker_id.to_le_bytes());
            out.extend_from_slice(&(perm.len() as u32).to_le_bytes());
            for &k in perm.as_slice() {
                out.extend_from_slice(&(k as u32).to_le_bytes());
            }
        }
        Message::Done => out.push(DONE),
    }
    let len = (out.len() - 4) as u32;
    out[..4].copy_from_slice(&len.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    /// Offset of `buf[0]` within the whole frame.
    base: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Decode {
            offset: self.base + offset,
            reason: reason.into(),
        }
    }

    fn take(&mut self, count: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < count {
            return Err(self.err(
                self.buf.len(),
                format!("truncated frame while reading {what}"),
            ));
        }
        let out = &self.buf[self.pos..self.pos + count];
        self.pos += count;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn vector(&mut self) -> Result<DenseVector> {
        let at = self.pos;
        let d = self.u32("vector length")? as usize;
        if d == 0 {
            return Err(self.err(at, "zero-length vector"));
        }
        if (self.buf.len() - self.pos) / 8 < d {
            return Err(self.err(self.buf.len(), format!("truncated frame inside a {d}-float vector")));
        }
        let mut data = Vec::with_capacity(d);
        for _ in 0..d {
            let at = self.pos;
            let x = f64::from_le_bytes(self.take(8, "float")?.try_into().unwrap());
            if !x.is_finite() {
                return Err(self.err(at, format!("non-finite float {x}")));
            }
            data.push(x);
        }
        Ok(DenseVector::new(data).expect("checked finite and nonempty"))
    }

    fn permutation(&mut self) -> Result<Permutation> {
        let at = self.pos;
        let n = self.u32("permutation length")? as usize;
        if n == 0 {
            return Err(self.err(at, "empty permutation"));
        }
        if (self.buf.len() - self.pos) / 4 < n {
            return Err(self.err(self.buf.len(), format!("truncated frame inside a {n}-index permutation")));
        }
        let mut seen = vec![false; n];
        let mut map = Vec::with_capacity(n);
        for _ in 0..n {
            let at = self.pos;
            let k = self.u32("index")? as usize;
            if k >= n || seen[k] {
                return Err(self.err(at, format!("index {k} breaks the bijection on [0, {n})")));
            }
            seen[k] = true;
            map.push(k);
        }
        Ok(Permutation::new(map).expect("checked bijection"))
    }
}

/// Decodes the body of a frame (type byte plus payload); `base` is the body's
/// offset within the frame, used in error positions.
fn decode_body(body: &[u8], base: usize) -> Result<Message> {
    let mut r = Reader { buf: body, pos: 0, base };
    let kind = r.take(1, "type byte")?[0];
    let msg = match kind {
        HELLO => Message::Hello {
            worker_id: r.u16("worker id")?,
            n: r.u32("n")?,
            d: r.u32("d")?,
            config_hash: r.u64("config hash")?,
        },
        GRAD => Message::Grad {
            epoch: r.u32("epoch")?,
            step: r.u32("step")?,
            worker_id: r.u16("worker id")?,
            payload: r.vector()?,
        },
        AVG_GRAD => Message::AvgGrad {
            epoch: r.u32("epoch")?,
            step: r.u32("step")?,
            payload: r.vector()?,
        },
        PERM => Message::Perm {
            epoch: r.u32("epoch")?,
            worker_id: r.u16("worker id")?,
            perm: r.permutation()?,
        },
        DONE => Message::Done,
        other => return Err(r.err(0, format!("unknown message type 0x{other:02x}"))),
    };
    if r.pos != body.len() {
        return Err(r.err(
            r.pos,
            format!("length mismatch: {} trailing byte(s)", body.len() - r.pos),
        ));
    }
    Ok(msg)
}

fn frame_length(prefix: [u8; 4]) -> Result<usize> {
    let len = u32::from_le_bytes(prefix) as usize;
    if len == 0 {
        return Err(Error::Decode {
            offset: 4,
            reason: "empty frame has no type byte".into(),
        });
    }
    if len > MAX_FRAME {
        return Err(Error::Decode {
            offset: 0,
            reason: format!("frame length {len} exceeds the {MAX_FRAME}-byte cap"),
        });
    }
    Ok(len)
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<Message> {
    if bytes.len() < 4 {
        return Err(Error::Decode {
            offset: bytes.len(),
            reason: "truncated frame while reading length prefix".into(),
        });
    }
    let len = frame_length(bytes[..4].try_into().unwrap())?;
    let body = &bytes[4..];
    if body.len() < len {
        return Err(Error::Decode {
            offset: bytes.len(),
            reason: format!("truncated frame: length prefix says {len}, {} present", body.len()),
        });
    }
    if body.len() > len {
        return Err(Error::Decode {
            offset: 4 + len,
            reason: format!("length mismatch: {} byte(s) past the frame", body.len() - len),
        });
    }
    decode_body(body, 4)
}

/// Reads one frame from a byte stream. A clean end of stream before the first
/// byte is reported as a disconnect.
pub fn read_message<R: Read>(reader: &mut R) -> Result<Message> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match reader.read(&mut prefix[got..]) {
            Ok(0) if got == 0 => return Err(Error::Disconnected("stream closed".into())),
            Ok(0) => {
                return Err(Error::Decode {
                    offset: got,
                    reason: "stream ended inside the length prefix".into(),
                })
            }
            Ok(k) => got += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(disconnect(e)),
        }
    }
    let len = frame_length(prefix)?;
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Decode {
            offset: 4,
            reason: format!("stream ended inside a {len}-byte frame"),
        },
        _ => disconnect(e),
    })?;
    decode_body(&body, 4)
}

pub fn write_message<W: Write>(writer: &mut W, msg: &Message) -> Result<()> {
    writer.write_all(&encode(msg)).map_err(disconnect)?;
    writer.flush().map_err(disconnect)
}

fn disconnect(e: std::io::Error) -> Error {
    use std::io::ErrorKind::*;
    match e.kind() {
        ConnectionReset | ConnectionAborted | BrokenPipe | UnexpectedEof | NotConnected => {
            Error::Disconnected(e.to_string())
        }
        _ => Error::Io(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hex(bytes: &[u8]) -> String {
        bytes.iter().map(|b| format!("{b:02X}")).collect()
    }

    #[test]
    fn grad_fixture() {
        let msg = Message::Grad {
            epoch: 1,
            step: 2,
            worker_id: 3,
            payload: DenseVector::new(vec![1.0]).unwrap(),
        };
        let bytes = encode(&msg);
        assert_eq!(
            hex(&bytes),
            "17000000".to_owned() + "02" + "01000000" + "02000000" + "0300" + "01000000" + "000000000000F03F"
        );
        // independent writer: fields laid down one by one
        let mut manual = Vec::new();
        manual.extend_from_slice(&23u32.to_le_bytes());
        manual.push(2);
        manual.extend_from_slice(&1u32.to_le_bytes());
        manual.extend_from_slice(&2u32.to_le_bytes());
        manual.extend_from_slice(&3u16.to_le_bytes());
        manual.extend_from_slice(&1u32.to_le_bytes());
        manual.extend_from_slice(&1.0f64.to_bits().to_le_bytes());
        assert_eq!(bytes, manual);
        assert_eq!(decode(&bytes).unwrap(), msg);
    }

    #[test]
    fn done_fixture() {
        assert_eq!(hex(&encode(&Message::Done)), "0100000005");
        assert_eq!(decode(&[1, 0, 0, 0, 5]).unwrap(), Message::Done);
    }

    #[test]
    fn malformed_frames() {
        let offset = |r: Result<Message>| match r {
            Err(Error::Decode { offset, .. }) => offset,
            other => panic!("expected decode error, got {other:?}"),
        };
        assert_eq!(offset(decode(&[1, 0])), 2);
        assert_eq!(offset(decode(&[1, 0, 0, 0, 9])), 4);
        assert_eq!(offset(decode(&[0, 0, 0, 0])), 4);
        assert_eq!(offset(decode(&[2, 0, 0, 0, 5, 0])), 5);
        assert_eq!(offset(decode(&[1, 0, 0, 0, 5, 7])), 5);
        assert_eq!(offset(decode(&[0xff, 0xff, 0xff, 0x7f, 5])), 0);
        let mut nan = encode(&Message::AvgGrad {
            epoch: 1,
            step: 1,
            payload: DenseVector::new(vec![0.0, 1.0]).unwrap(),
        });
        let at = nan.len() - 8;
        nan[at..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert_eq!(offset(decode(&nan)), at);
        let mut bad_perm = encode(&Message::Perm {
            epoch: 1,
            worker_id: 0,
            perm: Permutation::identity(3),
        });
        let at = bad_perm.len() - 4;
        bad_perm[at..].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(offset(decode(&bad_perm)), at);
    }

    #[test]
    fn stream_reading() {
        let mut bytes = encode(&Message::Done);
        bytes.extend(encode(&Message::Hello {
            worker_id: 1,
            n: 4,
            d: 2,
            config_hash: 99,
        }));
        let mut cursor = std::io::Cursor::new(bytes);
        assert_eq!(read_message(&mut cursor).unwrap(), Message::Done);
        assert!(matches!(read_message(&mut cursor).unwrap(), Message::Hello { n: 4, .. }));
        assert!(matches!(read_message(&mut cursor), Err(Error::Disconnected(_))));
        let mut partial = std::io::Cursor::new(vec![9, 0, 0, 0, 2, 1]);
        assert!(matches!(read_message(&mut partial), Err(Error::Decode { .. })));
    }

    pub(crate) fn arb_message() -> impl Strategy<Value = Message> {
        let vector = prop::collection::vec(-1e300f64..1e300, 1..12)
            .prop_map(|v| DenseVector::new(v).unwrap());
        let perm = (1usize..20, any::<u64>()).prop_map(|(n, seed)| {
            Permutation::random(n, &mut crate::rng::RngStream::new(seed, 0, 0, "codec")).unwrap()
        });
        prop_oneof![
            (any::<u16>(), any::<u32>(), any::<u32>(), any::<u64>()).prop_map(|(w, n, d, h)| {
                Message::Hello {
                    worker_id: w,
                    n,
                    d,
                    config_hash: h,
                }
            }),
            (any::<u32>(), any::<u32>(), any::<u16>(), vector.clone()).prop_map(|(e, s, w, p)| {
                Message::Grad {
                    epoch: e,
                    step: s,
                    worker_id: w,
                    payload: p,
                }
            }),
            (any::<u32>(), any::<u32>(), vector).prop_map(|(e, s, p)| Message::AvgGrad {
                epoch: e,
                step: s,
                payload: p,
            }),
            (any::<u32>(), any::<u16>(), perm).prop_map(|(e, w, p)| Message::Perm {
                epoch: e,
                worker_id: w,
                perm: p,
            }),
            Just(Message::Done),
        ]
    }

    proptest! {
        #[test]
        fn roundtrip(msg in arb_message()) {
            let bytes = encode(&msg);
            prop_assert_eq!(decode(&bytes).unwrap(), msg);
        }

        #[test]
        fn every_strict_prefix_is_an_error(msg in arb_message()) {
            let bytes = encode(&msg);
            for cut in 0..bytes.len() {
                prop_assert!(decode(&bytes[..cut]).is_err());
            }
        }

        #[test]
        fn garbage_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode(&bytes);
            let _ = read_message(&mut std::io::Cursor::new(bytes));
        }
    }
}
