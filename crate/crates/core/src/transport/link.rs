use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread;
use std::time::Duration;

use super::codec::{decode, encode, read_message, write_message, Message};
use crate::error::{Error, Result};

/// A bidirectional, ordered, lossless message pipe to one peer.
pub trait Link: Send {
    fn send(&mut self, msg: &Message) -> Result<()>;
    fn recv(&mut self) -> Result<Message>;
}

/// In-process link. Frames cross the channel encoded, so both transports
/// exercise the same codec.
#[derive(Debug)]
pub struct MemoryLink {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// Two connected in-memory endpoints.
pub fn memory_pair() -> (MemoryLink, MemoryLink) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    (
        MemoryLink { tx: a_tx, rx: a_rx },
        MemoryLink { tx: b_tx, rx: b_rx },
    )
}

impl Link for MemoryLink {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.tx
            .send(encode(msg))
            .map_err(|_| Error::Disconnected("in-memory peer dropped".into()))
    }

    fn recv(&mut self) -> Result<Message> {
        let frame = self
            .rx
            .recv()
            .map_err(|_| Error::Disconnected("in-memory peer dropped".into()))?;
        decode(&frame)
    }
}

#[derive(Debug)]
pub struct TcpLink {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    peer: SocketAddr,
}

impl TcpLink {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        let peer = stream.peer_addr()?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            peer,
        })
    }

    pub fn peer(&self) -> SocketAddr {
        self.peer
    }
}

impl Link for TcpLink {
    fn send(&mut self, msg: &Message) -> Result<()> {
        write_message(&mut self.writer, msg)
    }

    fn recv(&mut self) -> Result<Message> {
        read_message(&mut self.reader)
    }
}

/// Accepts exactly `count` connections on `listener`, in arrival order.
pub fn accept_links(listener: &TcpListener, count: usize) -> Result<Vec<TcpLink>> {
    (0..count)
        .map(|_| {
            let (stream, addr) = listener.accept()?;
            log::debug!("accepted connection from {addr}");
            TcpLink::new(stream)
        })
        .collect()
}

/// Connects to `addr`, retrying refused connections with doubling backoff
/// (starting at `initial`) for at most `attempts` tries.
pub fn connect_with_retry(addr: &str, attempts: u32, initial: Duration) -> Result<TcpLink> {
    let mut wait = initial;
    let mut last = None;
    for attempt in 1..=attempts.max(1) {
        let resolved = addr
            .to_socket_addrs()
            .map_err(|e| Error::config(format!("cannot resolve `{addr}`: {e}")))?;
        for sock in resolved {
            match TcpStream::connect(sock) {
                Ok(stream) => return TcpLink::new(stream),
                Err(e) => last = Some(e),
            }
        }
        if attempt < attempts {
            log::info!("connect to {addr} failed (attempt {attempt}/{attempts}), retrying in {wait:?}");
            thread::sleep(wait);
            wait = (wait * 2).min(Duration::from_secs(2));
        }
    }
    Err(Error::Disconnected(format!(
        "could not connect to {addr} after {attempts} attempt(s): {}",
        last.map(|e| e.to_string()).unwrap_or_else(|| "no address".into())
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::DenseVector;

    #[test]
    fn memory_pair_is_fifo() {
        let (mut a, mut b) = memory_pair();
        for k in 0..10u32 {
            a.send(&Message::AvgGrad {
                epoch: 1,
                step: k,
                payload: DenseVector::new(vec![k as f64]).unwrap(),
            })
            .unwrap();
        }
        for k in 0..10u32 {
            match b.recv().unwrap() {
                Message::AvgGrad { step, .. } => assert_eq!(step, k),
                other => panic!("{other:?}"),
            }
        }
        drop(a);
        assert!(matches!(b.recv(), Err(Error::Disconnected(_))));
    }

    #[test]
    fn tcp_loopback_roundtrip() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let client = thread::spawn(move || {
            let mut link = connect_with_retry(&addr, 5, Duration::from_millis(10)).unwrap();
            link.send(&Message::Done).unwrap();
            link.recv().unwrap()
        });
        let mut links = accept_links(&listener, 1).unwrap();
        assert_eq!(links[0].recv().unwrap(), Message::Done);
        let hello = Message::Hello {
            worker_id: 0,
            n: 2,
            d: 1,
            config_hash: 5,
        };
        links[0].send(&hello).unwrap();
        assert_eq!(client.join().unwrap(), hello);
    }

    #[test]
    fn refused_connection_gives_up() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        assert!(matches!(
            connect_with_retry(&addr, 2, Duration::from_millis(1)),
            Err(Error::Disconnected(_))
        ));
    }
}
