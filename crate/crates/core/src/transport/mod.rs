//! Length-prefixed binary protocol between workers and the order server, over
//! in-process channels or TCP.
//!
//! Frame: `u32 LE length` (type byte plus payload), one type byte, then the
//! payload fields in order. Integers are little-endian, floats are IEEE-754
//! binary64 little-endian, vectors are prefixed by their `u32` length and
//! permutations by `n` as `u32`.

mod codec;
mod link;
mod session;

pub use codec::{decode, encode, read_message, write_message, Message, MAX_FRAME};
pub use link::{accept_links, connect_with_retry, memory_pair, Link, MemoryLink, TcpLink};
pub use session::{Control, ServerEndpoint, SessionSpec, WorkerEndpoint};
