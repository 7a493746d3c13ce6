use super::codec::Message;
use super::link::Link;
use crate::error::{Error, Result};
use crate::permutation::Permutation;
use crate::vector::DenseVector;

/// What every Hello must agree on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionSpec {
    pub workers: usize,
    pub n: u32,
    pub d: u32,
    pub config_hash: u64,
}

fn unexpected(expected: &str, got: &Message) -> Error {
    Error::protocol(format!("expected {expected}, received {}", got.kind()))
}

/// Server side of a session: one link per worker, indexed by worker id.
pub struct ServerEndpoint<L: Link> {
    links: Vec<L>,
    spec: SessionSpec,
}

impl<L: Link> ServerEndpoint<L> {
    /// Reads one Hello per link and orders the links by worker id.
    pub fn handshake(links: Vec<L>, spec: SessionSpec) -> Result<Self> {
        if links.len() != spec.workers {
            return Err(Error::Handshake(format!(
                "{} connection(s) for m = {}",
                links.len(),
                spec.workers
            )));
        }
        let mut slots: Vec<Option<L>> = (0..spec.workers).map(|_| None).collect();
        for mut link in links {
            let msg = link.recv()?;
            let Message::Hello {
                worker_id,
                n,
                d,
                config_hash,
            } = msg
            else {
                return Err(Error::Handshake(format!("first message was {}", msg.kind())));
            };
            let id = usize::from(worker_id);
            if d != spec.d {
                return Err(Error::Handshake(format!(
                    "worker {id} declared d = {d}, server expects d = {}",
                    spec.d
                )));
            }
            if n != spec.n {
                return Err(Error::Handshake(format!(
                    "worker {id} declared n = {n}, server expects n = {}",
                    spec.n
                )));
            }
            if config_hash != spec.config_hash {
                return Err(Error::Handshake(format!(
                    "worker {id} config hash {config_hash:016x} differs from server {:016x}",
                    spec.config_hash
                )));
            }
            match slots.get_mut(id) {
                None => {
                    return Err(Error::Handshake(format!(
                        "worker id {id} out of range for m = {}",
                        spec.workers
                    )))
                }
                Some(Some(_)) => return Err(Error::Handshake(format!("duplicate worker id {id}"))),
                Some(slot) => *slot = Some(link),
            }
        }
        Ok(Self {
            links: slots.into_iter().map(|l| l.expect("all slots filled")).collect(),
            spec,
        })
    }

    pub fn spec(&self) -> SessionSpec {
        self.spec
    }

    pub fn send_permutations(&mut self, epoch: u32, perms: &[Permutation]) -> Result<()> {
        for (i, (link, perm)) in self.links.iter_mut().zip(perms).enumerate() {
            link.send(&Message::Perm {
                epoch,
                worker_id: i as u16,
                perm: perm.clone(),
            })?;
        }
        Ok(())
    }

    /// Blocks until every worker's gradient for `(epoch, step)` has arrived,
    /// returned in worker order.
    pub fn gather(&mut self, epoch: u32, step: u32) -> Result<Vec<DenseVector>> {
        let d = self.spec.d as usize;
        self.links
            .iter_mut()
            .enumerate()
            .map(|(i, link)| match link.recv()? {
                Message::Grad {
                    epoch: e,
                    step: s,
                    worker_id,
                    payload,
                } => {
                    if (e, s, usize::from(worker_id)) != (epoch, step, i) {
                        return Err(Error::protocol(format!(
                            "expected Grad(epoch {epoch}, step {step}) from worker {i}, got epoch {e}, step {s} from worker {worker_id}"
                        )));
                    }
                    if payload.dim() != d {
                        return Err(Error::DimensionMismatch {
                            expected: d,
                            got: payload.dim(),
                        });
                    }
                    Ok(payload)
                }
                other => Err(unexpected("Grad", &other)),
            })
            .collect()
    }

    pub fn broadcast_avg(&mut self, epoch: u32, step: u32, avg: &DenseVector) -> Result<()> {
        let msg = Message::AvgGrad {
            epoch,
            step,
            payload: avg.clone(),
        };
        self.links.iter_mut().try_for_each(|l| l.send(&msg))
    }

    pub fn finish(&mut self) -> Result<()> {
        self.links.iter_mut().try_for_each(|l| l.send(&Message::Done))
    }
}

/// What the server tells a worker between epochs.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    Epoch(u32, Permutation),
    Done,
}

/// Worker side of a session.
pub struct WorkerEndpoint<L: Link> {
    link: L,
    worker_id: u16,
    d: usize,
}

impl<L: Link> WorkerEndpoint<L> {
    pub fn hello(mut link: L, worker_id: u16, n: u32, d: u32, config_hash: u64) -> Result<Self> {
        link.send(&Message::Hello {
            worker_id,
            n,
            d,
            config_hash,
        })?;
        Ok(Self {
            link,
            worker_id,
            d: d as usize,
        })
    }

    pub fn recv_control(&mut self) -> Result<Control> {
        match self.link.recv()? {
            Message::Perm {
                epoch,
                worker_id,
                perm,
            } if worker_id == self.worker_id => Ok(Control::Epoch(epoch, perm)),
            Message::Perm { worker_id, .. } => Err(Error::protocol(format!(
                "worker {} received the permutation for worker {worker_id}",
                self.worker_id
            ))),
            Message::Done => Ok(Control::Done),
            other => Err(unexpected("Perm or Done", &other)),
        }
    }

    pub fn send_grad(&mut self, epoch: u32, step: u32, grad: &DenseVector) -> Result<()> {
        self.link.send(&Message::Grad {
            epoch,
            step,
            worker_id: self.worker_id,
            payload: grad.clone(),
        })
    }

    pub fn recv_avg(&mut self, epoch: u32, step: u32) -> Result<DenseVector> {
        match self.link.recv()? {
            Message::AvgGrad {
                epoch: e,
                step: s,
                payload,
            } if (e, s) == (epoch, step) && payload.dim() == self.d => Ok(payload),
            Message::AvgGrad { epoch: e, step: s, .. } => Err(Error::protocol(format!(
                "expected AvgGrad(epoch {epoch}, step {step}), got epoch {e}, step {s}"
            ))),
            other => Err(unexpected("AvgGrad", &other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::memory_pair;
    use std::thread;

    fn spec() -> SessionSpec {
        SessionSpec {
            workers: 2,
            n: 2,
            d: 1,
            config_hash: 7,
        }
    }

    #[test]
    fn handshake_orders_by_worker_id() {
        let (s0, w0) = memory_pair();
        let (s1, w1) = memory_pair();
        // worker 1 is on the first link
        let _w1 = WorkerEndpoint::hello(w0, 1, 2, 1, 7).unwrap();
        let _w0 = WorkerEndpoint::hello(w1, 0, 2, 1, 7).unwrap();
        let mut server = ServerEndpoint::handshake(vec![s0, s1], spec()).unwrap();
        server
            .send_permutations(1, &[Permutation::identity(2), Permutation::new(vec![1, 0]).unwrap()])
            .unwrap();
        let mut w1 = _w1;
        assert_eq!(
            w1.recv_control().unwrap(),
            Control::Epoch(1, Permutation::new(vec![1, 0]).unwrap())
        );
    }

    #[test]
    fn handshake_rejects_mismatches() {
        for (n, d, hash, id) in [(2, 3, 7, 0), (4, 1, 7, 0), (2, 1, 8, 0), (2, 1, 7, 5)] {
            let (s0, w0) = memory_pair();
            let (s1, w1) = memory_pair();
            let _a = WorkerEndpoint::hello(w0, id, n, d, hash).unwrap();
            let _b = WorkerEndpoint::hello(w1, 1, 2, 1, 7).unwrap();
            assert!(matches!(
                ServerEndpoint::handshake(vec![s0, s1], spec()),
                Err(Error::Handshake(_))
            ));
        }
    }

    #[test]
    fn single_worker_smoke_session() {
        let (s, w) = memory_pair();
        let spec = SessionSpec {
            workers: 1,
            n: 2,
            d: 1,
            config_hash: 0,
        };
        let worker = thread::spawn(move || {
            let mut ep = WorkerEndpoint::hello(w, 0, 2, 1, 0).unwrap();
            let mut seen = Vec::new();
            loop {
                match ep.recv_control().unwrap() {
                    Control::Done => break,
                    Control::Epoch(e, perm) => {
                        for j in 1..=perm.len() as u32 {
                            ep.send_grad(e, j, &DenseVector::new(vec![j as f64]).unwrap()).unwrap();
                            seen.push(ep.recv_avg(e, j).unwrap()[0]);
                        }
                    }
                }
            }
            seen
        });
        let mut server = ServerEndpoint::handshake(vec![s], spec).unwrap();
        server.send_permutations(1, &[Permutation::identity(2)]).unwrap();
        for j in 1..=2 {
            let g = server.gather(1, j).unwrap();
            server.broadcast_avg(1, j, &g[0]).unwrap();
        }
        server.finish().unwrap();
        assert_eq!(worker.join().unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn gather_rejects_wrong_step() {
        let (s, w) = memory_pair();
        let spec = SessionSpec {
            workers: 1,
            n: 2,
            d: 1,
            config_hash: 0,
        };
        let mut ep = WorkerEndpoint::hello(w, 0, 2, 1, 0).unwrap();
        let mut server = ServerEndpoint::handshake(vec![s], spec).unwrap();
        ep.send_grad(1, 2, &DenseVector::new(vec![1.0]).unwrap()).unwrap();
        assert!(matches!(server.gather(1, 1), Err(Error::Protocol(_))));
    }

    #[test]
    fn disconnect_surfaces() {
        let (s, w) = memory_pair();
        let spec = SessionSpec {
            workers: 1,
            n: 2,
            d: 1,
            config_hash: 0,
        };
        let ep = WorkerEndpoint::hello(w, 0, 2, 1, 0).unwrap();
        let mut server = ServerEndpoint::handshake(vec![s], spec).unwrap();
        drop(ep);
        assert!(matches!(server.gather(1, 1), Err(Error::Disconnected(_))));
    }
}
