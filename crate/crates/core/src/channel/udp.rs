//! Frame transports for the live station runtime: an in-process broadcast
//! bus and UDP (multicast or unicast/broadcast) between processes. Both carry
//! the same encoded frames as the scenario engine.

use std::io;
use std::net::{Ipv4Addr, SocketAddr, SocketAddrV4, UdpSocket};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use socket2::{Domain, Protocol, Socket, Type};

/// Maximum datagram accepted; frames are far smaller.
const MAX_DATAGRAM: usize = 2048;

pub trait FrameTransport: Send {
    fn send(&self, frame: &[u8]) -> io::Result<()>;
    /// Waits up to `timeout` for a frame; `Ok(None)` on timeout.
    fn recv(&self, timeout: Duration) -> io::Result<Option<Vec<u8>>>;
}

type PeerList = Arc<Mutex<Vec<(usize, Sender<Vec<u8>>)>>>;

/// In-process broadcast medium. Every endpoint receives what the others
/// send, never its own frames.
#[derive(Clone, Default)]
pub struct SimBus {
    peers: PeerList,
}

impl SimBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn endpoint(&self) -> SimEndpoint {
        let (tx, rx) = channel();
        let mut peers = self.peers.lock().unwrap();
        let id = peers.len();
        peers.push((id, tx));
        SimEndpoint {
            id,
            bus: self.clone(),
            rx: Mutex::new(rx),
        }
    }
}

pub struct SimEndpoint {
    id: usize,
    bus: SimBus,
    rx: Mutex<Receiver<Vec<u8>>>,
}

impl FrameTransport for SimEndpoint {
    fn send(&self, frame: &[u8]) -> io::Result<()> {
        let mut peers = self.bus.peers.lock().unwrap();
        // drop endpoints whose receiver is gone
        peers.retain(|(id, tx)| *id == self.id || tx.send(frame.to_vec()).is_ok());
        Ok(())
    }

    fn recv(&self, timeout: Duration) -> io::Result<Option<Vec<u8>>> {
        match self.rx.lock().unwrap().recv_timeout(timeout) {
            Ok(f) => Ok(Some(f)),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => Ok(None),
        }
    }
}

/// UDP transport. When the group address is IPv4 multicast the socket joins
/// the group with loopback enabled, so several stations on one host can
/// exchange frames.
pub struct UdpTransport {
    socket: UdpSocket,
    dest: SocketAddr,
}

impl UdpTransport {
    pub fn open(group: SocketAddrV4) -> io::Result<Self> {
        let socket = Socket::new(Domain::IPV4, Type::DGRAM, Some(Protocol::UDP))?;
        socket.set_reuse_address(true)?;
        #[cfg(unix)]
        socket.set_reuse_port(true)?;
        socket.bind(&SocketAddr::V4(SocketAddrV4::new(Ipv4Addr::UNSPECIFIED, group.port())).into())?;
        let socket: UdpSocket = socket.into();
        if group.ip().is_multicast() {
            socket.join_multicast_v4(group.ip(), &Ipv4Addr::UNSPECIFIED)?;
            socket.set_multicast_loop_v4(true)?;
        } else if group.ip().is_broadcast() {
            socket.set_broadcast(true)?;
        }
        Ok(Self {
            socket,
            dest: SocketAddr::V4(group),
        })
    }
}

impl FrameTransport for UdpTransport {
    fn send(&self, frame: &[u8]) -> io::Result<()> {
        self.socket.send_to(frame, self.dest).map(|_| ())
    }

    fn recv(&self, timeout: Duration) -> io::Result<Option<Vec<u8>>> {
        self.socket.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        let mut buf = [0u8; MAX_DATAGRAM];
        match self.socket.recv_from(&mut buf) {
            Ok((n, _)) => Ok(Some(buf[..n].to_vec())),
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_bus_broadcasts_to_others() {
        let bus = SimBus::new();
        let a = bus.endpoint();
        let b = bus.endpoint();
        let c = bus.endpoint();
        a.send(b"hello").unwrap();
        assert_eq!(b.recv(Duration::from_millis(10)).unwrap().unwrap(), b"hello");
        assert_eq!(c.recv(Duration::from_millis(10)).unwrap().unwrap(), b"hello");
        assert!(a.recv(Duration::from_millis(10)).unwrap().is_none());
    }

    #[test]
    fn udp_unicast_loopback() {
        // pick a free port, then use it as the "group" for both ends
        let probe = UdpSocket::bind("127.0.0.1:0").unwrap();
        let port = probe.local_addr().unwrap().port();
        drop(probe);
        let group = SocketAddrV4::new(Ipv4Addr::LOCALHOST, port);
        let t = UdpTransport::open(group).unwrap();
        t.send(b"frame").unwrap();
        let got = t.recv(Duration::from_millis(500)).unwrap();
        assert_eq!(got.as_deref(), Some(&b"frame"[..]));
        assert!(t.recv(Duration::from_millis(10)).unwrap().is_none());
    }
}
