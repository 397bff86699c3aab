//! Blocking UDP socket wrapper with the datagram size limit enforced.

use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::time::Duration;

use crate::wire::MAX_DATAGRAM;

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("failed to bind {addr}")]
    Bind { addr: String, source: io::Error },
    #[error("datagram of {0} bytes exceeds the {MAX_DATAGRAM}-byte limit")]
    Oversize(usize),
    #[error("send failed: {0}")]
    Send(io::Error),
    #[error("receive failed: {0}")]
    Recv(io::Error),
    #[error("socket option failed: {0}")]
    Socket(io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Received {
    Datagram { from: SocketAddr, bytes: Vec<u8> },
    Timeout,
}

#[derive(Debug)]
pub struct UdpEndpoint {
    socket: UdpSocket,
    buf: Vec<u8>,
}

impl UdpEndpoint {
    pub fn bind<A: ToSocketAddrs + std::fmt::Debug>(addr: A) -> Result<Self, TransportError> {
        let socket = UdpSocket::bind(&addr).map_err(|source| TransportError::Bind {
            addr: format!("{addr:?}"),
            source,
        })?;
        Ok(Self {
            socket,
            // one spare byte so oversize datagrams are detectable
            buf: vec![0; MAX_DATAGRAM + 1],
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, TransportError> {
        self.socket.local_addr().map_err(TransportError::Socket)
    }

    pub fn send_to(&self, datagram: &[u8], peer: SocketAddr) -> Result<(), TransportError> {
        if datagram.len() > MAX_DATAGRAM {
            return Err(TransportError::Oversize(datagram.len()));
        }
        self.socket
            .send_to(datagram, peer)
            .map_err(TransportError::Send)?;
        Ok(())
    }

    /// Waits up to `timeout` for one datagram. Oversize datagrams are
    /// discarded and reported as an empty wait.
    pub fn recv(&mut self, timeout: Duration) -> Result<Received, TransportError> {
        let timeout = timeout.max(Duration::from_millis(1));
        self.socket
            .set_read_timeout(Some(timeout))
            .map_err(TransportError::Socket)?;
        match self.socket.recv_from(&mut self.buf) {
            Ok((n, _)) if n > MAX_DATAGRAM => Ok(Received::Timeout),
            Ok((n, from)) => Ok(Received::Datagram {
                from,
                bytes: self.buf[..n].to_vec(),
            }),
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock
                        | io::ErrorKind::TimedOut
                        | io::ErrorKind::Interrupted
                ) =>
            {
                Ok(Received::Timeout)
            }
            // ICMP port unreachable from an earlier send surfaces here on some platforms
            Err(e) if e.kind() == io::ErrorKind::ConnectionReset => Ok(Received::Timeout),
            Err(e) => Err(TransportError::Recv(e)),
        }
    }
}
