//! In-memory byte streams for running both endpoints in one process.

use std::io::{self, Read, Write};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

/// One end of a bidirectional in-memory pipe.
///
/// Reads block up to the configured timeout and then fail with
/// `ErrorKind::TimedOut`; once the peer is dropped, reads drain what is
/// buffered and then return EOF.
pub struct LoopbackStream {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    pos: usize,
    timeout: Option<Duration>,
}

/// Two connected streams.
pub fn loopback_pair(timeout: Option<Duration>) -> (LoopbackStream, LoopbackStream) {
    let (tx_a, rx_b) = channel();
    let (tx_b, rx_a) = channel();
    let end = |tx, rx| LoopbackStream { tx, rx, pending: Vec::new(), pos: 0, timeout };
    (end(tx_a, rx_a), end(tx_b, rx_b))
}

impl LoopbackStream {
    pub fn set_timeout(&mut self, timeout: Option<Duration>) {
        self.timeout = timeout;
    }
}

impl Read for LoopbackStream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        while self.pos >= self.pending.len() {
            let next = match self.timeout {
                Some(t) => self.rx.recv_timeout(t).map_err(|e| match e {
                    RecvTimeoutError::Timeout => Some(io::Error::new(io::ErrorKind::TimedOut, "loopback read timed out")),
                    RecvTimeoutError::Disconnected => None,
                }),
                None => self.rx.recv().map_err(|_| None),
            };
            match next {
                Ok(chunk) => {
                    self.pending = chunk;
                    self.pos = 0;
                }
                Err(Some(e)) => return Err(e),
                Err(None) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len() - self.pos);
        buf[..n].copy_from_slice(&self.pending[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

impl Write for LoopbackStream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "loopback peer closed"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_cross_in_order() {
        let (mut a, mut b) = loopback_pair(None);
        a.write_all(b"hello ").unwrap();
        a.write_all(b"world").unwrap();
        let mut buf = [0u8; 11];
        b.read_exact(&mut buf).unwrap();
        assert_eq!(&buf, b"hello world");
        b.write_all(b"!").unwrap();
        let mut one = [0u8; 1];
        a.read_exact(&mut one).unwrap();
        assert_eq!(&one, b"!");
    }

    #[test]
    fn timeout_and_eof() {
        let (mut a, b) = loopback_pair(Some(Duration::from_millis(10)));
        let mut buf = [0u8; 4];
        assert_eq!(a.read(&mut buf).unwrap_err().kind(), io::ErrorKind::TimedOut);
        drop(b);
        assert_eq!(a.read(&mut buf).unwrap(), 0);
        assert_eq!(a.write(b"x").unwrap_err().kind(), io::ErrorKind::BrokenPipe);
    }
}
