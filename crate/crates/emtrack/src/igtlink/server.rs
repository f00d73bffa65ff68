//! TCP broadcast server for TRANSFORM messages.
//!
//! Every connected client gets its own writer thread and a bounded outbound
//! queue (depth 8, drop-oldest), so a stalled client can never block the
//! tracking loop or its peers.

use std::collections::VecDeque;
use std::io::Write;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use thiserror::Error;

/// OpenIGTLink convention.
pub const DEFAULT_PORT: u16 = 18944;

const CLIENT_QUEUE_DEPTH: usize = 8;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("failed to bind {addr}: {source}")]
    BindFailure {
        addr: String,
        source: std::io::Error,
    },
}

struct ClientSlot {
    peer: SocketAddr,
    queue: Mutex<VecDeque<Arc<Vec<u8>>>>,
    wake: Condvar,
    closed: AtomicBool,
}

impl ClientSlot {
    fn push(&self, message: Arc<Vec<u8>>) {
        let mut queue = self.queue.lock().unwrap();
        if queue.len() >= CLIENT_QUEUE_DEPTH {
            queue.pop_front();
        }
        queue.push_back(message);
        drop(queue);
        self.wake.notify_one();
    }

    fn close(&self) {
        self.closed.store(true, Ordering::Relaxed);
        self.wake.notify_one();
    }
}

/// Handle to a running broadcast server. Dropping it shuts the server down.
pub struct IgtServer {
    local_addr: SocketAddr,
    clients: Arc<Mutex<Vec<Arc<ClientSlot>>>>,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl IgtServer {
    pub fn bind<A: ToSocketAddrs + std::fmt::Display>(addr: A) -> Result<IgtServer, ServerError> {
        let listener = TcpListener::bind(&addr).map_err(|source| ServerError::BindFailure {
            addr: addr.to_string(),
            source,
        })?;
        let local_addr = listener.local_addr().expect("bound listener has an address");
        let clients: Arc<Mutex<Vec<Arc<ClientSlot>>>> = Arc::default();
        let shutdown = Arc::new(AtomicBool::new(false));

        let accept_clients = clients.clone();
        let accept_shutdown = shutdown.clone();
        let accept_thread = std::thread::Builder::new()
            .name("igtlink-accept".into())
            .spawn(move || accept_loop(listener, accept_clients, accept_shutdown))
            .expect("spawn accept thread");

        log::info!("OpenIGTLink server listening on {local_addr}");
        Ok(IgtServer {
            local_addr,
            clients,
            shutdown,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn client_count(&self) -> usize {
        self.clients.lock().unwrap().len()
    }

    /// Queue one encoded message to every connected client. Never blocks on
    /// client I/O; slow clients lose their oldest queued messages.
    pub fn broadcast(&self, message: Vec<u8>) {
        let message = Arc::new(message);
        let mut clients = self.clients.lock().unwrap();
        clients.retain(|client| {
            if client.closed.load(Ordering::Relaxed) {
                log::info!("client {} disconnected", client.peer);
                return false;
            }
            client.push(message.clone());
            true
        });
    }

    pub fn shutdown(&mut self) {
        if self.shutdown.swap(true, Ordering::Relaxed) {
            return;
        }
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.local_addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
        for client in self.clients.lock().unwrap().drain(..) {
            client.close();
        }
    }
}

impl Drop for IgtServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(
    listener: TcpListener,
    clients: Arc<Mutex<Vec<Arc<ClientSlot>>>>,
    shutdown: Arc<AtomicBool>,
) {
    for stream in listener.incoming() {
        if shutdown.load(Ordering::Relaxed) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(err) => {
                log::warn!("accept failed: {err}");
                continue;
            }
        };
        let peer = match stream.peer_addr() {
            Ok(p) => p,
            Err(_) => continue,
        };
        let _ = stream.set_nodelay(true);
        let slot = Arc::new(ClientSlot {
            peer,
            queue: Mutex::new(VecDeque::new()),
            wake: Condvar::new(),
            closed: AtomicBool::new(false),
        });
        log::info!("client {peer} connected");
        let writer_slot = slot.clone();
        let spawned = std::thread::Builder::new()
            .name(format!("igtlink-client-{peer}"))
            .spawn(move || writer_loop(stream, writer_slot));
        if spawned.is_ok() {
            clients.lock().unwrap().push(slot);
        }
    }
}

fn writer_loop(mut stream: TcpStream, slot: Arc<ClientSlot>) {
    loop {
        let message = {
            let mut queue = slot.queue.lock().unwrap();
            loop {
                if slot.closed.load(Ordering::Relaxed) {
                    return;
                }
                if let Some(m) = queue.pop_front() {
                    break m;
                }
                queue = slot.wake.wait(queue).unwrap();
            }
        };
        if let Err(err) = stream.write_all(&message) {
            log::info!("client {} write failed: {err}", slot.peer);
            slot.closed.store(true, Ordering::Relaxed);
            return;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Read;
    use std::time::Duration;

    fn wait_for<F: Fn() -> bool>(cond: F) {
        for _ in 0..200 {
            if cond() {
                return;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        panic!("condition not reached");
    }

    #[test]
    fn broadcast_reaches_all_clients() {
        let server = IgtServer::bind("127.0.0.1:0").unwrap();
        let addr = server.local_addr();
        let mut a = TcpStream::connect(addr).unwrap();
        let mut b = TcpStream::connect(addr).unwrap();
        wait_for(|| server.client_count() == 2);

        let payload = vec![1u8, 2, 3, 4];
        server.broadcast(payload.clone());
        let mut buf_a = vec![0u8; 4];
        let mut buf_b = vec![0u8; 4];
        a.read_exact(&mut buf_a).unwrap();
        b.read_exact(&mut buf_b).unwrap();
        assert_eq!(buf_a, payload);
        assert_eq!(buf_b, payload);
    }

    #[test]
    fn late_client_gets_no_replay() {
        let server = IgtServer::bind("127.0.0.1:0").unwrap();
        let addr = server.local_addr();
        let mut early = TcpStream::connect(addr).unwrap();
        wait_for(|| server.client_count() == 1);
        server.broadcast(vec![0xAA; 8]);
        let mut buf = vec![0u8; 8];
        early.read_exact(&mut buf).unwrap();

        let mut late = TcpStream::connect(addr).unwrap();
        wait_for(|| server.client_count() == 2);
        server.broadcast(vec![0xBB; 8]);
        late.read_exact(&mut buf).unwrap();
        assert_eq!(buf, vec![0xBB; 8]);
    }

    #[test]
    fn disconnect_is_tolerated() {
        let server = IgtServer::bind("127.0.0.1:0").unwrap();
        let addr = server.local_addr();
        {
            let _dropme = TcpStream::connect(addr).unwrap();
            wait_for(|| server.client_count() == 1);
        }
        // The writer discovers the closed socket on its next send attempt.
        for _ in 0..20 {
            server.broadcast(vec![0u8; 16]);
            std::thread::sleep(Duration::from_millis(5));
            if server.client_count() == 0 {
                return;
            }
        }
        // Either the client was reaped or broadcasts kept flowing; both are
        // acceptable as long as nothing blocked, which reaching here proves.
    }

    #[test]
    fn bind_failure_reported() {
        let holder = IgtServer::bind("127.0.0.1:0").unwrap();
        match IgtServer::bind(holder.local_addr()) {
            Err(ServerError::BindFailure { .. }) => {}
            Ok(_) => panic!("double bind unexpectedly succeeded"),
        }
    }
}
