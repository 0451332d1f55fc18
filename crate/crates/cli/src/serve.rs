//! Line protocol over TCP.
//!
//! Request: `id<TAB>text`. Response: `id<TAB>decision<TAB>stage<TAB>similarity`,
//! or `id<TAB>error<TAB>message` for a line that cannot be adjudicated.
//! Responses on a connection follow its request order. Adjudications from all
//! connections are serialized through one engine.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use intentgate::engine::Engine;

use crate::commands::similarity_text;
use crate::fail::Failure;

pub fn respond(engine: &Mutex<Engine>, line: &str) -> String {
    let Some((id, text)) = line.split_once('\t') else {
        return "-\terror\texpected id<TAB>text".into();
    };
    let mut e = engine.lock().unwrap_or_else(|p| p.into_inner());
    let arrival = e.last_arrival().unwrap_or(0) + 1;
    let verdict = e.embed(text).and_then(|pair| e.adjudicate_embedded(arrival, &pair));
    match verdict {
        Ok(v) => format!("{id}\t{}\t{}\t{}", v.decision, v.stage, similarity_text(v.similarity)),
        Err(err) => format!("{id}\terror\t{err}"),
    }
}

fn handle(conn: TcpStream, engine: &Mutex<Engine>) -> std::io::Result<()> {
    let mut out = conn.try_clone()?;
    for line in BufReader::new(conn).lines() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        writeln!(out, "{}", respond(engine, line))?;
    }
    Ok(())
}

/// Serves until the process ends, or after the first connection closes when
/// `once` is set. The bound address is printed first.
pub fn serve(engine: Engine, addr: &str, once: bool) -> Result<(), Failure> {
    let listener = TcpListener::bind(addr).map_err(|e| Failure::config(format!("cannot bind {addr}: {e}")))?;
    println!("listening\t{}", listener.local_addr()?);
    std::io::stdout().flush()?;
    let engine = Arc::new(Mutex::new(engine));
    for conn in listener.incoming() {
        let conn = conn?;
        let engine = engine.clone();
        let worker = thread::spawn(move || handle(conn, &engine));
        if once {
            return worker.join().map_err(|_| Failure::data("connection handler panicked"))?.map_err(Failure::from);
        }
    }
    Ok(())
}
