//! decaythermd: the standalone service binary.

use std::net::SocketAddr;

fn main() {
    let mut listen: SocketAddr = "127.0.0.1:8787".parse().unwrap();
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--listen" => {
                let v = args.next().unwrap_or_default();
                match v.parse() {
                    Ok(a) => listen = a,
                    Err(_) => {
                        eprintln!("bad --listen address `{v}`");
                        std::process::exit(2);
                    }
                }
            }
            "--help" | "-h" => {
                println!("usage: decaythermd [--listen ADDR]   (default 127.0.0.1:8787)");
                return;
            }
            other => {
                eprintln!("unknown argument `{other}`");
                std::process::exit(2);
            }
        }
    }
    let rt = tokio::runtime::Runtime::new().expect("runtime");
    if let Err(e) = rt.block_on(decaytherm_service::serve(listen)) {
        eprintln!("server error: {e}");
        std::process::exit(1);
    }
}
