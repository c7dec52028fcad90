use std::io::{self, Write};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let quiet = args.iter().any(|a| a == "--quiet" || a == "-q");
    let level = if quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let mut out = io::stdout().lock();
    let code = hermes::cli::run(args, &mut out);
    let _ = out.flush();
    std::process::exit(code);
}
