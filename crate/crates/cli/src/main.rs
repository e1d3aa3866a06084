fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = tofflow_cli::run(args) {
        eprintln!("tofflow: {e}");
        std::process::exit(e.exit_code());
    }
}
