fn main() {
    let code = peaktrack::cli::main_entry(std::env::args().skip(1));
    std::process::exit(code);
}
