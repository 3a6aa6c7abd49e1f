fn main() {
    std::process::exit(edr_pav::cli::run(std::env::args_os()));
}
