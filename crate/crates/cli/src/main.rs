fn main() {
    std::process::exit(basinfo_cli::dispatch(std::env::args_os()));
}
