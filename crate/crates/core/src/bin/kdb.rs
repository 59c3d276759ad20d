fn main() {
    std::process::exit(kdb::cli::cli_dispatch(std::env::args_os()));
}
