fn main() {
    std::process::exit(ride_cli::dispatch(std::env::args_os()));
}
