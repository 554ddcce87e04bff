fn main() {
    std::process::exit(vitalws_cli::dispatch(std::env::args_os()));
}
