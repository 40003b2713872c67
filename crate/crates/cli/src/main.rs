fn main() {
    std::process::exit(maskedspeech_cli::run(std::env::args_os()));
}
