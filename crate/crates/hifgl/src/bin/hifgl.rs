fn main() {
    std::process::exit(hifgl::cli::run(std::env::args_os()));
}
