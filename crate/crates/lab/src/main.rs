fn main() {
    std::process::exit(plm_lab::cli::run(std::env::args_os()));
}
