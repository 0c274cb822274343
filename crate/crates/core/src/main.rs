fn main() {
    std::process::exit(scoped_dnas::cli::run(std::env::args_os()));
}
