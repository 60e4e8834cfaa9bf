fn main() {
    std::process::exit(lmkbqa::cli::run(std::env::args_os()));
}
