fn main() {
    std::process::exit(comb::cli::run(std::env::args_os()));
}
