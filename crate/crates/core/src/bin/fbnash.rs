fn main() {
    std::process::exit(fbsde_nash::cli::run(std::env::args_os()));
}
