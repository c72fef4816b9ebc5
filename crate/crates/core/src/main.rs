fn main() {
    std::process::exit(reconcile::cli::run(std::env::args_os()));
}
