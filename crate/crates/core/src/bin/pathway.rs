fn main() {
    std::process::exit(pathway_core::cli::run(std::env::args_os()));
}
