fn main() {
    std::process::exit(chartag::cli::run(std::env::args_os()));
}
