fn main() {
    std::process::exit(template_fit::cli::run(std::env::args_os()));
}
