fn main() {
    std::process::exit(style_opt_service::cli::main());
}
