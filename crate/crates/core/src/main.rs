fn main() {
    std::process::exit(hlmelody::cli::run(std::env::args_os()));
}
