fn main() {
    std::process::exit(topicforge::cli::main_with_args(std::env::args_os()));
}
