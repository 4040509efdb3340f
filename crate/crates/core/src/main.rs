fn main() -> std::process::ExitCode {
    evplace::cli::main_with_args(std::env::args_os())
}
