fn main() -> std::process::ExitCode {
    cpa::cli::main(std::env::args_os())
}
