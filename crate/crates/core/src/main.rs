fn main() -> std::process::ExitCode {
    hmoe::cli::main()
}
