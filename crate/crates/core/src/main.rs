fn main() -> std::process::ExitCode {
    densmon::cli::main()
}
