fn main() -> std::process::ExitCode {
    clahi::cli::main()
}
