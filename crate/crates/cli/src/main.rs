fn main() -> std::process::ExitCode {
    commtrace_cli::run()
}
