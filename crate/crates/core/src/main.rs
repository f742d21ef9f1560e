fn main() -> std::process::ExitCode {
    webscatter::cli::main()
}
