fn main() -> std::process::ExitCode {
    pbm::cli::main()
}
