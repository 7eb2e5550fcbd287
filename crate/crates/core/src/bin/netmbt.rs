fn main() -> std::process::ExitCode {
    netmbt::cli::main()
}
