fn main() -> std::process::ExitCode {
    iidcache::cli::main()
}
