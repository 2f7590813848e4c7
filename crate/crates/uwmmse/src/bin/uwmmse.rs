fn main() -> std::process::ExitCode {
    uwmmse::cli::main_with(std::env::args_os())
}
