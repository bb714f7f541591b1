fn main() -> std::process::ExitCode {
    mixad::cli::init_logging();
    let code = mixad::cli::run(std::env::args_os());
    std::process::ExitCode::from(code as u8)
}
