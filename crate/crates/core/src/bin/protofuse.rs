use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut stdout = std::io::stdout().lock();
    let code = protofuse::cli::run(std::env::args_os(), &mut stdout);
    ExitCode::from(code as u8)
}
