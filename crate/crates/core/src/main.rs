use std::process::ExitCode;

fn main() -> ExitCode {
    if let Some(n) = std::env::var("IBFLOW_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let code = ibflow::cli::run_from(std::env::args_os());
    ExitCode::from(code.clamp(0, 255) as u8)
}
