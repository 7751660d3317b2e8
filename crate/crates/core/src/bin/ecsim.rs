use std::io::Write;

fn main() {
    let mut stdout = std::io::stdout().lock();
    let code = ecsim::cli::main_from_args(std::env::args_os(), &mut stdout);
    stdout.flush().expect("flush stdout");
    std::process::exit(code);
}
