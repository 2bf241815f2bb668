fn main() {
    let (code, _) = randcarpet_cli::dispatch(std::env::args_os());
    std::process::exit(code);
}
