fn main() {
    let args: Vec<String> = std::env::args().collect();
    let code = dersens_cli::main_with(&args, &mut std::io::stdout().lock(), &mut std::io::stderr().lock());
    std::process::exit(code);
}
