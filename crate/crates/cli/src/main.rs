fn main() {
    let argv: Vec<String> = std::env::args().collect();
    let code = match rankr_cli::parse_args(&argv) {
        Ok(cli) => rankr_cli::run(cli),
        Err(e) => {
            let _ = e.print();
            // help and version requests are not errors
            if e.use_stderr() {
                rankr_cli::EXIT_VALIDATION
            } else {
                rankr_cli::EXIT_OK
            }
        }
    };
    std::process::exit(code);
}
