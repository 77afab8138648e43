fn main() {
    std::process::exit(llens::runner::cli_main(std::env::args_os()));
}
